//! Discrete cell problem on `(0,T)² × (−1,1)`.
//!
//! The corrector `φ` is trilinear on a uniform grid with `n_per_unit`
//! elements per unit length in-plane and `n_thick` nodes across the
//! thickness. It vanishes on the lateral boundary `∂(0,T)² × I`; the top and
//! bottom faces are free. The cell energy is normalized by the cell volume
//! `2T²`, so its infimum over `φ` is `μ((0,T)²)/T²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hex::{HexGrid, Integrand, Scratch};
use crate::material::MaterialLaw;
use crate::optim::{self, LbfgsOptions, Objective, Status};
use crate::tensor::{compose, frobenius, Mat3x2, Mat3x3, Vec3};

/// Default cap on grid nodes for a single cell solve.
pub const DEFAULT_NODE_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub t: usize,
    pub n_per_unit: usize,
    pub n_thick: usize,
}

impl CellGrid {
    pub fn new(t: usize, n_per_unit: usize, n_thick: usize) -> Result<Self> {
        if t < 1 || n_per_unit < 2 || n_thick < 3 {
            return Err(Error::InvalidInput(format!(
                "cell grid needs T >= 1, n_per_unit >= 2, n_thick >= 3 (got {t}, {n_per_unit}, {n_thick})"
            )));
        }
        Ok(CellGrid { t, n_per_unit, n_thick })
    }

    /// Number of elements along each in-plane side.
    pub fn side(&self) -> usize {
        self.t * self.n_per_unit
    }

    pub fn in_plane_nodes(&self) -> usize {
        (self.side() + 1).pow(2)
    }

    pub fn node_count(&self) -> usize {
        self.in_plane_nodes() * self.n_thick
    }

    pub fn hex(&self) -> HexGrid {
        let h = 1.0 / self.n_per_unit as f64;
        HexGrid {
            cells: [self.side(), self.side(), self.n_thick - 1],
            origin: [0.0, 0.0, -1.0],
            spacing: [h, h, 2.0 / (self.n_thick - 1) as f64],
        }
    }

    pub fn is_lateral(&self, node: usize) -> bool {
        let s = self.side() + 1;
        let i = node % s;
        let j = (node / s) % s;
        i == 0 || j == 0 || i == s - 1 || j == s - 1
    }

    /// The grid with doubled `T` and the same resolution.
    pub fn doubled(&self) -> CellGrid {
        CellGrid { t: 2 * self.t, ..*self }
    }
}

/// Nodal corrector values, zero on the lateral boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    grid: CellGrid,
    values: Vec<f64>,
}

impl CorrectorField {
    pub fn zeros(grid: CellGrid) -> Self {
        CorrectorField { grid, values: vec![0.0; 3 * grid.node_count()] }
    }

    /// Wraps flat nodal values (three per node), rejecting nonzero lateral values.
    pub fn from_values(grid: CellGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != 3 * grid.node_count() {
            return Err(Error::GridMismatch { expected: grid.node_count(), got: values.len() / 3 });
        }
        for node in (0..grid.node_count()).filter(|&n| grid.is_lateral(n)) {
            if values[3 * node..3 * node + 3].iter().any(|&v| v != 0.0) {
                return Err(Error::BoundaryViolation { node });
            }
        }
        Ok(CorrectorField { grid, values })
    }

    pub fn grid(&self) -> CellGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, n: usize) -> Vec3 {
        Vec3([self.values[3 * n], self.values[3 * n + 1], self.values[3 * n + 2]])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Four translated copies on the `2T` cell. Admissible because the
    /// lateral traces vanish.
    pub fn tiled(&self) -> CorrectorField {
        let big = self.grid.doubled();
        let small_side = self.grid.side();
        let (sn, bn) = (small_side + 1, big.side() + 1);
        let mut values = vec![0.0; 3 * big.node_count()];
        for k in 0..big.n_thick {
            for j in 0..bn {
                for i in 0..bn {
                    let src = (k * sn + j % small_side) * sn + i % small_side;
                    let dst = (k * bn + j) * bn + i;
                    values[3 * dst..3 * dst + 3].copy_from_slice(&self.values[3 * src..3 * src + 3]);
                }
            }
        }
        CorrectorField { grid: big, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub multistart: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { grad_tol: 1e-8, max_iters: 5000, memory: 10, multistart: 1, seed: 0, exec: Exec::default() }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || self.max_iters < 1 || self.multistart < 1 {
            return Err(Error::InvalidInput("need grad_tol > 0, max_iters >= 1, multistart >= 1".into()));
        }
        Ok(())
    }

    pub fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions { grad_tol: self.grad_tol, max_iters: self.max_iters, memory: self.memory }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub value: f64,
    pub corrector: CorrectorField,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub status: Status,
}

struct CellIntegrand<'a> {
    law: &'a MaterialLaw,
    x_alpha: [f64; 2],
    affine: Mat3x3,
}

impl Integrand for CellIntegrand<'_> {
    #[inline]
    fn density(&self, point: [f64; 3], _u: &Vec3, grad_u: &Mat3x3) -> (f64, Mat3x3, Vec3) {
        let f = self.affine + *grad_u;
        let x = [self.x_alpha[0], self.x_alpha[1], point[2]];
        let (w, g) = self.law.energy_and_gradient(x, [point[0], point[1]], &f);
        (w, g, Vec3::ZERO)
    }
}

struct CellObjective<'a> {
    hex: HexGrid,
    integrand: CellIntegrand<'a>,
    scale: f64,
    lateral_dofs: Vec<usize>,
    scratch: Scratch,
    exec: Exec,
}

impl<'a> CellObjective<'a> {
    fn new(law: &'a MaterialLaw, x_alpha: [f64; 2], xi_bar: &Mat3x2, grid: CellGrid, exec: Exec) -> Self {
        let lateral_dofs =
            (0..grid.node_count()).filter(|&n| grid.is_lateral(n)).flat_map(|n| [3 * n, 3 * n + 1, 3 * n + 2]).collect();
        CellObjective {
            hex: grid.hex(),
            integrand: CellIntegrand { law, x_alpha, affine: compose(xi_bar, &Vec3::ZERO) },
            scale: 1.0 / (2.0 * (grid.t * grid.t) as f64),
            lateral_dofs,
            scratch: Scratch::default(),
            exec,
        }
    }

    fn energy(&mut self, x: &[f64]) -> f64 {
        self.scale * self.hex.assemble_energy(&self.integrand, x, &mut self.scratch, self.exec)
    }
}

impl Objective for CellObjective<'_> {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let e = self.hex.assemble(&self.integrand, x, grad, &mut self.scratch, self.exec);
        for g in grad.iter_mut() {
            *g *= self.scale;
        }
        for &d in &self.lateral_dofs {
            grad[d] = 0.0;
        }
        self.scale * e
    }
}

fn check_inputs(xi_bar: &Mat3x2, x_alpha: [f64; 2]) -> Result<()> {
    if !xi_bar.is_finite() || !x_alpha.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// `(1/(2T²)) Σ_q w_q W(x_α, y₃; y_α; (ξ̄ + D_αφ | D₃φ))`.
pub fn cell_energy(law: &MaterialLaw, x_alpha: [f64; 2], xi_bar: &Mat3x2, phi: &CorrectorField) -> Result<f64> {
    check_inputs(xi_bar, x_alpha)?;
    let mut obj = CellObjective::new(law, x_alpha, xi_bar, phi.grid, Exec::default());
    Ok(obj.energy(&phi.values))
}

/// Gradient of [`cell_energy`] with respect to the nodal corrector values,
/// zero on lateral nodes.
pub fn cell_gradient(law: &MaterialLaw, x_alpha: [f64; 2], xi_bar: &Mat3x2, phi: &CorrectorField) -> Result<CorrectorField> {
    check_inputs(xi_bar, x_alpha)?;
    let mut obj = CellObjective::new(law, x_alpha, xi_bar, phi.grid, Exec::default());
    let mut grad = vec![0.0; phi.values.len()];
    obj.evaluate(&phi.values, &mut grad);
    Ok(CorrectorField { grid: phi.grid, values: grad })
}

/// `∂/∂ξ̄` of [`cell_energy`] at fixed `φ`. At a minimizer this is the
/// `ξ̄`-gradient of the cell minimum.
pub fn cell_stress(law: &MaterialLaw, x_alpha: [f64; 2], xi_bar: &Mat3x2, phi: &CorrectorField) -> Result<Mat3x2> {
    check_inputs(xi_bar, x_alpha)?;
    let mut obj = CellObjective::new(law, x_alpha, xi_bar, phi.grid, Exec::default());
    let mut grad = vec![0.0; phi.values.len()];
    obj.hex.assemble(&obj.integrand, &phi.values, &mut grad, &mut obj.scratch, obj.exec);
    // a unit change of ξ̄_iα is the nodal field y_α e_i
    let mut out = Mat3x2::ZERO;
    for n in 0..obj.hex.node_count() {
        let y = obj.hex.node_coords(n);
        for i in 0..3 {
            for a in 0..2 {
                out.0[i][a] += grad[3 * n + i] * y[a];
            }
        }
    }
    Ok(obj.scale * out)
}

/// Per-start seed derived from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn random_start(grid: CellGrid, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; 3 * grid.node_count()];
    for n in 0..grid.node_count() {
        if grid.is_lateral(n) {
            continue;
        }
        for v in &mut values[3 * n..3 * n + 3] {
            *v = rng.gen_range(-amplitude..=amplitude);
        }
    }
    values
}

/// Minimizes the cell energy from `φ = 0` and `multistart − 1` seeded
/// random lateral-zero fields, keeping the lowest energy.
pub fn minimize_cell(
    law: &MaterialLaw,
    x_alpha: [f64; 2],
    xi_bar: &Mat3x2,
    grid: CellGrid,
    opts: &MinimizeOptions,
) -> Result<CellResult> {
    minimize_cell_from(law, x_alpha, xi_bar, grid, opts, None)
}

/// As [`minimize_cell`] with an extra starting field (e.g. a tiled
/// corrector from a smaller cell).
pub fn minimize_cell_from(
    law: &MaterialLaw,
    x_alpha: [f64; 2],
    xi_bar: &Mat3x2,
    grid: CellGrid,
    opts: &MinimizeOptions,
    warm: Option<&CorrectorField>,
) -> Result<CellResult> {
    check_inputs(xi_bar, x_alpha)?;
    opts.validate()?;
    if let Some(w) = warm {
        if w.grid != grid {
            return Err(Error::GridMismatch { expected: grid.node_count(), got: w.grid.node_count() });
        }
    }
    if !law.interfaces_aligned(grid.n_per_unit as f64) {
        log::warn!("coefficient interfaces do not fall on element faces for n_per_unit={}", grid.n_per_unit);
    }
    let amplitude = 0.1 * (1.0 + frobenius(xi_bar));
    let n_starts = opts.multistart + usize::from(warm.is_some());
    let lbfgs = opts.lbfgs();

    let runs = opts.exec.map_range(n_starts, |start| {
        let mut x = match (start, warm) {
            (0, _) => vec![0.0; 3 * grid.node_count()],
            (1, Some(w)) => w.values.clone(),
            _ => random_start(grid, amplitude, derive_seed(opts.seed, start as u64)),
        };
        let mut obj = CellObjective::new(law, x_alpha, xi_bar, grid, opts.exec);
        let out = optim::minimize(&mut obj, &mut x, &lbfgs);
        (out, x)
    });

    // lowest value wins, earliest start on ties
    let (out, values) = runs
        .into_iter()
        .filter(|(o, _)| o.value.is_finite())
        .reduce(|best, cand| if cand.0.value < best.0.value { cand } else { best })
        .ok_or(Error::NonFinite)?;
    Ok(CellResult {
        value: out.value,
        corrector: CorrectorField { grid, values },
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        converged: out.converged(),
        status: out.status,
    })
}

/// Resolution shared by every cell of a T sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellDiscretization {
    pub n_per_unit: usize,
    pub n_thick: usize,
    pub node_budget: usize,
}

impl Default for CellDiscretization {
    fn default() -> Self {
        CellDiscretization { n_per_unit: 8, n_thick: 5, node_budget: DEFAULT_NODE_BUDGET }
    }
}

impl CellDiscretization {
    pub fn grid(&self, t: usize) -> Result<CellGrid> {
        let grid = CellGrid::new(t, self.n_per_unit, self.n_thick)?;
        if grid.node_count() > self.node_budget {
            return Err(Error::BudgetExceeded { nodes: grid.node_count(), cap: self.node_budget });
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhomEstimate {
    /// Minimum over the trace.
    pub value: f64,
    /// `∂W_hom/∂ξ̄` on the cell attaining `value`.
    pub gradient: Mat3x2,
    pub trace: Vec<TracePoint>,
    /// Whether the last doubling changed the value by at most `rtol`.
    pub converged_in_t: bool,
    /// Whether every cell solve met its gradient tolerance.
    pub solves_converged: bool,
}

/// Estimates `W_hom(x_α; ξ̄)` by cells `T = 1, 2, 4, …, t_max` at fixed
/// resolution. Each cell also starts from the tiled corrector of the
/// previous one, so the trace is nonincreasing up to solver tolerance.
pub fn whom_estimate(
    law: &MaterialLaw,
    x_alpha: [f64; 2],
    xi_bar: &Mat3x2,
    disc: &CellDiscretization,
    t_max: usize,
    rtol: f64,
    opts: &MinimizeOptions,
) -> Result<WhomEstimate> {
    if !t_max.is_power_of_two() {
        return Err(Error::InvalidInput(format!("T_max must be a power of two, got {t_max}")));
    }
    if !(rtol > 0.0) {
        return Err(Error::InvalidInput("rtol must be positive".into()));
    }
    disc.grid(t_max)?;

    let mut trace = Vec::new();
    let mut previous: Option<CorrectorField> = None;
    let mut best: Option<(f64, CorrectorField)> = None;
    let mut t = 1;
    while t <= t_max {
        let grid = disc.grid(t)?;
        let warm = previous.as_ref().map(CorrectorField::tiled);
        let run_opts = MinimizeOptions { seed: derive_seed(opts.seed, 1000 + t as u64), ..*opts };
        let res = minimize_cell_from(law, x_alpha, xi_bar, grid, &run_opts, warm.as_ref())?;
        log::debug!("T={t}: value={} iterations={} converged={}", res.value, res.iterations, res.converged);
        trace.push(TracePoint {
            t,
            value: res.value,
            iterations: res.iterations,
            grad_norm: res.grad_norm,
            converged: res.converged,
        });
        if best.as_ref().is_none_or(|(v, _)| res.value < *v) {
            best = Some((res.value, res.corrector.clone()));
        }
        previous = Some(res.corrector);
        t *= 2;
    }
    let converged_in_t = match trace.as_slice() {
        [.., a, b] => (b.value - a.value).abs() <= rtol * (1.0 + a.value.abs()),
        _ => false,
    };
    let (value, corrector) = best.expect("at least one cell");
    let gradient = cell_stress(law, x_alpha, xi_bar, &corrector)?;
    let solves_converged = trace.iter().all(|p| p.converged);
    Ok(WhomEstimate { value, gradient, trace, converged_in_t, solves_converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityReport {
    /// `(2T)² · value(2T)`, the discrete `μ((0,2T)²)`.
    pub lhs: f64,
    /// `4 T² · value(T)`, i.e. `4 μ((0,T)²)`.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    pub value_t: f64,
    pub value_2t: f64,
    /// Normalized cell energy of the tiled `T` corrector on the `2T` grid.
    pub tiled_value: f64,
    pub tiling_rel_err: f64,
}

/// Compares `μ((0,2T)²)` with `4 μ((0,T)²)` on nested grids.
pub fn subadditivity_check(
    law: &MaterialLaw,
    x_alpha: [f64; 2],
    xi_bar: &Mat3x2,
    t: usize,
    disc: &CellDiscretization,
    opts: &MinimizeOptions,
) -> Result<SubadditivityReport> {
    let small = disc.grid(t)?;
    let big = disc.grid(2 * t)?;
    let res_t = minimize_cell(law, x_alpha, xi_bar, small, opts)?;
    let tiled = res_t.corrector.tiled();
    let tiled_value = cell_energy(law, x_alpha, xi_bar, &tiled)?;
    let res_2t = minimize_cell_from(law, x_alpha, xi_bar, big, opts, Some(&tiled))?;

    let t2 = (t * t) as f64;
    let lhs = 4.0 * t2 * res_2t.value;
    let rhs = 4.0 * t2 * res_t.value;
    let slack = 4.0 * opts.grad_tol * (1.0 + rhs.abs());
    let denom = res_t.value.abs().max(tiled_value.abs());
    let tiling_rel_err = if denom == 0.0 { 0.0 } else { (tiled_value - res_t.value).abs() / denom };
    Ok(SubadditivityReport {
        lhs,
        rhs,
        slack,
        holds: lhs <= rhs + slack,
        value_t: res_t.value,
        value_2t: res_2t.value,
        tiled_value,
        tiling_rel_err,
    })
}
