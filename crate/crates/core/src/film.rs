//! The rescaled 3D film energy
//! `I_ε(u) = ∫_Ω W(x, x_α/ε; D_α u | ε⁻¹ D₃ u) − ∫_Ω f·u − ∫_Σ g·u`
//! on `Ω = ω × (−1, 1)` with `u = (x_α, ε x₃)` on `∂ω × I`, and the
//! experiment comparing its minima with the membrane limit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::hex::{gauss_1d, HexGrid, Integrand, Scratch};
use crate::material::MaterialLaw;
use crate::membrane::{EnergyBreakdown, LoadField, LoadSpec, MembraneState, Rect};
use crate::optim::{minimize, LbfgsOptions, Objective, Status};
use crate::tensor::{frobenius, Mat3x3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilmMesh {
    pub omega: Rect,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl FilmMesh {
    pub fn new(omega: Rect, nx: usize, ny: usize, nz: usize) -> Result<Self> {
        omega.validate()?;
        if nx < 1 || ny < 1 || nz < 2 {
            return Err(Error::InvalidInput(format!("film mesh needs nx, ny >= 1 and nz >= 2, got {nx}×{ny}×{nz}")));
        }
        Ok(FilmMesh { omega, nx, ny, nz })
    }

    pub fn hex(&self) -> HexGrid {
        let o = &self.omega;
        HexGrid {
            cells: [self.nx, self.ny, self.nz],
            origin: [o.x[0], o.y[0], -1.0],
            spacing: [(o.x[1] - o.x[0]) / self.nx as f64, (o.y[1] - o.y[0]) / self.ny as f64, 2.0 / self.nz as f64],
        }
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    /// True on `∂ω × I`.
    pub fn is_lateral(&self, node: usize) -> bool {
        let [i, j, _] = self.hex().node_ijk(node);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// `u = (x_α, ε x₃)` at every node.
    pub fn reference_field(&self, eps: f64) -> Vec<Vec3> {
        let hex = self.hex();
        (0..self.node_count())
            .map(|n| {
                let [x, y, z] = hex.node_coords(n);
                Vec3::new(x, y, eps * z)
            })
            .collect()
    }

    fn check_field(&self, eps: f64, u: &[Vec3]) -> Result<()> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidInput(format!("eps must lie in (0, 1], got {eps}")));
        }
        if u.len() != self.node_count() {
            return Err(Error::GridMismatch { expected: self.node_count(), got: u.len() });
        }
        let hex = self.hex();
        for (n, v) in u.iter().enumerate() {
            if self.is_lateral(n) {
                let [x, y, z] = hex.node_coords(n);
                if *v != Vec3::new(x, y, eps * z) {
                    return Err(Error::BoundaryViolation { node: n });
                }
            }
        }
        Ok(())
    }
}

/// Body part of the film integrand: `W(x, x_α/ε; G·diag(1, 1, 1/ε)) − f·u`.
struct FilmIntegrand<'a> {
    law: &'a MaterialLaw,
    eps: f64,
    body: &'a LoadField,
    with_energy: bool,
}

impl Integrand for FilmIntegrand<'_> {
    fn density(&self, point: [f64; 3], u: &Vec3, g: &Mat3x3) -> (f64, Mat3x3, Vec3) {
        let mut out = (0.0, Mat3x3::ZERO, Vec3::ZERO);
        if self.with_energy {
            let mut f = *g;
            for row in f.0.iter_mut() {
                row[2] /= self.eps;
            }
            let y = [point[0] / self.eps, point[1] / self.eps];
            let (w, mut dw) = self.law.energy_and_gradient(point, y, &f);
            for row in dw.0.iter_mut() {
                row[2] /= self.eps;
            }
            out.0 = w;
            out.1 = dw;
        }
        if !self.body.is_zero() {
            let f = self.body.eval(point);
            out.0 -= f.dot(u);
            out.2 = -f;
        }
        out
    }
}

/// `∫_ω g⁺·u(·, 1) + g⁻·u(·, −1)` and its nodal gradient (added into `grad`).
fn surface_work(mesh: &FilmMesh, loads: &LoadSpec, u: &[Vec3], grad: Option<&mut [f64]>) -> f64 {
    if loads.g_plus.is_zero() && loads.g_minus.is_zero() {
        return 0.0;
    }
    let hex = mesh.hex();
    let h = hex.spacing;
    let g = gauss_1d();
    let w = 0.25 * h[0] * h[1];
    let mut terms = Vec::with_capacity(8 * mesh.nx * mesh.ny);
    let mut grad = grad;
    for (k, z, field) in [(0, -1.0, &loads.g_minus), (mesh.nz, 1.0, &loads.g_plus)] {
        if field.is_zero() {
            continue;
        }
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let nodes = [
                    hex.node_index(i, j, k),
                    hex.node_index(i + 1, j, k),
                    hex.node_index(i, j + 1, k),
                    hex.node_index(i + 1, j + 1, k),
                ];
                for q in 0..4 {
                    let (s, t) = (g[q & 1], g[q >> 1]);
                    let x = [hex.origin[0] + (i as f64 + s) * h[0], hex.origin[1] + (j as f64 + t) * h[1], z];
                    let shape = [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t];
                    let load = field.eval(x);
                    let mut val = Vec3::ZERO;
                    for a in 0..4 {
                        val += shape[a] * u[nodes[a]];
                    }
                    terms.push(w * load.dot(&val));
                    if let Some(gr) = grad.as_deref_mut() {
                        for a in 0..4 {
                            for c in 0..3 {
                                gr[3 * nodes[a] + c] -= w * shape[a] * load[c];
                            }
                        }
                    }
                }
            }
        }
    }
    pairwise_sum(&terms)
}

fn flat(u: &[Vec3]) -> Vec<f64> {
    u.iter().flat_map(|v| v.0).collect()
}

/// Stored energy, load work and `total = energy − load_work`.
pub fn film_energy(
    law: &MaterialLaw,
    eps: f64,
    mesh: &FilmMesh,
    u: &[Vec3],
    loads: &LoadSpec,
    exec: Exec,
) -> Result<EnergyBreakdown> {
    mesh.check_field(eps, u)?;
    let hex = mesh.hex();
    let field = flat(u);
    let mut scratch = Scratch::default();
    let zero = LoadField::Zero;
    let energy = hex.assemble_energy(&FilmIntegrand { law, eps, body: &zero, with_energy: true }, &field, &mut scratch, exec);
    let body = if loads.f.is_zero() {
        0.0
    } else {
        -hex.assemble_energy(&FilmIntegrand { law, eps, body: &loads.f, with_energy: false }, &field, &mut scratch, exec)
    };
    let load_work = body + surface_work(mesh, loads, u, None);
    if !(energy.is_finite() && load_work.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(EnergyBreakdown { energy, load_work, total: energy - load_work })
}

/// `∂ total / ∂ u` at every node (lateral entries included).
pub fn film_gradient(
    law: &MaterialLaw,
    eps: f64,
    mesh: &FilmMesh,
    u: &[Vec3],
    loads: &LoadSpec,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    mesh.check_field(eps, u)?;
    let field = flat(u);
    let mut grad = vec![0.0; field.len()];
    let total = total_and_gradient(law, eps, mesh, loads, &field, &mut grad, &mut Scratch::default(), exec);
    Ok((total, grad))
}

#[allow(clippy::too_many_arguments)]
fn total_and_gradient(
    law: &MaterialLaw,
    eps: f64,
    mesh: &FilmMesh,
    loads: &LoadSpec,
    field: &[f64],
    grad: &mut [f64],
    scratch: &mut Scratch,
    exec: Exec,
) -> f64 {
    let integrand = FilmIntegrand { law, eps, body: &loads.f, with_energy: true };
    let volume = mesh.hex().assemble(&integrand, field, grad, scratch, exec);
    let u: Vec<Vec3> = field.chunks(3).map(|c| Vec3([c[0], c[1], c[2]])).collect();
    volume - surface_work(mesh, loads, &u, Some(grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmState {
    pub mesh: FilmMesh,
    pub eps: f64,
    pub u: Vec<Vec3>,
    pub energy: f64,
    pub load_work: f64,
    pub total: f64,
}

impl FilmState {
    /// Validates the lateral condition and evaluates the energy of `u`.
    pub fn new(law: &MaterialLaw, eps: f64, mesh: FilmMesh, u: Vec<Vec3>, loads: &LoadSpec, exec: Exec) -> Result<Self> {
        let b = film_energy(law, eps, &mesh, &u, loads, exec)?;
        Ok(FilmState { mesh, eps, u, energy: b.energy, load_work: b.load_work, total: b.total })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilmOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FilmOptions {
    fn default() -> Self {
        let l = LbfgsOptions::default();
        FilmOptions { grad_tol: l.grad_tol, max_iters: l.max_iters, memory: l.memory, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmSolve {
    pub state: FilmState,
    pub iterations: usize,
    pub grad_norm: f64,
    pub status: Status,
    pub converged: bool,
}

/// Checks `ε = 1/k` and, for laws with coefficient jumps, that every jump
/// `(m + pos)·ε` falls on an element face.
pub fn validate_eps(law: &MaterialLaw, eps: f64, mesh: &FilmMesh) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1], got {eps}")));
    }
    let k = 1.0 / eps;
    if (k - k.round()).abs() > 1e-9 * k {
        return Err(Error::InvalidInput(format!("eps must be the reciprocal of an integer, got {eps}")));
    }
    let hex = mesh.hex();
    let integral = |v: f64| (v - v.round()).abs() < 1e-9;
    for iface in law.interfaces() {
        let (h, lo) = (hex.spacing[iface.axis], hex.origin[iface.axis]);
        if !integral(eps / h) || !integral((iface.pos * eps - lo) / h) {
            return Err(Error::InvalidInput(format!(
                "microstructure interfaces at eps={eps} do not align with the film mesh along axis {}",
                iface.axis
            )));
        }
    }
    Ok(())
}

struct FilmObjective<'a> {
    law: &'a MaterialLaw,
    eps: f64,
    mesh: &'a FilmMesh,
    loads: &'a LoadSpec,
    lateral: Vec<bool>,
    scratch: Scratch,
    exec: Exec,
}

impl Objective for FilmObjective<'_> {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let total = total_and_gradient(self.law, self.eps, self.mesh, self.loads, x, grad, &mut self.scratch, self.exec);
        for (g, &fixed) in grad.chunks_mut(3).zip(&self.lateral) {
            if fixed {
                g.fill(0.0);
            }
        }
        total
    }
}

/// Minimizes `I_ε` from `u = (x_α, ε x₃)` over the non-lateral nodes.
pub fn solve_eps(law: &MaterialLaw, eps: f64, mesh: &FilmMesh, loads: &LoadSpec, opts: &FilmOptions) -> Result<FilmSolve> {
    validate_eps(law, eps, mesh)?;
    loads.validate()?;
    let mut x = flat(&mesh.reference_field(eps));
    let mut objective = FilmObjective {
        law,
        eps,
        mesh,
        loads,
        lateral: (0..mesh.node_count()).map(|n| mesh.is_lateral(n)).collect(),
        scratch: Scratch::default(),
        exec: opts.exec,
    };
    let lbfgs = LbfgsOptions { grad_tol: opts.grad_tol, max_iters: opts.max_iters, memory: opts.memory };
    let outcome = minimize(&mut objective, &mut x, &lbfgs);
    let u: Vec<Vec3> = x.chunks(3).map(|c| Vec3([c[0], c[1], c[2]])).collect();
    let state = FilmState::new(law, eps, *mesh, u, loads, opts.exec)?;
    log::debug!("eps={eps}: total={} iterations={} status={:?}", state.total, outcome.iterations, outcome.status);
    Ok(FilmSolve {
        state,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
        status: outcome.status,
        converged: outcome.converged(),
    })
}

/// `max(0, total − reference_min)`.
pub fn almost_minimizer_gap(state: &FilmState, reference_min: f64) -> f64 {
    (state.total - reference_min).max(0.0)
}

/// `(Σ_q w_q |a(x_q)|^p)^{1/p}` over the Gauss points of the film mesh,
/// where `a` is built from the interpolated field value at each point.
fn lp_norm<F>(mesh: &FilmMesh, p: u32, field: &[f64], mut integrand: F) -> f64
where
    F: FnMut([f64; 3], Vec3) -> Vec3,
{
    let hex = mesh.hex();
    let reference = hex.reference();
    let mut terms = Vec::with_capacity(8 * hex.element_count());
    for e in 0..hex.element_count() {
        let corner = hex.element_origin(e);
        for q in 0..8 {
            let (u, _) = hex.interpolate(&reference, field, e, q);
            let off = reference.offsets[q];
            let x = [corner[0] + off[0], corner[1] + off[1], corner[2] + off[2]];
            terms.push(reference.weight * frobenius(&integrand(x, u)).powi(p as i32));
        }
    }
    pairwise_sum(&terms).powf(1.0 / p as f64)
}

/// `‖u − v‖_{L^p(Ω)}` with `v` extended constant in `x₃`.
pub fn lp_distance(mesh: &FilmMesh, u: &[Vec3], membrane: &MembraneState, p: u32) -> f64 {
    lp_norm(mesh, p, &flat(u), |x, val| val - membrane.eval([x[0], x[1]]))
}

/// `‖u − ū‖_{L^p(Ω)}`, `ū` the trapezoidal mean of `u` over each vertical node column.
pub fn x3_flatness(mesh: &FilmMesh, u: &[Vec3], p: u32) -> f64 {
    let hex = mesh.hex();
    let mut deviation = u.to_vec();
    for j in 0..=mesh.ny {
        for i in 0..=mesh.nx {
            let mut mean = Vec3::ZERO;
            for k in 0..=mesh.nz {
                let w = if k == 0 || k == mesh.nz { 0.5 } else { 1.0 } / mesh.nz as f64;
                mean += w * u[hex.node_index(i, j, k)];
            }
            for k in 0..=mesh.nz {
                deviation[hex.node_index(i, j, k)] -= mean;
            }
        }
    }
    lp_norm(mesh, p, &flat(&deviation), |_, val| val)
}

/// In-plane resolution and transverse refinement rule of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilmMeshSpec {
    pub omega: Rect,
    pub nx: usize,
    pub ny: usize,
    pub nz_min: usize,
    pub nz_cap: usize,
}

impl Default for FilmMeshSpec {
    fn default() -> Self {
        FilmMeshSpec { omega: Rect::default(), nx: 16, ny: 16, nz_min: 4, nz_cap: 64 }
    }
}

impl FilmMeshSpec {
    /// `n_z = max(nz_min, ⌈4/ε⌉)`, capped at `nz_cap`.
    pub fn nz(&self, eps: f64) -> usize {
        let wanted = (4.0 / eps - 1e-9).ceil() as usize;
        wanted.max(self.nz_min).min(self.nz_cap).max(2)
    }

    pub fn mesh(&self, eps: f64) -> Result<FilmMesh> {
        FilmMesh::new(self.omega, self.nx, self.ny, self.nz(eps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub eps: f64,
    pub nz: usize,
    pub min_total: f64,
    pub gap_to_membrane: f64,
    pub lp_distance: f64,
    pub x3_flatness: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    #[serde(default)]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub eps: Vec<f64>,
    pub p: u32,
    pub membrane_total: f64,
    pub rows: Vec<GammaRow>,
    /// `None` with fewer than two successful rows.
    pub totals_decreasing: Option<bool>,
    pub gap_decreasing: Option<bool>,
    pub flatness_decreasing: Option<bool>,
}

impl GammaReport {
    /// One row per ε: `eps,min_total,gap_to_membrane,lp_distance,iterations,converged`.
    pub fn csv_rows(&self) -> String {
        let mut out = String::from("eps,min_total,gap_to_membrane,lp_distance,iterations,converged\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{},{}\n",
                r.eps, r.min_total, r.gap_to_membrane, r.lp_distance, r.iterations, r.converged
            ));
        }
        out
    }
}

fn strictly_decreasing(values: &[f64]) -> Option<bool> {
    (values.len() >= 2).then(|| values.windows(2).all(|w| w[1] < w[0]))
}

/// Solves the film at every ε and compares with the membrane minimizer.
/// Failed ε-runs are kept as rows with a failure marker.
pub fn gamma_experiment(
    law: &MaterialLaw,
    eps_list: &[f64],
    mesh_spec: &FilmMeshSpec,
    loads: &LoadSpec,
    membrane: &MembraneState,
    opts: &FilmOptions,
) -> Result<GammaReport> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("eps list must be nonempty and strictly decreasing".into()));
    }
    for &eps in eps_list {
        validate_eps(law, eps, &mesh_spec.mesh(eps)?)?;
    }
    let p = law.p();
    let runs = opts.exec.map_range(eps_list.len(), |k| {
        let eps = eps_list[k];
        let mesh = mesh_spec.mesh(eps)?;
        solve_eps(law, eps, &mesh, loads, opts).map(|s| (mesh, s))
    });
    let mut rows = Vec::with_capacity(eps_list.len());
    for (&eps, run) in eps_list.iter().zip(runs) {
        rows.push(match run {
            Ok((mesh, s)) => GammaRow {
                eps,
                nz: mesh.nz,
                min_total: s.state.total,
                gap_to_membrane: (s.state.total - membrane.total).abs(),
                lp_distance: lp_distance(&mesh, &s.state.u, membrane, p),
                x3_flatness: x3_flatness(&mesh, &s.state.u, p),
                iterations: s.iterations,
                grad_norm: s.grad_norm,
                converged: s.converged,
                failure: None,
            },
            Err(e) => GammaRow {
                eps,
                nz: mesh_spec.nz(eps),
                min_total: f64::NAN,
                gap_to_membrane: f64::NAN,
                lp_distance: f64::NAN,
                x3_flatness: f64::NAN,
                iterations: 0,
                grad_norm: f64::NAN,
                converged: false,
                failure: Some(e.to_string()),
            },
        });
    }
    let ok: Vec<&GammaRow> = rows.iter().filter(|r| r.failure.is_none()).collect();
    let pick = |f: fn(&GammaRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
    Ok(GammaReport {
        eps: eps_list.to_vec(),
        p,
        membrane_total: membrane.total,
        totals_decreasing: strictly_decreasing(&pick(|r| r.min_total)),
        gap_decreasing: strictly_decreasing(&pick(|r| r.gap_to_membrane)),
        flatness_decreasing: strictly_decreasing(&pick(|r| r.x3_flatness)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homtable::DiagonalQuadratic;
    use crate::membrane::{solve_membrane, MembraneMesh, MembraneOptions, ReducedLoad};

    fn quad() -> MaterialLaw {
        MaterialLaw::homogeneous_quadratic()
    }

    fn mesh(n: usize, nz: usize) -> FilmMesh {
        FilmMesh::new(Rect::default(), n, n, nz).unwrap()
    }

    #[test]
    fn reference_state_energy_is_six() {
        for eps in [1.0, 0.25, 0.125] {
            let m = mesh(3, 4);
            let b = film_energy(&quad(), eps, &m, &m.reference_field(eps), &LoadSpec::default(), Exec::Sequential).unwrap();
            assert!((b.total - 6.0).abs() < 1e-12, "{b:?}");
        }
    }

    #[test]
    fn lateral_violation_rejected() {
        let m = mesh(2, 2);
        let flat_u: Vec<Vec3> = m.reference_field(0.0).into_iter().collect();
        assert!(matches!(
            FilmState::new(&quad(), 0.5, m, flat_u, &LoadSpec::default(), Exec::Sequential),
            Err(Error::BoundaryViolation { .. })
        ));
        assert!(film_energy(&quad(), 0.5, &m, &[Vec3::ZERO], &LoadSpec::default(), Exec::Sequential).is_err());
        assert!(FilmMesh::new(Rect::default(), 2, 2, 1).is_err());
    }

    #[test]
    fn vertical_body_load_does_no_work_on_reference() {
        let m = mesh(2, 4);
        let loads = LoadSpec { f: LoadField::Constant { value: [0.0, 0.0, 1.0] }, ..Default::default() };
        let b = film_energy(&quad(), 0.5, &m, &m.reference_field(0.5), &loads, Exec::Sequential).unwrap();
        assert!(b.load_work.abs() < 1e-15);
        assert!((b.total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let law = MaterialLaw::checkerboard(1.0, 3.0, 4).unwrap();
        let m = FilmMesh::new(Rect { x: [0.0, 1.0], y: [0.0, 1.0] }, 4, 4, 3).unwrap();
        let eps = 0.5;
        let loads = LoadSpec {
            f: LoadField::Affine { value: [0.2, 0.0, 1.0], gradient: [[0.0, 0.0, 1.0], [0.5, 0.0, 0.0], [0.0, 1.0, 0.3]] },
            g_plus: LoadField::Constant { value: [0.0, 0.1, 0.7] },
            g_minus: LoadField::Constant { value: [0.3, 0.0, -0.2] },
        };
        let mut u = m.reference_field(eps);
        for (n, v) in u.iter_mut().enumerate() {
            if !m.is_lateral(n) {
                *v += Vec3::new(0.05 * (n as f64).sin(), 0.03 * (n as f64 * 0.7).cos(), 0.04 * (n as f64 * 1.3).sin());
            }
        }
        let (_, g) = film_gradient(&law, eps, &m, &u, &loads, Exec::Sequential).unwrap();
        let h = 1e-6;
        for n in (0..m.node_count()).filter(|&n| !m.is_lateral(n)) {
            for c in 0..3 {
                let mut p = u.clone();
                let mut q = u.clone();
                p[n][c] += h;
                q[n][c] -= h;
                let fp = film_energy(&law, eps, &m, &p, &loads, Exec::Sequential).unwrap().total;
                let fm = film_energy(&law, eps, &m, &q, &loads, Exec::Sequential).unwrap().total;
                let fd = (fp - fm) / (2.0 * h);
                let gi = g[3 * n + c];
                assert!((fd - gi).abs() <= 1e-5 * fd.abs().max(gi.abs()).max(1e-3), "node {n} comp {c}: {fd} vs {gi}");
            }
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let m = mesh(6, 4);
        let law = MaterialLaw::laminate(1.0, 4.0, 0.5).unwrap();
        let mut u = m.reference_field(0.5);
        for (n, v) in u.iter_mut().enumerate() {
            if !m.is_lateral(n) {
                v.0[2] += 0.01 * n as f64;
            }
        }
        let (a, ga) = film_gradient(&law, 0.5, &m, &u, &LoadSpec::default(), Exec::Sequential).unwrap();
        let (b, gb) = film_gradient(&law, 0.5, &m, &u, &LoadSpec::default(), Exec::Parallel).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn eps_validation() {
        let m = mesh(8, 4);
        assert!(validate_eps(&quad(), 0.3, &m).is_err());
        assert!(validate_eps(&quad(), 0.0, &m).is_err());
        assert!(validate_eps(&quad(), 1.0 / 3.0, &m).is_ok());
        let lam = MaterialLaw::laminate(1.0, 4.0, 0.5).unwrap();
        assert!(validate_eps(&lam, 0.25, &m).is_ok());
        assert!(validate_eps(&lam, 0.125, &m).is_err());
        assert!(validate_eps(&lam, 1.0 / 3.0, &m).is_err());
    }

    #[test]
    fn solve_descends_and_stays_above_limit() {
        let m = mesh(4, 4);
        let s = solve_eps(&quad(), 1.0, &m, &LoadSpec::default(), &FilmOptions::default()).unwrap();
        assert!(s.converged);
        assert!(s.state.total <= 6.0 && s.state.total > 4.0, "{}", s.state.total);
        let loads = LoadSpec { f: LoadField::Constant { value: [0.0, 0.0, 1.0] }, ..Default::default() };
        let loaded = solve_eps(&quad(), 1.0, &m, &loads, &FilmOptions::default()).unwrap();
        assert!(loaded.state.total < s.state.total);
        for (n, v) in loaded.state.u.iter().enumerate() {
            if m.is_lateral(n) {
                assert_eq!(*v, m.reference_field(1.0)[n]);
            }
        }
    }

    #[test]
    fn gap_clamps() {
        let m = mesh(2, 2);
        let st = FilmState::new(&quad(), 0.5, m, m.reference_field(0.5), &LoadSpec::default(), Exec::Sequential).unwrap();
        assert_eq!(almost_minimizer_gap(&st, st.total), 0.0);
        assert_eq!(almost_minimizer_gap(&st, st.total + 1.0), 0.0);
        assert!((almost_minimizer_gap(&st, 5.5) - (st.total - 5.5)).abs() < 1e-15);
    }

    #[test]
    fn flatness_and_distance_of_reference() {
        let m = mesh(2, 4);
        let u = m.reference_field(0.5);
        // ‖ε x₃ e₃‖_{L²(Ω)} = ε √(2/3)
        let expected = 0.5 * (2.0f64 / 3.0).sqrt();
        assert!((x3_flatness(&m, &u, 2) - expected).abs() < 1e-12);
        let mm = MembraneMesh::unit_square(2).unwrap();
        let membrane =
            solve_membrane(&DiagonalQuadratic::norm_squared(), &mm, &ReducedLoad::zero(), &MembraneOptions::default()).unwrap();
        assert!((lp_distance(&m, &u, &membrane, 2) - expected).abs() < 1e-12);
    }

    #[test]
    fn small_gamma_experiment() {
        let mm = MembraneMesh::unit_square(2).unwrap();
        let membrane =
            solve_membrane(&DiagonalQuadratic::norm_squared(), &mm, &ReducedLoad::zero(), &MembraneOptions::default()).unwrap();
        let spec = FilmMeshSpec { nx: 4, ny: 4, nz_cap: 8, ..Default::default() };
        let report =
            gamma_experiment(&quad(), &[1.0, 0.5], &spec, &LoadSpec::default(), &membrane, &FilmOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.totals_decreasing, Some(true));
        assert!(report.csv_rows().starts_with("eps,min_total,gap_to_membrane,lp_distance,iterations,converged\n1.0,"));
        let single = gamma_experiment(&quad(), &[0.5], &spec, &LoadSpec::default(), &membrane, &FilmOptions::default()).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.gap_decreasing, None);
        assert!(gamma_experiment(&quad(), &[0.5, 1.0], &spec, &LoadSpec::default(), &membrane, &FilmOptions::default()).is_err());
    }

    #[test]
    fn nz_rule() {
        let spec = FilmMeshSpec { nz_cap: 24, ..Default::default() };
        assert_eq!(spec.nz(1.0), 4);
        assert_eq!(spec.nz(0.5), 8);
        assert_eq!(spec.nz(0.125), 24);
        assert_eq!(FilmMeshSpec::default().nz(0.125), 32);
    }
}
