//! The limiting membrane problem: minimize
//! `2∫_ω W_hom(x_α; D_α v) − ∫_ω r·v` over bilinear fields with `v = (x_α, 0)` on `∂ω`.

mod loads;

pub use loads::{gauss_legendre, reduce_loads, LoadField, LoadSpec, ReducedLoad};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::hex::gauss_1d;
use crate::homtable::EffectiveDensity;
use crate::optim::{minimize, LbfgsOptions, Objective, Status};
use crate::tensor::{Mat3x2, Vec3};

/// Axis-aligned rectangle `(x[0], x[1]) × (y[0], y[1])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for Rect {
    fn default() -> Self {
        Rect { x: [0.0, 1.0], y: [0.0, 1.0] }
    }
}

impl Rect {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[1] > r[0];
        if ok(self.x) && ok(self.y) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("degenerate rectangle {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        (self.x[1] - self.x[0]) * (self.y[1] - self.y[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembraneMesh {
    pub omega: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl MembraneMesh {
    pub fn new(omega: Rect, nx: usize, ny: usize) -> Result<Self> {
        omega.validate()?;
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidInput(format!("membrane mesh needs nx, ny >= 2, got {nx}×{ny}")));
        }
        Ok(MembraneMesh { omega, nx, ny })
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(Rect::default(), n, n)
    }

    pub fn spacing(&self) -> [f64; 2] {
        [(self.omega.x[1] - self.omega.x[0]) / self.nx as f64, (self.omega.y[1] - self.omega.y[0]) / self.ny as f64]
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_ij(&self, n: usize) -> [usize; 2] {
        [n % (self.nx + 1), n / (self.nx + 1)]
    }

    pub fn node_coords(&self, n: usize) -> [f64; 2] {
        let [i, j] = self.node_ij(n);
        let h = self.spacing();
        [self.omega.x[0] + i as f64 * h[0], self.omega.y[0] + j as f64 * h[1]]
    }

    pub fn is_boundary(&self, n: usize) -> bool {
        let [i, j] = self.node_ij(n);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&n| self.is_boundary(n)).collect()
    }

    /// Corners in order `(0,0), (1,0), (0,1), (1,1)`.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e % self.nx, e / self.nx);
        [self.node_index(i, j), self.node_index(i + 1, j), self.node_index(i, j + 1), self.node_index(i + 1, j + 1)]
    }

    /// `v = (x_α, 0)` at every node.
    pub fn affine_field(&self) -> Vec<Vec3> {
        (0..self.node_count())
            .map(|n| {
                let [x, y] = self.node_coords(n);
                Vec3::new(x, y, 0.0)
            })
            .collect()
    }

    fn check_field(&self, v: &[Vec3]) -> Result<()> {
        if v.len() != self.node_count() {
            return Err(Error::GridMismatch { expected: self.node_count(), got: v.len() });
        }
        for n in self.boundary_nodes() {
            let [x, y] = self.node_coords(n);
            if v[n] != Vec3::new(x, y, 0.0) {
                return Err(Error::BoundaryViolation { node: n });
            }
        }
        Ok(())
    }

    /// Value of a nodal field at `x`, bilinear on the containing element.
    pub fn interpolate(&self, v: &[Vec3], x: [f64; 2]) -> Vec3 {
        let h = self.spacing();
        let locate = |t: f64, lo: f64, h: f64, n: usize| {
            let u = ((t - lo) / h).clamp(0.0, n as f64);
            let i = (u.floor() as usize).min(n - 1);
            (i, u - i as f64)
        };
        let (i, a) = locate(x[0], self.omega.x[0], h[0], self.nx);
        let (j, b) = locate(x[1], self.omega.y[0], h[1], self.ny);
        let e = j * self.nx + i;
        let [n0, n1, n2, n3] = self.element_nodes(e);
        (1.0 - a) * (1.0 - b) * v[n0] + a * (1.0 - b) * v[n1] + (1.0 - a) * b * v[n2] + a * b * v[n3]
    }

    /// Gauss points of element `e`: physical point, weight, shape values and
    /// shape gradients of the four corners.
    fn quadrature(&self, e: usize) -> [QuadPoint; 4] {
        let h = self.spacing();
        let (i, j) = (e % self.nx, e / self.nx);
        let corner = [self.omega.x[0] + i as f64 * h[0], self.omega.y[0] + j as f64 * h[1]];
        let g = gauss_1d();
        let mut out = [QuadPoint::default(); 4];
        for (q, qp) in out.iter_mut().enumerate() {
            let (s, t) = (g[q & 1], g[q >> 1]);
            qp.x = [corner[0] + s * h[0], corner[1] + t * h[1]];
            qp.weight = 0.25 * h[0] * h[1];
            for a in 0..4 {
                let (ba, bb) = ((a & 1) as f64, (a >> 1) as f64);
                let fs = if ba == 1.0 { s } else { 1.0 - s };
                let ft = if bb == 1.0 { t } else { 1.0 - t };
                let ds = if ba == 1.0 { 1.0 } else { -1.0 } / h[0];
                let dt = if bb == 1.0 { 1.0 } else { -1.0 } / h[1];
                qp.shape[a] = fs * ft;
                qp.grad[a] = [ds * ft, fs * dt];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct QuadPoint {
    x: [f64; 2],
    weight: f64,
    shape: [f64; 4],
    grad: [[f64; 2]; 4],
}

fn eval_at(qp: &QuadPoint, nodes: &[usize; 4], v: &[Vec3]) -> (Vec3, Mat3x2) {
    let mut val = Vec3::ZERO;
    let mut d = Mat3x2::ZERO;
    for a in 0..4 {
        let va = v[nodes[a]];
        val += qp.shape[a] * va;
        for i in 0..3 {
            d.0[i][0] += va[i] * qp.grad[a][0];
            d.0[i][1] += va[i] * qp.grad[a][1];
        }
    }
    (val, d)
}

pub use crate::homtable::central_gradient as density_gradient;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub energy: f64,
    pub load_work: f64,
    pub total: f64,
}

struct Assembled {
    breakdown: EnergyBreakdown,
    grad: Option<Vec<Vec3>>,
}

fn assemble<D: EffectiveDensity + ?Sized>(
    density: &D,
    mesh: &MembraneMesh,
    v: &[Vec3],
    loads: &ReducedLoad,
    exec: Exec,
    with_grad: bool,
) -> Result<Assembled> {
    let per_element = exec.map_range(mesh.element_count(), |e| -> Result<_> {
        let nodes = mesh.element_nodes(e);
        let mut energy = [0.0; 4];
        let mut work = [0.0; 4];
        let mut grad = [Vec3::ZERO; 4];
        for (q, qp) in mesh.quadrature(e).iter().enumerate() {
            let (val, d) = eval_at(qp, &nodes, v);
            let r = if loads.is_zero() { Vec3::ZERO } else { loads.eval(qp.x) };
            work[q] = qp.weight * r.dot(&val);
            if !with_grad {
                energy[q] = 2.0 * qp.weight * density.value(qp.x, &d)?;
            } else {
                let (w, dw) = density.value_and_gradient(qp.x, &d)?;
                energy[q] = 2.0 * qp.weight * w;
                for a in 0..4 {
                    for i in 0..3 {
                        let s = dw.0[i][0] * qp.grad[a][0] + dw.0[i][1] * qp.grad[a][1];
                        grad[a].0[i] += qp.weight * (2.0 * s - r[i] * qp.shape[a]);
                    }
                }
            }
        }
        Ok((energy.iter().sum::<f64>(), work.iter().sum::<f64>(), grad))
    });
    let mut energies = Vec::with_capacity(per_element.len());
    let mut works = Vec::with_capacity(per_element.len());
    let mut grads = Vec::with_capacity(per_element.len());
    for r in per_element {
        let (e, w, g) = r?;
        energies.push(e);
        works.push(w);
        grads.push(g);
    }
    let energy = pairwise_sum(&energies);
    let load_work = pairwise_sum(&works);
    let grad = with_grad.then(|| {
        let mut out = vec![Vec3::ZERO; mesh.node_count()];
        for (e, g) in grads.iter().enumerate() {
            for (a, &n) in mesh.element_nodes(e).iter().enumerate() {
                out[n] += g[a];
            }
        }
        out
    });
    if !(energy.is_finite() && load_work.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(Assembled { breakdown: EnergyBreakdown { energy, load_work, total: energy - load_work }, grad })
}

/// `2 Σ_q w_q W_hom(x_q; D_α v) − Σ_q w_q r(x_q)·v(x_q)`.
pub fn membrane_energy<D: EffectiveDensity + ?Sized>(
    density: &D,
    mesh: &MembraneMesh,
    v: &[Vec3],
    loads: &ReducedLoad,
    exec: Exec,
) -> Result<EnergyBreakdown> {
    mesh.check_field(v)?;
    Ok(assemble(density, mesh, v, loads, exec, false)?.breakdown)
}

/// Total energy and its gradient with respect to every nodal value
/// (boundary entries included).
pub fn membrane_gradient<D: EffectiveDensity + ?Sized>(
    density: &D,
    mesh: &MembraneMesh,
    v: &[Vec3],
    loads: &ReducedLoad,
    exec: Exec,
) -> Result<(EnergyBreakdown, Vec<Vec3>)> {
    mesh.check_field(v)?;
    let out = assemble(density, mesh, v, loads, exec, true)?;
    Ok((out.breakdown, out.grad.expect("gradient requested")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MembraneOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for MembraneOptions {
    fn default() -> Self {
        let l = LbfgsOptions::default();
        MembraneOptions { grad_tol: l.grad_tol, max_iters: l.max_iters, memory: l.memory, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneState {
    pub mesh: MembraneMesh,
    pub v: Vec<Vec3>,
    pub energy: f64,
    pub load_work: f64,
    pub total: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub status: Status,
    pub converged: bool,
}

impl MembraneState {
    /// Membrane displacement at `x_α`.
    pub fn eval(&self, x: [f64; 2]) -> Vec3 {
        self.mesh.interpolate(&self.v, x)
    }

    /// `i,j,x1,x2,v3` for every node, rows ordered by `j` then `i`.
    pub fn v3_csv(&self) -> String {
        let mut out = String::from("i,j,x1,x2,v3\n");
        for (n, v) in self.v.iter().enumerate() {
            let [i, j] = self.mesh.node_ij(n);
            let [x, y] = self.mesh.node_coords(n);
            out.push_str(&format!("{i},{j},{x:?},{y:?},{:?}\n", v[2]));
        }
        out
    }
}

struct MembraneObjective<'a, D: ?Sized> {
    density: &'a D,
    mesh: &'a MembraneMesh,
    loads: &'a ReducedLoad,
    exec: Exec,
    boundary: Vec<bool>,
    field: Vec<Vec3>,
    error: Option<Error>,
}

impl<D: EffectiveDensity + ?Sized> Objective for MembraneObjective<'_, D> {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (v, c) in self.field.iter_mut().zip(x.chunks(3)) {
            v.0.copy_from_slice(c);
        }
        match assemble(self.density, self.mesh, &self.field, self.loads, self.exec, true) {
            Ok(out) => {
                let g = out.grad.expect("gradient requested");
                for (n, (dst, src)) in grad.chunks_mut(3).zip(&g).enumerate() {
                    if self.boundary[n] {
                        dst.fill(0.0);
                    } else {
                        dst.copy_from_slice(&src.0);
                    }
                }
                out.breakdown.total
            }
            Err(e) => {
                grad.fill(0.0);
                self.error.get_or_insert(e);
                f64::NAN
            }
        }
    }
}

/// Minimizes the membrane energy from the affine state `(x_α, 0)` with
/// boundary nodes pinned.
pub fn solve_membrane<D: EffectiveDensity + ?Sized>(
    density: &D,
    mesh: &MembraneMesh,
    loads: &ReducedLoad,
    opts: &MembraneOptions,
) -> Result<MembraneState> {
    let start = mesh.affine_field();
    let mut x: Vec<f64> = start.iter().flat_map(|v| v.0).collect();
    let mut objective = MembraneObjective {
        density,
        mesh,
        loads,
        exec: opts.exec,
        boundary: (0..mesh.node_count()).map(|n| mesh.is_boundary(n)).collect(),
        field: start,
        error: None,
    };
    let lbfgs = LbfgsOptions { grad_tol: opts.grad_tol, max_iters: opts.max_iters, memory: opts.memory };
    let outcome = minimize(&mut objective, &mut x, &lbfgs);
    if let Some(e) = objective.error {
        return Err(e);
    }
    let v: Vec<Vec3> = x.chunks(3).map(|c| Vec3([c[0], c[1], c[2]])).collect();
    let b = membrane_energy(density, mesh, &v, loads, opts.exec)?;
    if !outcome.converged() {
        log::warn!("membrane solve stopped with {:?} after {} iterations", outcome.status, outcome.iterations);
    }
    Ok(MembraneState {
        mesh: *mesh,
        v,
        energy: b.energy,
        load_work: b.load_work,
        total: b.total,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
        status: outcome.status,
        converged: outcome.converged(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homtable::DiagonalQuadratic;
    use crate::tensor::{frobenius, Frobenius};

    fn quad() -> DiagonalQuadratic {
        DiagonalQuadratic::norm_squared()
    }

    #[test]
    fn mesh_validation() {
        assert!(MembraneMesh::new(Rect { x: [0.0, 0.0], y: [0.0, 1.0] }, 4, 4).is_err());
        assert!(MembraneMesh::unit_square(1).is_err());
        let m = MembraneMesh::unit_square(4).unwrap();
        assert_eq!(m.boundary_nodes().len(), 16);
    }

    #[test]
    fn affine_energy_is_four() {
        let mesh = MembraneMesh::unit_square(4).unwrap();
        let b = membrane_energy(&quad(), &mesh, &mesh.affine_field(), &ReducedLoad::zero(), Exec::Sequential).unwrap();
        assert!((b.total - 4.0).abs() < 1e-14);
        let rect = MembraneMesh::new(Rect { x: [-1.0, 2.0], y: [0.0, 0.5] }, 3, 2).unwrap();
        let b = membrane_energy(&quad(), &rect, &rect.affine_field(), &ReducedLoad::zero(), Exec::Sequential).unwrap();
        assert!((b.total - 4.0 * 1.5).abs() < 1e-13);
    }

    #[test]
    fn boundary_violation_rejected() {
        let mesh = MembraneMesh::unit_square(3).unwrap();
        let mut v = mesh.affine_field();
        v[0][2] = 1e-3;
        assert!(matches!(
            membrane_energy(&quad(), &mesh, &v, &ReducedLoad::zero(), Exec::Sequential),
            Err(Error::BoundaryViolation { node: 0 })
        ));
    }

    /// Discrete Dirichlet energy `∫|∇φ|²` of a hat at one interior node.
    #[test]
    fn bump_adds_dirichlet_energy() {
        let mesh = MembraneMesh::unit_square(4).unwrap();
        let mut v = mesh.affine_field();
        let a = 0.3;
        v[mesh.node_index(2, 2)][2] = a;
        let b = membrane_energy(&quad(), &mesh, &v, &ReducedLoad::zero(), Exec::Sequential).unwrap();
        // Q1 stiffness diagonal is 8/3 on a square grid
        assert!((b.total - (4.0 + 2.0 * a * a * 8.0 / 3.0)).abs() < 1e-12, "{}", b.total);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = MembraneMesh::new(Rect { x: [0.0, 1.0], y: [0.0, 2.0] }, 3, 4).unwrap();
        let laminate = DiagonalQuadratic::laminate(1.0, 4.0, 0.5);
        let spec = LoadSpec {
            f: LoadField::Affine { value: [0.1, -0.2, 0.5], gradient: [[0.0, 1.0, 0.0], [0.3; 3], [1.0, 0.0, 2.0]] },
            ..Default::default()
        };
        let loads = reduce_loads(&spec, 3).unwrap();
        let mut v = mesh.affine_field();
        for (n, val) in v.iter_mut().enumerate() {
            if !mesh.is_boundary(n) {
                *val += Vec3::new(0.1 * (n as f64).sin(), 0.05 * n as f64, -0.2 * (n as f64).cos());
            }
        }
        let (_, g) = membrane_gradient(&laminate, &mesh, &v, &loads, Exec::Sequential).unwrap();
        let h = 1e-6;
        for n in (0..mesh.node_count()).filter(|&n| !mesh.is_boundary(n)) {
            for i in 0..3 {
                let mut p = v.clone();
                let mut m = v.clone();
                p[n][i] += h;
                m[n][i] -= h;
                let fp = assemble(&laminate, &mesh, &p, &loads, Exec::Sequential, false).unwrap().breakdown.total;
                let fm = assemble(&laminate, &mesh, &m, &loads, Exec::Sequential, false).unwrap().breakdown.total;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[n][i]).abs() <= 1e-6 * (1.0 + fd.abs()), "node {n} comp {i}: {fd} vs {}", g[n][i]);
            }
        }
    }

    #[test]
    fn laminate_affine_is_critical() {
        let mesh = MembraneMesh::unit_square(4).unwrap();
        let laminate = DiagonalQuadratic::laminate(1.0, 4.0, 0.5);
        let (_, g) = membrane_gradient(&laminate, &mesh, &mesh.affine_field(), &ReducedLoad::zero(), Exec::Sequential).unwrap();
        for n in (0..mesh.node_count()).filter(|&n| !mesh.is_boundary(n)) {
            assert!(frobenius(&g[n]) < 1e-10);
        }
    }

    #[test]
    fn unloaded_solve_is_affine() {
        let mesh = MembraneMesh::unit_square(4).unwrap();
        let s = solve_membrane(&quad(), &mesh, &ReducedLoad::zero(), &MembraneOptions::default()).unwrap();
        assert!(s.converged);
        assert!((s.total - 4.0).abs() < 1e-6);
        assert_eq!(s.v, mesh.affine_field());
    }

    fn vertical_load(lambda: f64) -> ReducedLoad {
        let spec = LoadSpec { g_plus: LoadField::Constant { value: [0.0, 0.0, lambda] }, ..Default::default() };
        reduce_loads(&spec, 2).unwrap()
    }

    /// Solves `A u = b` by Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    /// Normal equations of `2∫|∇w|² − λ∫w` over interior Q1 hats.
    fn poisson_oracle(mesh: &MembraneMesh, lambda: f64) -> Vec<f64> {
        let interior: Vec<usize> = (0..mesh.node_count()).filter(|&n| !mesh.is_boundary(n)).collect();
        let pos = |n: usize| interior.iter().position(|&m| m == n);
        let mut a = vec![vec![0.0; interior.len()]; interior.len()];
        let mut b = vec![0.0; interior.len()];
        for e in 0..mesh.element_count() {
            let nodes = mesh.element_nodes(e);
            for qp in mesh.quadrature(e) {
                for p in 0..4 {
                    let Some(r) = pos(nodes[p]) else { continue };
                    b[r] += qp.weight * lambda * qp.shape[p];
                    for q in 0..4 {
                        if let Some(c) = pos(nodes[q]) {
                            let d = qp.grad[p][0] * qp.grad[q][0] + qp.grad[p][1] * qp.grad[q][1];
                            a[r][c] += 4.0 * qp.weight * d;
                        }
                    }
                }
            }
        }
        let sol = dense_solve(a, b);
        let mut out = vec![0.0; mesh.node_count()];
        for (k, &n) in interior.iter().enumerate() {
            out[n] = sol[k];
        }
        out
    }

    #[test]
    fn loaded_solve_matches_linear_oracle() {
        let mesh = MembraneMesh::unit_square(6).unwrap();
        let opts = MembraneOptions { grad_tol: 1e-10, ..Default::default() };
        let mut totals = Vec::new();
        let mut deviations = Vec::new();
        for lambda in [0.0, 0.1, 0.2] {
            let s = solve_membrane(&quad(), &mesh, &vertical_load(lambda), &opts).unwrap();
            assert!(s.converged, "{s:?}");
            let oracle = poisson_oracle(&mesh, lambda);
            for n in 0..mesh.node_count() {
                assert!((s.v[n][2] - oracle[n]).abs() < 1e-9, "λ={lambda} node {n}");
                if lambda > 0.0 && !mesh.is_boundary(n) {
                    assert!(s.v[n][2] > 0.0);
                }
            }
            totals.push(s.total);
            deviations.push(s.v.iter().zip(mesh.affine_field()).map(|(a, b)| *a - b).collect::<Vec<_>>());
        }
        assert!(totals[1] < 4.0 && totals[2] < totals[1]);
        // linear deviation, concave quadratic total
        let num: f64 = deviations[2].iter().zip(&deviations[1]).map(|(a, b)| (*a - 2.0 * *b).norm_sq()).sum();
        let den: f64 = deviations[2].iter().map(|a| a.norm_sq()).sum();
        assert!((num / den).sqrt() < 1e-6);
        let second = totals[2] - 2.0 * totals[1] + totals[0];
        assert!(second < 0.0);
        assert!((totals[2] - 4.0 - 4.0 * (totals[1] - 4.0)).abs() < 1e-9);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let mesh = MembraneMesh::unit_square(5).unwrap();
        let loads = vertical_load(0.3);
        let mut v = mesh.affine_field();
        v[8][2] = 0.1;
        let (a, ga) = membrane_gradient(&quad(), &mesh, &v, &loads, Exec::Sequential).unwrap();
        let (b, gb) = membrane_gradient(&quad(), &mesh, &v, &loads, Exec::Parallel).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn interpolation_and_csv() {
        let mesh = MembraneMesh::unit_square(2).unwrap();
        let v = mesh.affine_field();
        let p = mesh.interpolate(&v, [0.3, 0.8]);
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let s = solve_membrane(&quad(), &mesh, &ReducedLoad::zero(), &MembraneOptions::default()).unwrap();
        let csv = s.v3_csv();
        assert!(csv.starts_with("i,j,x1,x2,v3\n0,0,0.0,0.0,0.0\n"));
        assert_eq!(csv.lines().count(), 10);
    }
}
