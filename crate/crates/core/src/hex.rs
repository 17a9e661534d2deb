//! Uniform trilinear hexahedral grids and element assembly with 2×2×2
//! Gauss quadrature.
//!
//! Nodal fields are flat `[f64]` slices with three components per node.
//! Assembly computes per-element contributions (possibly in parallel) into a
//! scratch buffer, then gathers them per node in a fixed order, so results
//! are bit-identical for every worker count.

use crate::exec::{pairwise_sum, Exec};
use crate::tensor::{Mat3x3, Vec3};

const ELEMENT_CHUNK: usize = 256;
const NODE_CHUNK: usize = 512;

/// Box `origin + [0, n·h]` split into `n[0] × n[1] × n[2]` equal cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexGrid {
    pub cells: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

/// Gauss points and shape-function data of one (axis-aligned) element.
#[derive(Debug, Clone)]
pub struct RefHex {
    /// Gauss point offsets from the element's lower corner.
    pub offsets: [[f64; 3]; 8],
    /// `N_a(q)` indexed `[q][a]`.
    pub shape: [[f64; 8]; 8],
    /// `∇N_a(q)` indexed `[q][a]`.
    pub grad: [[[f64; 3]; 8]; 8],
    pub weight: f64,
}

/// Pointwise energy density of an assembled functional. Arguments are the
/// physical point, the interpolated field value and its gradient
/// `G[i][d] = ∂u_i/∂x_d`; the result is `(e, ∂e/∂G, ∂e/∂u)`.
pub trait Integrand: Sync {
    fn density(&self, point: [f64; 3], u: &Vec3, grad_u: &Mat3x3) -> (f64, Mat3x3, Vec3);
}

#[derive(Debug, Clone, Copy)]
struct ElementOut {
    energy: f64,
    grad: [[f64; 3]; 8],
}

impl Default for ElementOut {
    fn default() -> Self {
        ElementOut { energy: 0.0, grad: [[0.0; 3]; 8] }
    }
}

/// Reusable per-element buffers.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    elements: Vec<ElementOut>,
    energies: Vec<f64>,
}

pub fn gauss_1d() -> [f64; 2] {
    let g = 0.5 / 3f64.sqrt();
    [0.5 - g, 0.5 + g]
}

impl RefHex {
    pub fn new(spacing: [f64; 3]) -> Self {
        let g = gauss_1d();
        let mut offsets = [[0.0; 3]; 8];
        let mut shape = [[0.0; 8]; 8];
        let mut grad = [[[0.0; 3]; 8]; 8];
        for q in 0..8 {
            let local = [g[q & 1], g[(q >> 1) & 1], g[(q >> 2) & 1]];
            for d in 0..3 {
                offsets[q][d] = local[d] * spacing[d];
            }
            for a in 0..8 {
                let bits = [a & 1, (a >> 1) & 1, (a >> 2) & 1];
                let f = |d: usize| if bits[d] == 1 { local[d] } else { 1.0 - local[d] };
                let df = |d: usize| if bits[d] == 1 { 1.0 / spacing[d] } else { -1.0 / spacing[d] };
                shape[q][a] = f(0) * f(1) * f(2);
                grad[q][a] = [df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2)];
            }
        }
        let weight = spacing[0] * spacing[1] * spacing[2] / 8.0;
        RefHex { offsets, shape, grad, weight }
    }
}

impl HexGrid {
    pub fn nodes_per_axis(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    pub fn node_count(&self) -> usize {
        let n = self.nodes_per_axis();
        n[0] * n[1] * n[2]
    }

    pub fn element_count(&self) -> usize {
        self.cells[0] * self.cells[1] * self.cells[2]
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.nodes_per_axis();
        (k * n[1] + j) * n[0] + i
    }

    pub fn node_ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.nodes_per_axis();
        [idx % n[0], (idx / n[0]) % n[1], idx / (n[0] * n[1])]
    }

    pub fn node_coords(&self, idx: usize) -> [f64; 3] {
        let ijk = self.node_ijk(idx);
        [
            self.origin[0] + ijk[0] as f64 * self.spacing[0],
            self.origin[1] + ijk[1] as f64 * self.spacing[1],
            self.origin[2] + ijk[2] as f64 * self.spacing[2],
        ]
    }

    pub fn element_ijk(&self, e: usize) -> [usize; 3] {
        let c = self.cells;
        [e % c[0], (e / c[0]) % c[1], e / (c[0] * c[1])]
    }

    pub fn element_origin(&self, e: usize) -> [f64; 3] {
        let ijk = self.element_ijk(e);
        [
            self.origin[0] + ijk[0] as f64 * self.spacing[0],
            self.origin[1] + ijk[1] as f64 * self.spacing[1],
            self.origin[2] + ijk[2] as f64 * self.spacing[2],
        ]
    }

    /// Node indices of element `e`, local node `a` at offset bits `(a&1, a>>1&1, a>>2&1)`.
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let [i, j, k] = self.element_ijk(e);
        let mut out = [0; 8];
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self.node_index(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
        }
        out
    }

    pub fn reference(&self) -> RefHex {
        RefHex::new(self.spacing)
    }

    /// Field value and gradient at Gauss point `q` of element `e`.
    pub fn interpolate(&self, reference: &RefHex, field: &[f64], e: usize, q: usize) -> (Vec3, Mat3x3) {
        let nodes = self.element_nodes(e);
        let mut u = Vec3::ZERO;
        let mut g = Mat3x3::ZERO;
        for (a, &n) in nodes.iter().enumerate() {
            let va = &field[3 * n..3 * n + 3];
            let na = reference.shape[q][a];
            let dn = reference.grad[q][a];
            for i in 0..3 {
                u.0[i] += na * va[i];
                for d in 0..3 {
                    g.0[i][d] += va[i] * dn[d];
                }
            }
        }
        (u, g)
    }

    fn element_contribution<I: Integrand>(&self, reference: &RefHex, integrand: &I, field: &[f64], e: usize) -> ElementOut {
        let nodes = self.element_nodes(e);
        let corner = self.element_origin(e);
        let mut vals = [[0.0; 3]; 8];
        for (a, &n) in nodes.iter().enumerate() {
            vals[a].copy_from_slice(&field[3 * n..3 * n + 3]);
        }
        let mut out = ElementOut::default();
        let mut qe = [0.0; 8];
        for q in 0..8 {
            let mut u = Vec3::ZERO;
            let mut g = Mat3x3::ZERO;
            for a in 0..8 {
                let na = reference.shape[q][a];
                let dn = reference.grad[q][a];
                for i in 0..3 {
                    u.0[i] += na * vals[a][i];
                    for d in 0..3 {
                        g.0[i][d] += vals[a][i] * dn[d];
                    }
                }
            }
            let off = reference.offsets[q];
            let point = [corner[0] + off[0], corner[1] + off[1], corner[2] + off[2]];
            let (w, dg, du) = integrand.density(point, &u, &g);
            qe[q] = reference.weight * w;
            for a in 0..8 {
                let na = reference.shape[q][a];
                let dn = reference.grad[q][a];
                for i in 0..3 {
                    let s = dg.0[i][0] * dn[0] + dg.0[i][1] * dn[1] + dg.0[i][2] * dn[2] + du.0[i] * na;
                    out.grad[a][i] += reference.weight * s;
                }
            }
        }
        out.energy = qe.iter().sum();
        out
    }

    /// `Σ_e Σ_q w_q e(x_q, u_q, ∇u_q)`.
    pub fn assemble_energy<I: Integrand>(&self, integrand: &I, field: &[f64], scratch: &mut Scratch, exec: Exec) -> f64 {
        let reference = self.reference();
        scratch.energies.resize(self.element_count(), 0.0);
        exec.for_each_chunk_mut(&mut scratch.energies, ELEMENT_CHUNK, |ci, chunk| {
            for (k, slot) in chunk.iter_mut().enumerate() {
                let e = ci * ELEMENT_CHUNK + k;
                *slot = self.element_contribution(&reference, integrand, field, e).energy;
            }
        });
        pairwise_sum(&scratch.energies)
    }

    /// Energy and its gradient with respect to every nodal value.
    pub fn assemble<I: Integrand>(
        &self,
        integrand: &I,
        field: &[f64],
        grad: &mut [f64],
        scratch: &mut Scratch,
        exec: Exec,
    ) -> f64 {
        debug_assert_eq!(field.len(), 3 * self.node_count());
        debug_assert_eq!(grad.len(), field.len());
        let reference = self.reference();
        scratch.elements.resize(self.element_count(), ElementOut::default());
        exec.for_each_chunk_mut(&mut scratch.elements, ELEMENT_CHUNK, |ci, chunk| {
            for (k, slot) in chunk.iter_mut().enumerate() {
                let e = ci * ELEMENT_CHUNK + k;
                *slot = self.element_contribution(&reference, integrand, field, e);
            }
        });
        scratch.energies.clear();
        scratch.energies.extend(scratch.elements.iter().map(|o| o.energy));
        let energy = pairwise_sum(&scratch.energies);

        let elements = &scratch.elements;
        let cells = self.cells;
        exec.for_each_chunk_mut(grad, 3 * NODE_CHUNK, |ci, chunk| {
            for (k, g) in chunk.chunks_mut(3).enumerate() {
                let [i, j, kk] = self.node_ijk(ci * NODE_CHUNK + k);
                let mut acc = [0.0; 3];
                // adjacent elements in fixed (dk, dj, di) order
                for dk in 0..2 {
                    if (dk == 0 && kk == 0) || (dk == 1 && kk == cells[2]) {
                        continue;
                    }
                    for dj in 0..2 {
                        if (dj == 0 && j == 0) || (dj == 1 && j == cells[1]) {
                            continue;
                        }
                        for di in 0..2 {
                            if (di == 0 && i == 0) || (di == 1 && i == cells[0]) {
                                continue;
                            }
                            let (ei, ej, ek) = (i + di - 1, j + dj - 1, kk + dk - 1);
                            let e = (ek * cells[1] + ej) * cells[0] + ei;
                            let a = (1 - di) | ((1 - dj) << 1) | ((1 - dk) << 2);
                            for c in 0..3 {
                                acc[c] += elements[e].grad[a][c];
                            }
                        }
                    }
                }
                g.copy_from_slice(&acc);
            }
        });
        energy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dirichlet;

    impl Integrand for Dirichlet {
        fn density(&self, _p: [f64; 3], _u: &Vec3, g: &Mat3x3) -> (f64, Mat3x3, Vec3) {
            (g.dot(g), 2.0 * *g, Vec3::ZERO)
        }
    }

    struct Cubic;

    impl Integrand for Cubic {
        fn density(&self, p: [f64; 3], u: &Vec3, g: &Mat3x3) -> (f64, Mat3x3, Vec3) {
            let s = 1.0 + p[0] * p[2];
            let t = u.dot(u);
            let e = s * g.dot(g) * (1.0 + 0.1 * g.0[0][1]) + t * t;
            let mut dg = (2.0 * s * (1.0 + 0.1 * g.0[0][1])) * *g;
            dg.0[0][1] += s * 0.1 * g.dot(g);
            (e, dg, (4.0 * t) * *u)
        }
    }

    fn grid() -> HexGrid {
        HexGrid { cells: [3, 4, 2], origin: [0.0, -0.5, -1.0], spacing: [0.25, 0.3, 1.0] }
    }

    #[test]
    fn shape_functions_partition_unity() {
        let r = RefHex::new([0.5, 0.2, 2.0]);
        for q in 0..8 {
            let s: f64 = r.shape[q].iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            for d in 0..3 {
                let g: f64 = r.grad[q].iter().map(|v| v[d]).sum();
                assert!(g.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_field_energy_is_exact() {
        let grid = grid();
        let mut field = vec![0.0; 3 * grid.node_count()];
        for n in 0..grid.node_count() {
            let x = grid.node_coords(n);
            field[3 * n] = 2.0 * x[0] - x[2];
            field[3 * n + 2] = x[1];
        }
        let vol = 0.75 * 1.2 * 2.0;
        let e = grid.assemble_energy(&Dirichlet, &field, &mut Scratch::default(), Exec::Sequential);
        assert!((e - 6.0 * vol).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = grid();
        let field: Vec<f64> = (0..3 * grid.node_count()).map(|k| ((k * 37 % 11) as f64 * 0.1).sin()).collect();
        let mut grad = vec![0.0; field.len()];
        let mut scratch = Scratch::default();
        let e0 = grid.assemble(&Cubic, &field, &mut grad, &mut scratch, Exec::Sequential);
        assert_eq!(e0, grid.assemble_energy(&Cubic, &field, &mut scratch, Exec::Sequential));
        let h = 1e-6;
        for k in 0..field.len() {
            let mut a = field.clone();
            let mut b = field.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (grid.assemble_energy(&Cubic, &a, &mut scratch, Exec::Sequential)
                - grid.assemble_energy(&Cubic, &b, &mut scratch, Exec::Sequential))
                / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "dof {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn parallel_and_sequential_are_bit_identical() {
        let grid = HexGrid { cells: [17, 9, 5], origin: [0.0; 3], spacing: [0.1, 0.2, 0.4] };
        let field: Vec<f64> = (0..3 * grid.node_count()).map(|k| (k as f64 * 0.37).cos()).collect();
        let mut g1 = vec![0.0; field.len()];
        let mut g2 = vec![0.0; field.len()];
        let e1 = grid.assemble(&Cubic, &field, &mut g1, &mut Scratch::default(), Exec::Sequential);
        let e2 = grid.assemble(&Cubic, &field, &mut g2, &mut Scratch::default(), Exec::Parallel);
        assert_eq!(e1.to_bits(), e2.to_bits());
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn node_and_element_indexing() {
        let grid = grid();
        for n in 0..grid.node_count() {
            let [i, j, k] = grid.node_ijk(n);
            assert_eq!(grid.node_index(i, j, k), n);
        }
        let nodes = grid.element_nodes(grid.element_count() - 1);
        assert_eq!(nodes[7], grid.node_count() - 1);
    }
}
