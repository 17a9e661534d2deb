use memhom::cell::{minimize_cell, CellGrid, MinimizeOptions};
use memhom::exec::Exec;
use memhom::film::{film_energy, FilmMesh};
use memhom::homtable::{parse_table, tabulate_slice, CacheDefaults, SliceSpec, WHomCache};
use memhom::material::MaterialLaw;
use memhom::membrane::{membrane_energy, reduce_loads, LoadField, LoadSpec, MembraneMesh, Rect, ReducedLoad};
use memhom::tensor::{frobenius, Mat3x2, Vec3};
use proptest::prelude::*;

fn mat32(r: f64) -> impl Strategy<Value = Mat3x2> {
    prop::array::uniform6(-r..r).prop_map(Mat3x2::from_flat)
}

fn law() -> impl Strategy<Value = MaterialLaw> {
    prop_oneof![
        Just(MaterialLaw::homogeneous_quadratic()),
        (0.5..2.0f64, 2.0..5.0f64, 0.2..0.8f64).prop_map(|(a1, a2, t)| MaterialLaw::laminate(a1, a2, t).unwrap()),
        (0.5..2.0f64, 2.0..5.0f64).prop_map(|(a1, a2)| MaterialLaw::checkerboard(a1, a2, 2).unwrap()),
        (0.1..2.0f64).prop_map(|c| MaterialLaw::double_well(c).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cell_minimum_is_sandwiched(law in law(), xi in mat32(1.5)) {
        let grid = CellGrid::new(1, 4, 3).unwrap();
        let zero = memhom::cell::cell_energy(&law, [0.5, 0.5], &xi, &memhom::cell::CorrectorField::zeros(grid)).unwrap();
        let r = minimize_cell(&law, [0.5, 0.5], &xi, grid, &MinimizeOptions::default()).unwrap();
        let n = frobenius(&xi).powi(law.p() as i32);
        prop_assert!(r.value <= zero + 1e-12 * (1.0 + zero));
        prop_assert!(r.value >= n / law.beta() - law.beta());
    }

    #[test]
    fn homogeneous_quadratic_is_exact(xi in mat32(3.0)) {
        let law = MaterialLaw::homogeneous_quadratic();
        let r = minimize_cell(&law, [0.5, 0.5], &xi, CellGrid::new(2, 2, 3).unwrap(), &MinimizeOptions::default()).unwrap();
        let exact = frobenius(&xi).powi(2);
        prop_assert!((r.value - exact).abs() <= 1e-10 * (1.0 + exact));
    }

    #[test]
    fn film_energy_ignores_exec(seed in 0u64..1000, eps_k in 1usize..3) {
        let law = MaterialLaw::checkerboard(1.0, 3.0, 4).unwrap();
        let mesh = FilmMesh::new(Rect::default(), 8, 8, 4).unwrap();
        let eps = 1.0 / (2 * eps_k) as f64;
        let loads = LoadSpec { f: LoadField::Constant { value: [0.0, 0.2, 1.0] }, ..Default::default() };
        let u: Vec<Vec3> = mesh.reference_field(eps).into_iter().enumerate().map(|(n, v)| {
            if mesh.is_lateral(n) { v } else {
                let h = ((n as u64).wrapping_mul(2654435761) ^ seed) % 97;
                v + Vec3::new(0.0, 0.0, 0.001 * h as f64)
            }
        }).collect();
        let a = film_energy(&law, eps, &mesh, &u, &loads, Exec::Sequential).unwrap();
        let b = film_energy(&law, eps, &mesh, &u, &loads, Exec::Parallel).unwrap();
        prop_assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn load_reduction_is_linear(c in prop::array::uniform3(-2.0..2.0f64), g in prop::array::uniform3(-2.0..2.0f64), lambda in -3.0..3.0f64, x in prop::array::uniform2(0.0..1.0f64)) {
        let spec = |s: f64| LoadSpec {
            f: LoadField::Affine { value: c.map(|v| s * v), gradient: [[s, 0.0, 0.0], [0.0, 0.0, s], [0.0, s, 0.0]] },
            g_plus: LoadField::Constant { value: g.map(|v| s * v) },
            g_minus: LoadField::Zero,
        };
        let one = reduce_loads(&spec(1.0), 3).unwrap().eval(x);
        let scaled = reduce_loads(&spec(lambda), 3).unwrap().eval(x);
        prop_assert!(frobenius(&(scaled - lambda * one)) <= 1e-12 * (1.0 + frobenius(&scaled)));
    }

    #[test]
    fn convex_membrane_energy_is_minimal_at_affine(bumps in prop::collection::vec(prop::array::uniform3(-0.3..0.3f64), 30), n in 2usize..6) {
        let d = memhom::homtable::DiagonalQuadratic::laminate(1.0, 4.0, 0.5);
        let mesh = MembraneMesh::new(Rect { x: [0.0, 2.0], y: [0.0, 1.0] }, n, n + 1).unwrap();
        let v: Vec<Vec3> = mesh.affine_field().into_iter().enumerate().map(|(k, v)| {
            if mesh.is_boundary(k) { v } else { v + Vec3(bumps[k % bumps.len()]) }
        }).collect();
        let e = membrane_energy(&d, &mesh, &v, &ReducedLoad::zero(), Exec::Sequential).unwrap();
        let w = memhom::homtable::EffectiveDensity::value(&d, [0.0, 0.0], &Mat3x2::PLANAR).unwrap();
        prop_assert!(e.energy >= 2.0 * 2.0 * w - 1e-12);
    }
}

#[test]
fn table_roundtrips_through_json() {
    let law = MaterialLaw::laminate(1.0, 4.0, 0.5).unwrap();
    let cache = WHomCache::new(&law, CacheDefaults { t_max: 1, ..Default::default() });
    let slice = SliceSpec {
        base: Mat3x2::PLANAR.to_flat(),
        d1: Mat3x2::unit(0, 0).to_flat(),
        d2: Mat3x2::unit(2, 1).to_flat(),
        s_range: [-0.5, 0.5],
        t_range: [0.0, 1.0],
        n: 3,
    };
    let table = tabulate_slice(&law, &cache, [0.5, 0.5], &slice).unwrap();
    let text = serde_json::to_string_pretty(&table).unwrap();
    assert_eq!(parse_table(&text).unwrap(), table);
}
