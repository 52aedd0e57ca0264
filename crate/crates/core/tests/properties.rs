use std::f64::consts::PI;
use std::sync::Arc;

use glbranch_core::bundle::{self, coulomb_project, make_constant_curvature_field, GaugeField};
use glbranch_core::energy::{gl_energy, modified_energy};
use glbranch_core::geometry::{build_icosphere, build_torus, DecMesh, Degree, GenusLabel};
use glbranch_core::reduction::{solve_branch_point, CouplingParams, ReductionSettings};
use glbranch_core::spectral::eigensolve;
use glbranch_core::verify::weak_residuals;
use num_complex::Complex64;
use proptest::prelude::*;

fn mesh_strategy() -> impl Strategy<Value = DecMesh> {
    prop_oneof![
        (4usize..14).prop_map(|n| build_torus(1.0, n).unwrap()),
        (1usize..4).prop_map(|k| build_icosphere(k).unwrap()),
    ]
}

fn reals(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

fn complexes(len: usize, scale: f64) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-scale..scale, -scale..scale).prop_map(|(r, i)| Complex64::new(r, i)), len)
}

fn torus_field(n: usize, degree: i64) -> GaugeField {
    make_constant_curvature_field(Arc::new(build_torus(1.0, n).unwrap()), degree).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mesh_structure(mesh in mesh_strategy(), seed in prop::collection::vec(-50i32..50, 700)) {
        let f: Vec<f64> = seed.iter().cycle().take(mesh.vertex_count()).map(|&v| v as f64).collect();
        prop_assert!(mesh.d1(&mesh.d0(&f)).iter().all(|&x| x == 0.0));
        prop_assert!(mesh.hodge0.iter().chain(&mesh.hodge1).chain(&mesh.hodge2).all(|&w| w > 0.0));
        let chi = match mesh.genus_label { GenusLabel::Torus => 0, GenusLabel::Sphere => 2 };
        prop_assert_eq!(mesh.euler_characteristic(), chi);
        let area: f64 = mesh.hodge0.iter().sum();
        prop_assert!((area - mesh.total_volume).abs() <= 1e-12 * area);
    }

    #[test]
    fn constant_curvature_fields(n in 4usize..16, degree in 0i64..5) {
        let field = torus_field(n, degree);
        let total: f64 = field.plaquette_flux.iter().sum();
        prop_assert!((total - 2.0 * PI * degree as f64).abs() <= 1e-10);
        prop_assert_eq!(field.chern_number().unwrap(), degree);
        for density in field.curvature_density() {
            prop_assert!((density - field.f0).abs() <= 1e-10 * field.f0.max(1.0));
        }
    }

    #[test]
    fn coulomb_projection_is_a_projector(n in 4usize..12, raw in reals(288, 3.0)) {
        let mesh = build_torus(1.0, n).unwrap();
        let a: Vec<f64> = raw.iter().cycle().take(mesh.edge_count()).copied().collect();
        let p = coulomb_project(&mesh, &a).unwrap();
        let pp = coulomb_project(&mesh, &p).unwrap();
        let scale = mesh.norm(Degree::One, &a).max(1e-300);
        let diff: Vec<f64> = p.iter().zip(pp.iter()).map(|(x, y)| x - y).collect();
        prop_assert!(mesh.norm(Degree::One, &diff) <= 1e-10 * scale);
        prop_assert!(mesh.norm(Degree::Zero, &mesh.delta1(&p)) <= 1e-10 * scale);
    }

    #[test]
    fn x_norm_is_gradient_plus_lp(n in 4usize..12, degree in 0i64..3, phi in complexes(144, 2.0), p in 2.5f64..8.0) {
        let field = torus_field(n, degree);
        let phi: Vec<Complex64> = phi.iter().cycle().take(field.vertex_count()).copied().collect();
        let norms = field.norms(&phi, p).unwrap();
        let grad = field.covariant_derivative(&phi, None).unwrap();
        let g = field.mesh.hodge1.iter().zip(&grad).map(|(w, d)| w * d.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((norms.x - g - field.norm_lp(&phi, p)).abs() <= 1e-12 * norms.x.max(1.0));
    }

    #[test]
    fn gauge_invariance(
        degree in 0i64..3,
        f in reals(64, 10.0),
        phi in complexes(64, 1.5),
        raw in reals(128, 0.4),
    ) {
        let field = torus_field(8, degree);
        let params = CouplingParams::new(0.8, 1.7, 4.0).unwrap();
        let a = coulomb_project(&field.mesh, &raw).unwrap().values;
        let moved = field.gauge_transform(&f).unwrap();
        let phi2 = bundle::gauge_transform_section(&phi, &f);
        prop_assert_eq!(moved.chern_number().unwrap(), field.chern_number().unwrap());
        for (x, y) in [
            (gl_energy(&field, &a, &phi, &params).unwrap().total, gl_energy(&moved, &a, &phi2, &params).unwrap().total),
            (modified_energy(&field, &a, &phi, &params).unwrap().total, modified_energy(&moved, &a, &phi2, &params).unwrap().total),
        ] {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
        let (r1, r2) = weak_residuals(&field, &a, &phi, &params).unwrap();
        let (s1, s2) = weak_residuals(&moved, &a, &phi2, &params).unwrap();
        prop_assert!((r1 - s1).abs() <= 1e-10 * r1.max(1.0) && (r2 - s2).abs() <= 1e-10 * r2.max(1.0));
    }

    #[test]
    fn spectral_pairs_are_accurate(n in 6usize..16, degree in 0i64..4) {
        let field = torus_field(n, degree);
        let spec = eigensolve(field.laplacian0(), 4).unwrap();
        let lambda_max = spec.eigenvalues.iter().fold(1.0f64, |m, v| m.max(*v));
        prop_assert!(spec.residuals.iter().all(|r| *r <= 1e-9 * lambda_max));
        prop_assert!(bundle::check_orthonormal(&field, &spec.eigenvectors, 1e-10).is_ok());
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn branch_point_invariants(scale in 0.05f64..0.4, kappa2 in 0.5f64..2.0) {
        let field = torus_field(10, 1);
        let spec = eigensolve(field.laplacian0(), 3).unwrap();
        let params = CouplingParams::new(kappa2, spec.lambda / kappa2, 4.0).unwrap();
        let point = solve_branch_point(&field, scale, &params, &spec, &ReductionSettings::default()).unwrap();
        prop_assert!((field.norm_l2(&point.phi_t) - 1.0).abs() <= 1e-12);
        for basis in spec.kernel_basis() {
            prop_assert!(field.inner0(basis, &point.psi_t).norm() <= 1e-10);
        }
        prop_assert_eq!(point.tau_t, spec.lambda / kappa2 + point.t * point.t * point.eps_t);
        prop_assert!(field.mesh.norm(Degree::Zero, &field.mesh.delta1(&point.a_t)) <= 1e-10 * field.mesh.norm(Degree::One, &point.a_t));
    }
}
