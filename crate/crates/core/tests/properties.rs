//! Property tests of the geometric, integrand and functional invariants.

use proptest::prelude::*;
use thinhom::cell::{solve_cell, CellProblemConfig};
use thinhom::config::RunConfig;
use thinhom::extrapolate::extrapolate;
use thinhom::functional::{eval_thin, Rect, ThinField3D};
use thinhom::grid::Quadrature;
use thinhom::integrand::{Builtin, ExtendedIntegrand, IntegrandSpec};
use thinhom::jump::{theta, JumpProblemConfig};
use thinhom::manifold::{ManifoldKind, ManifoldSpec};
use thinhom::provenance::config_hash;
use thinhom::{Mat3, Mat3x2, Vec2, Vec3};

fn sphere_point() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    })
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn mat3(r: f64) -> impl Strategy<Value = Mat3> {
    proptest::collection::vec(-r..r, 9).prop_map(|v| Mat3::from_column_slice(&v))
}

fn builtin() -> impl Strategy<Value = Builtin> {
    prop_oneof![
        Just(Builtin::Norm),
        Just(Builtin::SmoothLinear),
        (1.0f64..3.0, 0.5f64..1.5).prop_map(|(a1, a2)| Builtin::TwoPhase { a1, a2 }),
        (1.0f64..2.0, 0.0f64..0.9).prop_map(|(c0, c1)| Builtin::Oscillatory { c0, c1 }),
    ]
}

fn torus() -> ManifoldSpec {
    ManifoldSpec::new(ManifoldKind::Torus { major: 2.0, minor: 0.5 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn tangent_projection_is_idempotent(s in sphere_point(), v in vec3(10.0)) {
        let m = ManifoldSpec::sphere();
        let p = m.tangent_project(&s, &v).unwrap();
        let pp = m.tangent_project(&s, &p).unwrap();
        prop_assert!((p - pp).norm() <= 1e-12 * (1.0 + v.norm()));
        prop_assert!(p.dot(&s).abs() <= 1e-12 * (1.0 + v.norm()));
    }

    #[test]
    fn extended_projection_matches_on_the_manifold(s in sphere_point(), xi in mat3(5.0)) {
        let m = ManifoldSpec::sphere();
        prop_assert_eq!(m.extended_project(&s, &xi), m.matrix_tangent_project(&s, &xi).unwrap());
    }

    #[test]
    fn projection_is_lipschitz_in_the_base_point(s in sphere_point(), t in sphere_point(), xi in mat3(5.0)) {
        let m = ManifoldSpec::sphere();
        prop_assume!((s - t).norm() > 1e-6 && xi.norm() > 1e-6);
        let d = m.matrix_tangent_project(&s, &xi).unwrap() - m.matrix_tangent_project(&t, &xi).unwrap();
        // P_s = I − s sᵀ, so the quotient is at most 2
        prop_assert!(d.norm() <= 2.0 * (s - t).norm() * xi.norm() + 1e-12);
    }

    #[test]
    fn tangent_frames_are_orthonormal(s in sphere_point()) {
        let m = ManifoldSpec::sphere();
        let f = m.tangent_frame(&s).unwrap();
        let n = m.normal(&s).unwrap();
        prop_assert_eq!(f.basis.len(), 2);
        for (i, e) in f.basis.iter().enumerate() {
            prop_assert!((e.norm() - 1.0).abs() <= 1e-10);
            prop_assert!(e.dot(&n).abs() <= 1e-10);
            for g in &f.basis[i + 1..] {
                prop_assert!(e.dot(g).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn sphere_geodesics_are_symmetric_and_match_arccos(a in sphere_point(), b in sphere_point()) {
        let m = ManifoldSpec::sphere();
        let d = m.geodesic_distance(&a, &b).unwrap();
        prop_assert_eq!(d, m.geodesic_distance(&b, &a).unwrap());
        prop_assert!(d >= (a - b).norm() - 1e-12);
        prop_assert!((d - a.dot(&b).clamp(-1.0, 1.0).acos()).abs() <= 1e-4);
    }

    #[test]
    fn recession_is_one_homogeneous(b in builtin(), x in vec3(3.0), xi in mat3(3.0), t in 1e-3f64..1e3) {
        let f = IntegrandSpec::builtin(b).unwrap();
        let lhs = f.eval_f_infinity(&x, &(xi * t));
        let rhs = t * f.eval_f_infinity(&x, &xi);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn builtins_are_periodic(b in builtin(), x in vec3(3.0), xi in mat3(3.0), k in -3i32..3, l in -3i32..3) {
        let f = IntegrandSpec::builtin(b).unwrap();
        let shifted = x + Vec3::new(k as f64, l as f64, 0.0);
        let (u, v) = (f.eval_f(&x, &xi), f.eval_f(&shifted, &xi));
        prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
    }

    #[test]
    fn extended_norm_is_sandwiched_and_lipschitz(s in vec3(1.4), y in vec3(2.0), xi in mat3(4.0), eta in mat3(4.0)) {
        let m = ManifoldSpec::sphere();
        prop_assume!(s.norm() > 0.1);
        let g = ExtendedIntegrand::new(IntegrandSpec::norm(), m.clone());
        let v = g.eval_g(&y, &s, &xi);
        prop_assert!(v >= 0.0);
        // on the inner tube g = |Pξ| + |ξ − Pξ| lies in [|ξ|, √2|ξ|]
        if m.cutoff(&s) == 1.0 {
            prop_assert!(v >= xi.norm() - 1e-12);
            prop_assert!(v <= 2f64.sqrt() * xi.norm() + 1e-12);
        }
        let w = g.eval_g(&y, &s, &eta);
        prop_assert!((v - w).abs() <= 2.0 * (xi - eta).norm() + 1e-12);
    }

    #[test]
    fn extrapolation_recovers_exact_tails(v in 0.5f64..3.0, c in 0.0f64..2.0) {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0].iter().map(|&t| (t, v + c / t)).collect();
        let e = extrapolate(&pts, 0.0);
        prop_assert!((e.value - v).abs() <= 1e-9);
        let clamped = extrapolate(&pts, v + 0.5 * c + 1e-3);
        prop_assert!(clamped.value >= v + 0.5 * c + 1e-3);
    }

    #[test]
    fn thickness_slope_scales_the_vertical_energy(lambda in 0.1f64..2.0, h in 0.1f64..1.0) {
        let m = ManifoldSpec::sphere();
        let f = IntegrandSpec::norm();
        let field = |l: f64| {
            ThinField3D::from_fn(Rect::unit(), [4, 4, 5], h, |p| Vec3::new((l * p.z).cos(), (l * p.z).sin(), 0.0)).unwrap()
        };
        let one = eval_thin(&m, &f, &field(1.0), Quadrature::Vertex).unwrap();
        let scaled = eval_thin(&m, &f, &field(lambda), Quadrature::Vertex).unwrap();
        prop_assert!((scaled - lambda * one).abs() <= 1e-9 * (1.0 + scaled));
    }

    #[test]
    fn config_hash_ignores_formatting(seed in 0u64..1000, n in 4usize..20, t in 1.0f64..3.0) {
        let a = RunConfig::parse(&format!("seed = {seed}\n[cell]\nn_xy = {n}\nt_list = [{t:?}]\n")).unwrap();
        let b = RunConfig::parse(&format!("seed={seed}\n\n[cell]\nt_list = [ {t:?} ]\n  n_xy={n}")).unwrap();
        let json = RunConfig::parse(&serde_json::to_string(&a).unwrap()).unwrap();
        prop_assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        prop_assert_eq!(config_hash(&a).unwrap(), config_hash(&json).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn cell_values_respect_the_growth_sandwich(b in builtin(), s in sphere_point(), c in proptest::array::uniform4(-1.5f64..1.5)) {
        let m = ManifoldSpec::sphere();
        let f = IntegrandSpec::builtin(b).unwrap();
        let frame = m.tangent_frame(&s).unwrap();
        let xi: Mat3x2 = thinhom::cell::xi_from_coords(&frame, &c);
        let config = CellProblemConfig { n_xy: 4, t_list: vec![1.0], ..Default::default() };
        let r = solve_cell(&m, &f, &s, &xi, 1.0, &config, 0).unwrap();
        let k = f.constants();
        prop_assert!(r.value <= r.upper_bound);
        prop_assert!(r.value >= k.alpha * xi.norm() - 1e-3);
        prop_assert!(r.value <= k.beta * (1.0 + xi.norm()) + 1e-3);
    }

    #[test]
    fn theta_vanishes_on_the_diagonal(a in sphere_point(), angle in 0.0f64..std::f64::consts::TAU) {
        let m = ManifoldSpec::sphere();
        let nu = Vec2::new(angle.cos(), angle.sin());
        let r = theta(&m, &IntegrandSpec::norm(), &a, &a, &nu, &JumpProblemConfig::default()).unwrap();
        prop_assert_eq!(r.value, 0.0);
    }

    #[test]
    fn torus_geodesics_are_symmetric_and_longer_than_chords(u1 in 0.0f64..6.28, v1 in 0.0f64..6.28, u2 in 0.0f64..6.28, v2 in 0.0f64..6.28) {
        let m = torus();
        let p = |u: f64, v: f64| Vec3::new((2.0 + 0.5 * v.cos()) * u.cos(), (2.0 + 0.5 * v.cos()) * u.sin(), 0.5 * v.sin());
        let (a, b) = (p(u1, v1), p(u2, v2));
        let d = m.geodesic_distance(&a, &b).unwrap();
        let e = m.geodesic_distance(&b, &a).unwrap();
        prop_assert!(d >= (a - b).norm() - 1e-9);
        prop_assert!((d - e).abs() <= 1e-3 * (1.0 + d));
    }
}

#[test]
fn geodesic_length_converges_under_refinement() {
    let m = torus();
    let a = Vec3::new(2.5, 0.0, 0.0);
    let b = Vec3::new(0.0, 1.5, 0.0);
    let lengths: Vec<f64> = [17, 33, 65, 129, 257].iter().map(|&n| m.geodesic_path(&a, &b, n).unwrap().length).collect();
    let d = m.geodesic_distance(&a, &b).unwrap();
    let gaps: Vec<f64> = lengths.iter().map(|l| (l - d).abs()).collect();
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{lengths:?} vs {d}");
    }
    assert!(gaps[gaps.len() - 1] <= 1e-6 * d);
}

#[test]
fn geodesic_paths_are_clamped_at_the_ends() {
    let m = ManifoldSpec::sphere();
    let (a, b) = (Vec3::x(), Vec3::z());
    let path = m.geodesic_path(&a, &b, 65).unwrap();
    assert_eq!(path.eval(&m, 0.5), a);
    assert_eq!(path.eval(&m, 0.9), a);
    assert_eq!(path.eval(&m, -0.5), b);
    assert_eq!(path.eval(&m, -3.0), b);
}
