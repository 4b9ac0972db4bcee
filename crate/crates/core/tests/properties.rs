//! Property tests over geometries, perturbations, the engine and the
//! harness formats.

use bregman_accel::engine::RunSpec;
use bregman_accel::harness::io;
use bregman_accel::{
    Geometry, Injection, Operator, PerturbationMode, PerturbationModel, SpdMatrix, TraceRow, Vector,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn geometries() -> Vec<Geometry> {
    vec![
        Geometry::squared_euclidean(3).unwrap(),
        Geometry::quadratic(
            SpdMatrix::from_rows(vec![
                vec![3.0, 0.5, 0.0],
                vec![0.5, 2.0, 0.3],
                vec![0.0, 0.3, 1.0],
            ])
            .unwrap(),
        )
        .unwrap(),
        Geometry::negative_entropy(3, 1e-6).unwrap(),
        Geometry::negative_entropy(3, 1e-2).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_is_nonnegative_and_three_point_holds(seed in any::<u64>(), radius in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in geometries() {
            let u = g.sample_point(&mut rng, None, radius);
            let v = g.sample_point(&mut rng, None, radius);
            let w = g.sample_point(&mut rng, None, radius);
            let d = g.divergence(&u, &v).unwrap();
            prop_assert!(d >= -1e-12, "{:?}: D = {d}", g.kind());
            let r = g.three_point_residual(&u, &v, &w).unwrap();
            prop_assert!(r <= 1e-9, "{:?}: residual {r}", g.kind());
        }
    }

    #[test]
    fn mirror_inverts_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in geometries() {
            let s = g.sample_point(&mut rng, None, 5.0);
            let back = g.mirror(&g.grad(&s).unwrap()).unwrap();
            let err = back.sub(&s).max_abs() / s.max_abs().max(1.0);
            prop_assert!(err <= 1e-9, "{:?}: {err}", g.kind());
        }
    }

    #[test]
    fn convexity_and_smoothness_certificates(seed in any::<u64>()) {
        for g in geometries() {
            let cert = g.certify(50, seed);
            prop_assert!(cert.holds(g.tolerances()), "{:?}: {cert:?}", g.kind());
        }
    }

    #[test]
    fn perturbation_respects_budget(
        seed in any::<u64>(),
        e in 0.0f64..10.0,
        delta0 in 0.0f64..1e-2,
        kappa in 0.0f64..0.5,
        adversarial in any::<bool>(),
    ) {
        let mode = if adversarial { PerturbationMode::Adversarial } else { PerturbationMode::Random };
        let pm = PerturbationModel::new(mode, delta0, kappa, Injection::Unscaled).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in geometries().into_iter().filter(|g| g.is_linear_space()) {
            let s = g.sample_point(&mut rng, None, 3.0);
            let star = Vector::zeros(g.dim());
            let eta = pm.sample(&g, &s, &star, e, 1.0, &mut rng).unwrap();
            let d = g.divergence(&eta, &star).unwrap();
            prop_assert!(d <= delta0 + kappa * e + 1e-12, "{d} > budget");
        }
    }

    #[test]
    fn colinear_matches_closed_form(gamma in 0.05f64..0.95, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        // Along the colinear map, s_t - s* shrinks by (1 - α_t(1-γ)) each step.
        let g = Geometry::squared_euclidean(2).unwrap();
        let target = Vector::new(vec![1.0, -1.0]).unwrap();
        let op = Operator::affine_colinear(gamma, target).unwrap();
        let s0 = Vector::new(vec![x, y]).unwrap();
        let trace = RunSpec::new(g, op, s0).with_iterations(200).prepare().unwrap().run().unwrap();
        let e0 = trace.rows[0].e_t;
        let mut factor = 1.0_f64;
        for row in &trace.rows {
            let expect = e0 * factor * factor;
            prop_assert!((row.e_t - expect).abs() <= 1e-9 * e0.max(1e-300));
            factor *= 1.0 - row.alpha_t * (1.0 - gamma);
        }
    }

    #[test]
    fn trace_csv_round_trips(values in prop::collection::vec((0.0f64..1e6, -1e3f64..1e3), 1..40)) {
        let rows: Vec<TraceRow> = values
            .iter()
            .enumerate()
            .map(|(t, &(e, x))| TraceRow {
                t,
                e_t: e,
                a_t: e * ((t + 1) as f64).powi(2),
                alpha_t: 2.0 / (t as f64 + 2.0),
                delta_norm_sq: x * x,
                eta_div: x.abs() / 3.0,
            })
            .collect();
        let mut buf = Vec::new();
        io::write_trace(&rows, &mut buf).unwrap();
        prop_assert_eq!(io::read_trace(&buf[..]).unwrap(), rows);
    }
}

#[test]
fn runs_are_deterministic_and_seeds_matter() {
    let g = Geometry::squared_euclidean(2).unwrap();
    let op = Operator::affine_colinear(0.5, Vector::new(vec![2.0, -1.0]).unwrap()).unwrap();
    let pm =
        PerturbationModel::new(PerturbationMode::Random, 1e-3, 0.1, Injection::Scaled).unwrap();
    let spec = |seed| {
        RunSpec::new(g.clone(), op.clone(), Vector::zeros(2))
            .with_perturbation(pm)
            .with_iterations(300)
            .with_seed(seed)
    };
    let a = spec(5).prepare().unwrap().run().unwrap();
    let b = spec(5).prepare().unwrap().run().unwrap();
    let c = spec(6).prepare().unwrap().run().unwrap();
    assert_eq!(a, b);
    assert_ne!(a.rows, c.rows);
}

#[test]
fn noise_free_colinear_is_monotone_and_absorbing() {
    let g = Geometry::squared_euclidean(2).unwrap();
    let target = Vector::new(vec![2.0, -1.0]).unwrap();
    let op = Operator::affine_colinear(0.5, target.clone()).unwrap();
    let trace = RunSpec::new(g.clone(), op.clone(), Vector::zeros(2))
        .with_iterations(5000)
        .prepare()
        .unwrap()
        .run()
        .unwrap();
    assert!(trace.rows.windows(2).all(|w| w[1].e_t <= w[0].e_t));
    approx::assert_relative_eq!(trace.a_max(), 2.5, max_relative = 1e-9);

    let still = RunSpec::new(g, op, target)
        .with_iterations(100)
        .prepare()
        .unwrap()
        .run()
        .unwrap();
    assert!(still.rows.iter().all(|r| r.e_t == 0.0));
}
