use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use radopt::manifold::{Manifold, Tangent};
use radopt::optim::{AdaptiveState, BatchSchedule, Method, MomentMaps, OptimizerSpec, StepSchedule};

fn manifolds() -> impl Strategy<Value = Manifold> {
    prop_oneof![
        (2usize..12).prop_map(|d| Manifold::sphere(d).unwrap()),
        (2usize..9, 1usize..5)
            .prop_filter("p ≤ n", |(n, p)| p <= n)
            .prop_map(|(n, p)| Manifold::stiefel(n, p).unwrap()),
        (2usize..9, 1usize..5)
            .prop_filter("p ≤ n", |(n, p)| p <= n)
            .prop_map(|(n, p)| Manifold::grassmann(n, p).unwrap()),
    ]
}

fn ambient(m: &Manifold, entries: &[f64]) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_iterator(r, c, entries.iter().cycle().copied().take(r * c))
}

proptest! {
    #[test]
    fn projection_is_idempotent_symmetric_and_nonexpansive(
        m in manifolds(),
        seed in any::<u64>(),
        a in prop::collection::vec(-10.0f64..10.0, 1..64),
        b in prop::collection::vec(-10.0f64..10.0, 1..64),
    ) {
        let x = m.random_point(seed);
        let u = ambient(&m, &a);
        let v = ambient(&m, &b);
        let pu = m.project(&x, &u).unwrap();
        let pv = m.project(&x, &v).unwrap();
        let scale = 1.0 + u.norm() * v.norm();
        prop_assert!((m.project(&x, pu.values()).unwrap().values() - pu.values()).norm() <= 1e-12 * (1.0 + u.norm()));
        prop_assert!((pu.values().dot(&v) - u.dot(pv.values())).abs() <= 1e-12 * scale);
        prop_assert!(pu.norm() <= u.norm() * (1.0 + 1e-12) + 1e-15);
        prop_assert!(m.check_tangent(&x, pu.values()).unwrap().ok);
    }

    #[test]
    fn retraction_stays_feasible(m in manifolds(), seed in any::<u64>(), t in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = m.random_point_with(&mut rng);
        let eta = m.random_tangent(&x, &mut rng).unwrap();
        let y = m.retract(&x, &eta.scaled(t)).unwrap();
        prop_assert!(m.feasibility_residual(y.values()) <= 1e-10);
    }

    #[test]
    fn projection_is_linear(m in manifolds(), seed in any::<u64>(), s in -5.0f64..5.0,
        a in prop::collection::vec(-1.0f64..1.0, 1..64), b in prop::collection::vec(-1.0f64..1.0, 1..64)) {
        let x = m.random_point(seed);
        let u = ambient(&m, &a);
        let v = ambient(&m, &b);
        let lhs = m.project(&x, &(&u * s + &v)).unwrap();
        let rhs = m.project(&x, &u).unwrap().values() * s + m.project(&x, &v).unwrap().values();
        prop_assert!((lhs.values() - rhs).norm() <= 1e-12 * (1.0 + s.abs()) * 8.0);
    }

    #[test]
    fn amsgrad_second_moment_is_monotone_and_bounded(
        grads in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..80),
        beta2 in 0.5f64..0.9999,
    ) {
        let spec = OptimizerSpec::new(Method::RAmsGrad, StepSchedule::Diminishing(0.1), BatchSchedule::constant(1))
            .with_betas(0.9, beta2);
        let mut state = AdaptiveState::new(&spec, 4);
        let mut prev = vec![0.0; 4];
        let bound = grads.iter().flatten().fold(0.0f64, |a, g| a.max(g * g));
        for g in &grads {
            state.phi(g).unwrap();
            let h = state.psi(g).unwrap();
            for ((v, p), d) in state.v_hat.iter().zip(&prev).zip(&h.diag) {
                prop_assert!(v >= p);
                prop_assert!(*v <= bound * (1.0 + 1e-12));
                prop_assert!(*d >= spec.eps);
            }
            prev.clone_from(&state.v_hat);
            state.advance();
        }
    }

    #[test]
    fn batch_schedule_is_monotone_and_capped(b0 in 1usize..64, delta in 1.0f64..3.0, period in 1u64..100, cap in 1usize..5000) {
        let s = BatchSchedule::exponential(b0, delta, period).unwrap().with_cap(cap);
        let mut last = 0;
        for k in 1..2000u64 {
            let b = s.size(k);
            prop_assert!(b >= 1 && b <= cap);
            prop_assert!(b >= last);
            last = b;
        }
    }

    #[test]
    fn tangent_scaling_scales_norm(v in prop::collection::vec(-5.0f64..5.0, 6), s in -4.0f64..4.0) {
        let t = Tangent::new(DMatrix::from_vec(3, 2, v));
        prop_assert!((t.scaled(s).norm() - s.abs() * t.norm()).abs() <= 1e-12 * (1.0 + t.norm()));
    }
}
