use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use radopt::harness::{grid_search, metrics_csv, run, write_outcomes, ExperimentConfig, RunStatus, METRICS_HEADER};
use radopt::manifold::Manifold;
use radopt::optim::{step, AdaptiveState, BatchSchedule, CustomMaps, Method, OptimizerSpec, StepSchedule};
use radopt::verify::{exhaustive_batch_moments, sample_variance, worst_gradient_error};
use radopt::Problem;

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let s: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    ExperimentConfig::from_settings(&s).unwrap()
}

#[test]
fn identity_maps_reproduce_rsgd_bit_for_bit() {
    let pca = radopt::data::synth_pca(7, 2, 30, 0.2, 1)
        .unwrap()
        .dataset
        .to_pca(2)
        .unwrap();
    let m = pca.manifold().clone();
    let spec = OptimizerSpec::new(
        Method::Rsgd,
        StepSchedule::Diminishing(0.05),
        BatchSchedule::constant(4),
    );
    let mut builtin = AdaptiveState::new(&spec, 14);
    let mut custom = CustomMaps::new(|_, g: &[f64]| g.to_vec(), |_, g: &[f64]| vec![1.0; g.len()]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut a, mut b) = (m.random_point(3), m.random_point(3));
    for k in 1..=50u64 {
        let batch = radopt::problems::sample_batch(&mut rng, pca.num_samples(), 4);
        let alpha = spec.step.alpha(k).unwrap();
        let ga = pca.minibatch_grad(&a, &batch).unwrap();
        let gb = pca.minibatch_grad(&b, &batch).unwrap();
        a = step(&m, &a, &ga, &mut builtin, alpha).unwrap().0;
        b = step(&m, &b, &gb, &mut custom, alpha).unwrap().0;
        assert_eq!(a.values(), b.values(), "diverged at k = {k}");
    }
}

#[test]
fn ramsgrad_without_momentum_matches_explicit_formula() {
    let m = Manifold::stiefel(4, 2).unwrap();
    let x = m.random_point(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = m.random_tangent(&x, &mut rng).unwrap();
    let spec = OptimizerSpec::new(
        Method::RAmsGrad,
        StepSchedule::Constant(0.1),
        BatchSchedule::constant(1),
    )
    .with_betas(0.0, 0.999);
    let mut state = AdaptiveState::new(&spec, 8);
    let (next, info) = step(&m, &x, &g, &mut state, 0.1).unwrap();

    let scaled = g.values().map(|gi| gi / ((0.001 * gi * gi).sqrt() + 1e-8));
    let dir = m.project(&x, &scaled).unwrap();
    let expected = m.retract(&x, &dir.scaled(-0.1)).unwrap();
    assert!((info.direction.values() - dir.values()).norm() < 1e-12);
    assert!((next.values() - expected.values()).norm() < 1e-12);
}

#[test]
fn every_ordered_batch_of_two_over_four_samples() {
    // Columns are samples.
    let data = DMatrix::from_column_slice(3, 4, &[1.0, 0.0, 2.0, -1.0, 3.0, 0.5, 0.0, 1.0, 1.0, 2.0, -2.0, 0.0]);
    let pca = radopt::problems::PcaInstance::new(data, 2).unwrap();
    let x = pca.manifold().random_point(1);
    let full = pca.full_grad(&x).unwrap();

    let mut mean = DMatrix::zeros(3, 2);
    let mut dev = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let g = pca.minibatch_grad(&x, &[i, j]).unwrap();
            dev += (g.values() - full.values()).norm_squared();
            mean += g.values();
        }
    }
    mean /= 16.0;
    dev /= 16.0;
    assert!((mean - full.values()).norm() < 1e-12);
    let var = sample_variance(&pca, &x).unwrap();
    assert!((dev - var / 2.0).abs() < 1e-12);
    let (m2, d2) = exhaustive_batch_moments(&pca, &x, 2).unwrap();
    assert!((m2.values() - full.values()).norm() < 1e-12);
    assert!((d2 - dev).abs() < 1e-12);
}

#[test]
fn closed_form_gradients_match_finite_differences() {
    let pca = radopt::data::synth_pca(9, 3, 60, 0.2, 2)
        .unwrap()
        .dataset
        .to_pca(3)
        .unwrap();
    assert!(worst_gradient_error(&pca, 5, 20, 1e-5, 3).unwrap() < 1e-5);
    let lrmc = radopt::data::synth_lrmc(10, 12, 2, 0.5, 0.1, 4)
        .unwrap()
        .ratings
        .to_lrmc(2)
        .unwrap();
    assert!(worst_gradient_error(&lrmc, 5, 20, 1e-5, 5).unwrap() < 1e-4);
}

#[test]
fn reruns_write_identical_files() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let base = [
        ("problem", "lrmc"),
        ("data", "synth:n=12,N=20,p=2,obs=0.6,noise=0.05,seed=4"),
        ("method", "radam"),
        ("batch", "4"),
        ("batch-schedule", "exp:2:20"),
        ("iters", "120"),
        ("seeds", "0,1"),
    ];
    let c = config(&base);
    let a = write_outcomes(dir_a.path(), &c, &run(&c).unwrap()).unwrap();
    let b = write_outcomes(dir_b.path(), &c, &run(&c).unwrap()).unwrap();
    assert_eq!(a.len(), 2);
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(pa.file_name(), pb.file_name());
        let (ba, bb) = (std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        assert_eq!(ba, bb);
        assert!(ba.starts_with(METRICS_HEADER.as_bytes()));
    }
}

#[test]
fn seeds_change_trajectories() {
    let c = config(&[
        ("data", "synth:n=8,p=2,N=64,noise=0.1,seed=1"),
        ("iters", "20"),
        ("seeds", "0,1"),
        ("batch", "8"),
    ]);
    let out = run(&c).unwrap();
    assert_ne!(metrics_csv(&out[0].records), metrics_csv(&out[1].records));
}

#[test]
fn split_produces_test_metrics() {
    let c = config(&[
        ("data", "synth:n=8,p=2,N=64,noise=0.1,seed=1"),
        ("iters", "5"),
        ("seeds", "0"),
        ("split", "0.75"),
    ]);
    let out = run(&c).unwrap();
    assert!(out[0]
        .records
        .iter()
        .all(|r| r.f_test.is_finite() && r.gnorm_test.is_finite()));
}

#[test]
fn grid_prefers_converging_step_sizes_on_planted_pca() {
    let c = config(&[
        ("data", "synth:n=10,p=2,N=200,noise=0,seed=8"),
        ("method", "rsgd"),
        ("batch", "32"),
        ("iters", "300"),
        ("seeds", "0,1"),
    ]);
    let g = grid_search(&c, &[1e-1, 1e-6]).unwrap();
    assert_eq!(g.best, Some(1e-1));
    let e = &g.entries[0];
    assert!(e.outcomes.iter().all(|o| o.status == RunStatus::Completed));
    let first = e.outcomes[0].records[0].gnorm_train;
    let last = e.outcomes[0].records.last().unwrap().gnorm_train;
    assert!(last < 1e-3 * first, "{first} -> {last}");
}

#[test]
fn ramsgrad_reduces_gradient_norm_tenfold() {
    let c = config(&[
        ("data", "synth:n=20,p=3,N=512,noise=0.1,seed=0"),
        ("method", "ramsgrad"),
        ("alpha", "1e-3"),
        ("batch", "64"),
        ("iters", "2000"),
        ("seeds", "0"),
    ]);
    let out = run(&c).unwrap();
    let r = &out[0].records;
    assert!(
        r.last().unwrap().gnorm_train * 10.0 <= r[0].gnorm_train,
        "{} -> {}",
        r[0].gnorm_train,
        r.last().unwrap().gnorm_train
    );
}

#[test]
fn single_step_size_grid_returns_it() {
    let c = config(&[
        ("data", "synth:n=6,p=2,N=30,noise=0.1,seed=2"),
        ("iters", "10"),
        ("seeds", "0"),
    ]);
    assert_eq!(grid_search(&c, &[3e-3]).unwrap().best, Some(3e-3));
}
