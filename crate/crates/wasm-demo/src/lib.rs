//! Browser bindings: each export runs a small seeded experiment and returns
//! a flat `Float64Array` for the page to draw.

use std::collections::BTreeMap;

use radopt::harness::{run_on, ExperimentConfig, RunOutcome};
use radopt::optim::{BatchSchedule, Method, Optimizer, OptimizerSpec, StepSchedule};
use radopt::problems::sample_batch;
use radopt::verify::rate_experiment;
use radopt::Problem;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const PCA_DATA: &str = "synth:n=20,p=3,N=512,noise=0.1,seed=7";

fn config(pairs: &[(&str, String)]) -> Result<ExperimentConfig, String> {
    let settings: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let mut c = ExperimentConfig::from_settings(&settings).map_err(|e| e.to_string())?;
    c.cadence = Some(1);
    Ok(c)
}

fn single_run(c: &ExperimentConfig) -> Result<RunOutcome, String> {
    let w = c.problem.load().map_err(|e| e.to_string())?;
    let mut out = run_on(&w, c).map_err(|e| e.to_string())?;
    Ok(out.remove(0))
}

/// Full gradient norm at `k = 1..=iters+1` on a noisy synthetic PCA problem.
/// A diverged run ends early.
pub fn gradient_curve(method: &str, alpha: f64, batch: u32, iters: u32, seed: u32) -> Result<Vec<f64>, String> {
    let c = config(&[
        ("data", PCA_DATA.into()),
        ("method", method.into()),
        ("alpha", alpha.to_string()),
        ("batch", batch.to_string()),
        ("iters", iters.to_string()),
        ("seeds", seed.to_string()),
    ])?;
    Ok(single_run(&c)?.records.iter().map(|r| r.gnorm_train).collect())
}

/// Leading-eigenvector search on the unit sphere in ℝ³. Returns
/// `[t_x, t_y, t_z, x_0, y_0, z_0, x_1, ...]`: the planted direction
/// followed by the initial point and every iterate.
pub fn sphere_trajectory(method: &str, alpha: f64, iters: u32, seed: u32) -> Result<Vec<f64>, String> {
    let err = |e: radopt::Error| e.to_string();
    let synth = radopt::data::synth_pca(3, 1, 200, 0.3, seed as u64 + 1).map_err(err)?;
    let problem = synth.dataset.to_pca(1).map_err(err)?;
    let method: Method = method.parse().map_err(err)?;
    let spec = OptimizerSpec::new(method, StepSchedule::Constant(alpha), BatchSchedule::constant(4));
    let m = problem.manifold();
    let mut opt = Optimizer::new(spec, m).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let mut x = m.random_point_with(&mut rng);

    let mut path = synth.planted.as_slice().to_vec();
    path.extend_from_slice(x.values().as_slice());
    for _ in 0..iters {
        let batch = sample_batch(&mut rng, problem.num_samples(), opt.batch_size());
        let g = problem.minibatch_grad(&x, &batch).map_err(err)?;
        x = opt.step(m, &x, &g).map_err(err)?.0;
        path.extend_from_slice(x.values().as_slice());
    }
    Ok(path)
}

/// Running average of `‖grad f(x_k)‖²` under a constant batch `b0` and
/// under `b_k = b0 · δ^⌊k/period⌋`, concatenated (`2 · iters` values).
pub fn batch_comparison(
    b0: u32,
    delta: f64,
    period: u32,
    alpha: f64,
    iters: u32,
    seed: u32,
) -> Result<Vec<f64>, String> {
    let c = config(&[
        ("data", PCA_DATA.into()),
        ("method", "ramsgrad".into()),
        ("beta1", "0".into()),
        ("alpha", alpha.to_string()),
        ("batch", b0.to_string()),
        ("iters", iters.to_string()),
        ("seeds", seed.to_string()),
    ])?;
    let grow = radopt::harness::parse_batch_schedule(&format!("exp:{delta}:{period}"), b0 as usize)
        .map_err(|e| e.to_string())?;
    let w = c.problem.load().map_err(|e| e.to_string())?;
    let fit = rate_experiment(&w, &c, &[c.optimizer.batch, grow]).map_err(|e| e.to_string())?;
    Ok(fit.curves.concat())
}

#[wasm_bindgen(js_name = gradientCurve)]
pub fn gradient_curve_js(method: &str, alpha: f64, batch: u32, iters: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    gradient_curve(method, alpha, batch, iters, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sphereTrajectory)]
pub fn sphere_trajectory_js(method: &str, alpha: f64, iters: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    sphere_trajectory(method, alpha, iters, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = batchComparison)]
pub fn batch_comparison_js(
    b0: u32,
    delta: f64,
    period: u32,
    alpha: f64,
    iters: u32,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    batch_comparison(b0, delta, period, alpha, iters, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_has_one_value_per_record() {
        let c = gradient_curve("ramsgrad", 1e-2, 32, 50, 0).unwrap();
        assert_eq!(c.len(), 51);
        assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(c[50] < c[0]);
        assert_eq!(c, gradient_curve("ramsgrad", 1e-2, 32, 50, 0).unwrap());
    }

    #[test]
    fn unknown_method_is_an_error() {
        assert!(gradient_curve("sgd", 1e-2, 32, 5, 0).is_err());
    }

    #[test]
    fn trajectory_stays_on_sphere_and_approaches_target() {
        let path = sphere_trajectory("rsgd", 5e-2, 300, 1).unwrap();
        assert_eq!(path.len(), 3 * 302);
        let target = &path[..3];
        let pts: Vec<&[f64]> = path[3..].chunks(3).collect();
        for p in &pts {
            assert!((p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - 1.0).abs() < 1e-10);
        }
        let cos = |p: &[f64]| (p[0] * target[0] + p[1] * target[1] + p[2] * target[2]).abs();
        assert!(cos(pts[pts.len() - 1]) > 0.99, "{}", cos(pts[pts.len() - 1]));
        assert!(cos(pts[pts.len() - 1]) > cos(pts[0]));
    }

    #[test]
    fn growing_batches_lower_the_running_average() {
        let v = batch_comparison(16, 2.0, 50, 1e-2, 600, 0).unwrap();
        assert_eq!(v.len(), 1200);
        assert!(v[1199] < v[599]);
    }
}
