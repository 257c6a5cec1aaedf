//! Independent checks on the optimizer and the objectives.
//!
//! Nothing in here shares a code path with the closed-form gradients it
//! checks: directional derivatives come from central differences of the
//! objective composed with the retraction, and mini-batch expectations come
//! from enumerating every ordered batch.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{run_on, ExperimentConfig, RunStatus, Workload};
use crate::manifold::{Manifold, Point, Tangent};
use crate::optim::{AdaptiveState, BatchSchedule, Method, MomentMaps, OptimizerSpec, StepSchedule};
use crate::problems::Problem;

/// `(f(R_x(tη)) − f(R_x(−tη))) / 2t`, the central-difference estimate of
/// `⟨grad f(x), η⟩`.
pub fn fd_directional<F>(f: F, manifold: &Manifold, x: &Point, eta: &Tangent, t: f64) -> Result<f64>
where
    F: Fn(&Point) -> Result<f64>,
{
    if !(t > 0.0) {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let plus = manifold.retract(x, &eta.scaled(t))?;
    let minus = manifold.retract(x, &eta.scaled(-t))?;
    Ok((f(&plus)? - f(&minus)?) / (2.0 * t))
}

/// `‖R_x(tη) − (x + tη)‖`.
pub fn retraction_defect(manifold: &Manifold, x: &Point, eta: &Tangent, t: f64) -> Result<f64> {
    let y = manifold.retract(x, &eta.scaled(t))?;
    Ok((y.values() - (x.values() + eta.values() * t)).norm())
}

/// `e(0.01) / e(0.1)` for the retraction defect; about `0.01` for a
/// retraction that agrees with `x + tη` to first order.
pub fn retraction_order_ratio(manifold: &Manifold, x: &Point, eta: &Tangent) -> Result<f64> {
    Ok(retraction_defect(manifold, x, eta, 0.01)? / retraction_defect(manifold, x, eta, 0.1)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares `⟨grad f(x), η⟩` from the closed form with the central
/// difference at step `t`.
pub fn gradient_check<P: Problem + ?Sized>(problem: &P, x: &Point, eta: &Tangent, t: f64) -> Result<GradCheck> {
    let m = problem.manifold();
    let g = problem.full_grad(x)?;
    let analytic = m.inner(x, &g, eta)?;
    let numeric = fd_directional(|y| problem.value(y), m, x, eta, t)?;
    let scale = analytic.abs().max(numeric.abs()).max(1e-12);
    Ok(GradCheck {
        analytic,
        numeric,
        rel_err: (analytic - numeric).abs() / scale,
    })
}

/// Worst relative error over `points × directions` random unit tangent
/// directions.
pub fn worst_gradient_error<P: Problem + ?Sized>(
    problem: &P,
    points: usize,
    directions: usize,
    t: f64,
    seed: u64,
) -> Result<f64> {
    let m = problem.manifold();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = m.random_point_with(&mut rng);
        for _ in 0..directions {
            let eta = m.random_tangent(&x, &mut rng)?;
            let eta = eta.scaled(1.0 / eta.norm());
            worst = worst.max(gradient_check(problem, &x, &eta, t)?.rel_err);
        }
    }
    Ok(worst)
}

/// Mean of the mini-batch gradient over all `Nᵇ` ordered batches, and the
/// mean squared deviation `E‖grad f_B − grad f‖²`.
pub fn exhaustive_batch_moments<P: Problem + ?Sized>(problem: &P, x: &Point, b: usize) -> Result<(Tangent, f64)> {
    let n = problem.num_samples();
    let total = n
        .checked_pow(b as u32)
        .filter(|&t| t <= 1 << 20)
        .ok_or_else(|| Error::Contract(format!("{n}^{b} batches is too many to enumerate")))?;
    let full = problem.full_grad(x)?;
    let (r, c) = problem.manifold().shape();
    let mut mean = DMatrix::zeros(r, c);
    let mut sq = 0.0;
    let mut batch = vec![0usize; b];
    for code in 0..total {
        let mut rest = code;
        for slot in batch.iter_mut() {
            *slot = rest % n;
            rest /= n;
        }
        let g = problem.minibatch_grad(x, &batch)?;
        sq += (g.values() - full.values()).norm_squared();
        mean += g.values();
    }
    Ok((Tangent::new(mean / total as f64), sq / total as f64))
}

/// `(1/N) Σ ‖grad f_i(x) − grad f(x)‖²`.
pub fn sample_variance<P: Problem + ?Sized>(problem: &P, x: &Point) -> Result<f64> {
    let full = problem.full_grad(x)?;
    let n = problem.num_samples();
    let mut acc = 0.0;
    for i in 0..n {
        acc += (problem.sample_grad(x, i)?.values() - full.values()).norm_squared();
    }
    Ok(acc / n as f64)
}

/// Gradient-norm bounds and the preconditioner constants derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisBounds {
    /// Bound on stochastic gradient norms.
    pub b: f64,
    /// Bound on full gradient norms.
    pub g: f64,
    pub eps: f64,
    /// `(B + ε)⁻¹`
    pub mu: f64,
    /// `ε⁻¹`
    pub nu: f64,
}

impl AnalysisBounds {
    pub fn new(b: f64, g: f64, eps: f64) -> Self {
        AnalysisBounds {
            b,
            g,
            eps,
            mu: 1.0 / (b + eps),
            nu: 1.0 / eps,
        }
    }

    /// Largest constant step size covered by the constant-step analysis,
    /// `2μ / (L ν²)`.
    pub fn step_cap(&self, lipschitz: f64) -> f64 {
        2.0 * self.mu / (lipschitz * self.nu * self.nu)
    }
}

/// Maxima of `‖grad f_i‖` (which bounds every mini-batch gradient) and
/// `‖grad f‖` over `trials` random points.
pub fn empirical_bounds<P: Problem + ?Sized>(
    problem: &P,
    trials: usize,
    seed: u64,
    eps: f64,
) -> Result<AnalysisBounds> {
    let m = problem.manifold();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut b, mut g) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let x = m.random_point_with(&mut rng);
        g = g.max(problem.full_grad(&x)?.norm());
        for i in 0..problem.num_samples() {
            b = b.max(problem.sample_grad(&x, i)?.norm());
        }
    }
    Ok(AnalysisBounds::new(b, g, eps))
}

/// Lower witness of the retraction-smoothness constant:
/// the largest `2|f(R_x(tη)) − f(x) − t⟨grad f(x), η⟩| / t²` over random
/// points and unit tangent directions.
pub fn estimate_lipschitz<F, G>(f: F, grad: G, manifold: &Manifold, trials: usize, t: f64, seed: u64) -> Result<f64>
where
    F: Fn(&Point) -> Result<f64>,
    G: Fn(&Point) -> Result<Tangent>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..trials {
        let x = manifold.random_point_with(&mut rng);
        let eta = manifold.random_tangent(&x, &mut rng)?;
        let eta = eta.scaled(1.0 / eta.norm());
        let fx = f(&x)?;
        let slope = manifold.inner(&x, &grad(&x)?, &eta)?;
        let y = manifold.retract(&x, &eta.scaled(t))?;
        let curvature = 2.0 * (f(&y)? - fx - t * slope).abs() / (t * t);
        best = best.max(curvature);
    }
    Ok(best)
}

/// Outcome of feeding a gradient stream through the AMSGrad maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmsGradReport {
    pub steps: u64,
    pub max_v_hat: f64,
    /// `α_k / (√v̂_{k,i} + ε)` never increased for any coordinate.
    pub monotone: bool,
    /// `(B + ε)⁻¹ ≤ 1/diag_i ≤ ε⁻¹` held throughout.
    pub sandwich: bool,
}

/// Streams `gradients` through AMSGrad's (φ, ψ) with step sizes from
/// `schedule`, checking the preconditioner invariants against `bound`.
pub fn check_amsgrad_stream<I>(spec: &OptimizerSpec, dim: usize, gradients: I, bound: f64) -> Result<AmsGradReport>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    if spec.method != Method::RAmsGrad {
        return Err(Error::Contract("stream check needs the AMSGrad method".into()));
    }
    let mut state = AdaptiveState::new(spec, dim);
    let mu = 1.0 / (bound + spec.eps);
    let nu = 1.0 / spec.eps;
    let mut prev: Option<Vec<f64>> = None;
    let mut report = AmsGradReport {
        steps: 0,
        max_v_hat: 0.0,
        monotone: true,
        sandwich: true,
    };
    for g in gradients {
        let k = state.iteration();
        let alpha = spec.step.alpha(k)?;
        state.phi(&g)?;
        let h = state.psi(&g)?;
        let eff: Vec<f64> = h.diag.iter().map(|d| alpha / d).collect();
        if let Some(p) = &prev {
            // Exact comparison: the running max makes ties common and any
            // increase, however small, breaks the invariant.
            report.monotone &= eff.iter().zip(p).all(|(now, before)| now <= before);
        }
        for d in &h.diag {
            let inv = 1.0 / d;
            report.sandwich &= inv >= mu * (1.0 - 1e-12) && inv <= nu * (1.0 + 1e-12);
        }
        report.max_v_hat = state.v_hat.iter().copied().fold(report.max_v_hat, f64::max);
        prev = Some(eff);
        state.advance();
        report.steps += 1;
    }
    Ok(report)
}

/// Adversarial gradient stream with `‖g_k‖ ≤ bound`: a sustained first
/// quarter at full norm on one coordinate drives `v̂` toward `bound²`, then
/// bursts on random coordinates alternate with spread-out and zero
/// gradients.
pub fn adversarial_stream(dim: usize, steps: usize, bound: f64, seed: u64) -> impl Iterator<Item = Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps).map(move |k| {
        let mut g = vec![0.0; dim];
        if k < steps / 4 {
            g[0] = bound;
            return g;
        }
        match k % 4 {
            0 => {
                let i = rng.random_range(0..dim);
                g[i] = if rng.random_bool(0.5) { bound } else { -bound };
            }
            1 => {
                let v = bound / (dim as f64).sqrt();
                for x in &mut g {
                    *x = if rng.random_bool(0.5) { v } else { -v };
                }
            }
            2 => {
                for x in &mut g {
                    *x = rng.random_range(-1.0..1.0);
                }
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for x in &mut g {
                        *x *= bound / norm;
                    }
                }
            }
            _ => {}
        }
        g
    })
}

/// Seed-averaged running means of `‖grad f(x_k)‖²` for several batch
/// schedules under one step-size schedule.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub schedules: Vec<BatchSchedule>,
    /// `curves[s][K−1] = (1/K) Σ_{k≤K} mean_seeds ‖grad f(x_k)‖²`.
    pub curves: Vec<Vec<f64>>,
    /// Seeds that diverged, per schedule; excluded from the averages.
    pub diverged: Vec<usize>,
    /// `(a, c)` of the least-squares fit `a/K + c/b` over constant-batch
    /// curves, when at least two such curves exist.
    pub coefficients: Option<(f64, f64)>,
}

impl RateFit {
    /// Running average at the final iteration for schedule `s`.
    pub fn plateau(&self, s: usize) -> f64 {
        self.curves[s].last().copied().unwrap_or(f64::NAN)
    }
}

/// Runs `base` (with every iteration recorded) for each batch schedule and
/// averages the squared full-gradient norms over seeds.
pub fn rate_experiment(workload: &Workload, base: &ExperimentConfig, schedules: &[BatchSchedule]) -> Result<RateFit> {
    let mut curves = Vec::with_capacity(schedules.len());
    let mut diverged = Vec::with_capacity(schedules.len());
    for sched in schedules {
        let mut config = base.clone();
        config.optimizer.batch = *sched;
        config.cadence = Some(1);
        let outcomes = run_on(workload, &config)?;
        let kept: Vec<_> = outcomes.iter().filter(|o| o.status == RunStatus::Completed).collect();
        diverged.push(outcomes.len() - kept.len());
        let k_max = config.iters as usize;
        let mut curve = Vec::with_capacity(k_max);
        let mut acc = 0.0;
        for k in 0..k_max {
            let mean_sq = kept.iter().map(|o| o.records[k].gnorm_train.powi(2)).sum::<f64>() / kept.len().max(1) as f64;
            acc += mean_sq;
            curve.push(if kept.is_empty() {
                f64::NAN
            } else {
                acc / (k + 1) as f64
            });
        }
        curves.push(curve);
    }
    let coefficients = fit_rate(schedules, &curves);
    Ok(RateFit {
        schedules: schedules.to_vec(),
        curves,
        diverged,
        coefficients,
    })
}

fn fit_rate(schedules: &[BatchSchedule], curves: &[Vec<f64>]) -> Option<(f64, f64)> {
    use crate::optim::BatchGrowth;
    let mut ata = [[0.0; 2]; 2];
    let mut atb = [0.0; 2];
    let mut used = 0;
    for (s, curve) in schedules.iter().zip(curves) {
        if s.growth != BatchGrowth::Constant || curve.iter().any(|v| !v.is_finite()) {
            continue;
        }
        used += 1;
        let b = s.size(1) as f64;
        let len = curve.len();
        for k in (len / 10).max(1)..=len {
            let row = [1.0 / k as f64, 1.0 / b];
            let y = curve[k - 1];
            for i in 0..2 {
                atb[i] += row[i] * y;
                for j in 0..2 {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
    }
    let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
    if used < 2 || det.abs() < 1e-300 {
        return None;
    }
    Some((
        (atb[0] * ata[1][1] - atb[1] * ata[0][1]) / det,
        (atb[1] * ata[0][0] - atb[0] * ata[1][0]) / det,
    ))
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            pass: value <= limit,
        }
    }

    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            pass: value < limit,
        }
    }
}

pub fn report_text(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        writeln!(
            s,
            "{} {:<48} value={:.3e} limit={:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.limit
        )
        .unwrap();
    }
    s
}

pub fn report_csv(checks: &[Check]) -> String {
    let mut s = String::from("check,value,limit,pass\n");
    for c in checks {
        writeln!(s, "{},{:e},{:e},{}", c.name, c.value, c.limit, c.pass).unwrap();
    }
    s
}

/// Fast oracle checks on small synthetic instances: gradient agreement,
/// exhaustive mini-batch moments, retraction order and AMSGrad bounds.
pub fn standard_checks(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let pca = crate::data::synth_pca(8, 2, 40, 0.2, seed)?.dataset.to_pca(2)?;
    checks.push(Check::below(
        "pca gradient vs finite differences",
        worst_gradient_error(&pca, 5, 20, 1e-5, seed)?,
        1e-5,
    ));
    let lrmc = crate::data::synth_lrmc(8, 6, 2, 0.6, 0.1, seed)?.ratings.to_lrmc(2)?;
    checks.push(Check::below(
        "lrmc gradient vs finite differences",
        worst_gradient_error(&lrmc, 5, 20, 1e-5, seed)?,
        1e-4,
    ));

    let small = crate::data::synth_pca(5, 2, 4, 0.5, seed)?.dataset.to_pca(2)?;
    let x = small.manifold().random_point(seed);
    let (mean, dev) = exhaustive_batch_moments(&small, &x, 2)?;
    let full = small.full_grad(&x)?;
    checks.push(Check::at_most(
        "mini-batch mean equals full gradient",
        (mean.values() - full.values()).norm(),
        1e-12,
    ));
    let var = sample_variance(&small, &x)?;
    checks.push(Check::at_most(
        "mini-batch deviation equals variance / b",
        (dev - var / 2.0).abs(),
        1e-12,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (label, m) in [("qr", Manifold::stiefel(6, 3)?), ("polar", Manifold::grassmann(6, 3)?)] {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let x = m.random_point_with(&mut rng);
            let eta = m.random_tangent(&x, &mut rng)?;
            let eta = eta.scaled(1.0 / eta.norm());
            worst = worst.max(retraction_order_ratio(&m, &x, &eta)?);
        }
        checks.push(Check::at_most(format!("{label} retraction defect ratio"), worst, 0.02));
    }

    let spec = OptimizerSpec::new(
        Method::RAmsGrad,
        StepSchedule::Diminishing(0.1),
        BatchSchedule::constant(1),
    );
    let report = check_amsgrad_stream(&spec, 8, adversarial_stream(8, 2000, 3.0, seed), 3.0)?;
    checks.push(Check::at_most(
        "amsgrad v_hat bound (B = 3)",
        report.max_v_hat,
        9.0 + 1e-12,
    ));
    checks.push(Check::at_most(
        "amsgrad effective step monotone",
        if report.monotone && report.sandwich { 0.0 } else { 1.0 },
        0.0,
    ));
    Ok(checks)
}
