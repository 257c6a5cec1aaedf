//! The generic adaptive iteration
//!
//! ```text
//! m_k     = φ_k(g_1, …, g_k)
//! H_k     = ψ_k(g_1, …, g_k)            (positive diagonal)
//! x_{k+1} = R_{x_k}(−α_k P_{x_k}(H_k⁻¹ m_k))
//! ```
//!
//! with the five concrete (φ, ψ) pairs and the step-size and batch-size
//! schedules used to drive it.
//!
//! Moments live in flattened ambient coordinates. Matrices flatten in
//! column-major order, which is nalgebra's storage order, so
//! `DMatrix::as_slice` is the flattened vector. Moments are never
//! re-projected; only the final direction `H_k⁻¹ m_k` is.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rsgd,
    RAdaGrad,
    RRmsProp,
    RAdam,
    RAmsGrad,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Rsgd,
        Method::RAdaGrad,
        Method::RRmsProp,
        Method::RAdam,
        Method::RAmsGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rsgd => "rsgd",
            Method::RAdaGrad => "radagrad",
            Method::RRmsProp => "rrmsprop",
            Method::RAdam => "radam",
            Method::RAmsGrad => "ramsgrad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Contract(format!("unknown method `{s}`")))
    }
}

/// Exponent used in Adam's bias correction `1 − β^e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdamBias {
    /// `e = k + 1`.
    #[default]
    Shifted,
    /// `e = k`, the usual Euclidean Adam convention.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `α_k = α / √k`.
    Diminishing(f64),
}

impl StepSchedule {
    pub fn initial(&self) -> f64 {
        match *self {
            StepSchedule::Constant(a) | StepSchedule::Diminishing(a) => a,
        }
    }

    pub fn with_initial(self, alpha: f64) -> Self {
        match self {
            StepSchedule::Constant(_) => StepSchedule::Constant(alpha),
            StepSchedule::Diminishing(_) => StepSchedule::Diminishing(alpha),
        }
    }

    pub fn alpha(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Contract("iterations are numbered from 1".into()));
        }
        Ok(match *self {
            StepSchedule::Constant(a) => a,
            StepSchedule::Diminishing(a) => a / (k as f64).sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchGrowth {
    Constant,
    /// Multiply by `delta` every `period` iterations.
    Exponential {
        delta: f64,
        period: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSchedule {
    pub initial: usize,
    pub growth: BatchGrowth,
    /// Upper clamp, normally the number of samples `N`.
    pub cap: usize,
}

impl BatchSchedule {
    pub fn constant(b: usize) -> Self {
        BatchSchedule {
            initial: b,
            growth: BatchGrowth::Constant,
            cap: usize::MAX,
        }
    }

    pub fn exponential(b0: usize, delta: f64, period: u64) -> Result<Self> {
        if !(delta > 1.0) || period == 0 {
            return Err(Error::Contract(format!(
                "exponential batch schedule needs delta > 1 and period >= 1, got {delta}, {period}"
            )));
        }
        Ok(BatchSchedule {
            initial: b0,
            growth: BatchGrowth::Exponential { delta, period },
            cap: usize::MAX,
        })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    /// `b_k`, clamped to `[1, cap]`.
    pub fn size(&self, k: u64) -> usize {
        let b = match self.growth {
            BatchGrowth::Constant => self.initial,
            BatchGrowth::Exponential { delta, period } => {
                let e = (k / period) as i32;
                let grown = delta.powi(e) * self.initial as f64;
                if grown >= self.cap as f64 {
                    self.cap
                } else {
                    grown.floor() as usize
                }
            }
        };
        b.clamp(1, self.cap.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub method: Method,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub adam_bias: AdamBias,
    pub step: StepSchedule,
    pub batch: BatchSchedule,
}

impl OptimizerSpec {
    /// β₁ = 0.9, β₂ = 0.999, ε = 1e−8.
    pub fn new(method: Method, step: StepSchedule, batch: BatchSchedule) -> Self {
        OptimizerSpec {
            method,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            adam_bias: AdamBias::default(),
            step,
            batch,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..1.0;
        if !unit.contains(&self.beta1) || !unit.contains(&self.beta2) {
            return Err(Error::Contract("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Contract("eps must be positive".into()));
        }
        if !(self.step.initial() > 0.0) || !self.step.initial().is_finite() {
            return Err(Error::Contract("step size must be positive".into()));
        }
        if self.batch.initial == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Diagonal of `H_k`; every entry is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub diag: Vec<f64>,
}

impl Preconditioner {
    pub fn identity(dim: usize) -> Self {
        Preconditioner { diag: vec![1.0; dim] }
    }

    /// `H⁻¹ m`, elementwise.
    pub fn solve(&self, m: &[f64]) -> Vec<f64> {
        m.iter().zip(&self.diag).map(|(m, h)| m / h).collect()
    }
}

/// The sequences of maps (φ_k, ψ_k) that turn a gradient stream into a
/// first-moment vector and a diagonal preconditioner.
///
/// Within one iteration `phi` is called before `psi`, then `advance`.
pub trait MomentMaps {
    /// Current iteration index `k ≥ 1`.
    fn iteration(&self) -> u64;
    fn phi(&mut self, g: &[f64]) -> Result<Vec<f64>>;
    fn psi(&mut self, g: &[f64]) -> Result<Preconditioner>;
    fn advance(&mut self);
}

/// Moment and second-moment accumulators for the built-in methods.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    method: Method,
    beta1: f64,
    beta2: f64,
    eps: f64,
    adam_bias: AdamBias,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_hat: Vec<f64>,
    k: u64,
    poisoned: bool,
}

impl AdaptiveState {
    pub fn new(spec: &OptimizerSpec, dim: usize) -> Self {
        AdaptiveState {
            method: spec.method,
            beta1: spec.beta1,
            beta2: spec.beta2,
            eps: spec.eps,
            adam_bias: spec.adam_bias,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            v_hat: vec![0.0; dim],
            k: 1,
            poisoned: false,
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    fn bias_exponent(&self) -> i32 {
        match self.adam_bias {
            AdamBias::Shifted => (self.k + 1) as i32,
            AdamBias::Standard => self.k as i32,
        }
    }

    fn guard(&mut self, g: &[f64]) -> Result<()> {
        if self.poisoned {
            return Err(Error::NonFinite("earlier gradient"));
        }
        if g.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: (self.m.len(), 1),
                got: (g.len(), 1),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            self.poisoned = true;
            return Err(Error::NonFinite("gradient"));
        }
        Ok(())
    }

    fn diag_from(&self, second: impl Iterator<Item = f64>) -> Preconditioner {
        Preconditioner {
            diag: second.map(|s| s.sqrt() + self.eps).collect(),
        }
    }
}

impl MomentMaps for AdaptiveState {
    fn iteration(&self) -> u64 {
        self.k
    }

    fn phi(&mut self, g: &[f64]) -> Result<Vec<f64>> {
        self.guard(g)?;
        match self.method {
            Method::Rsgd | Method::RAdaGrad | Method::RRmsProp => Ok(g.to_vec()),
            Method::RAdam | Method::RAmsGrad => {
                let b1 = self.beta1;
                for (m, g) in self.m.iter_mut().zip(g) {
                    *m = b1 * *m + (1.0 - b1) * g;
                }
                if self.method == Method::RAdam {
                    let corr = 1.0 - b1.powi(self.bias_exponent());
                    Ok(self.m.iter().map(|m| m / corr).collect())
                } else {
                    Ok(self.m.clone())
                }
            }
        }
    }

    fn psi(&mut self, g: &[f64]) -> Result<Preconditioner> {
        self.guard(g)?;
        let b2 = self.beta2;
        match self.method {
            Method::Rsgd => Ok(Preconditioner::identity(g.len())),
            Method::RAdaGrad => {
                for (v, g) in self.v.iter_mut().zip(g) {
                    *v += g * g;
                }
                Ok(self.diag_from(self.v.iter().copied()))
            }
            Method::RRmsProp => {
                for (v, g) in self.v.iter_mut().zip(g) {
                    *v = b2 * *v + (1.0 - b2) * g * g;
                }
                Ok(self.diag_from(self.v.iter().copied()))
            }
            Method::RAdam => {
                for (v, g) in self.v.iter_mut().zip(g) {
                    *v = b2 * *v + (1.0 - b2) * g * g;
                }
                let corr = 1.0 - b2.powi(self.bias_exponent());
                for (vh, v) in self.v_hat.iter_mut().zip(&self.v) {
                    *vh = v / corr;
                }
                Ok(self.diag_from(self.v_hat.iter().copied()))
            }
            Method::RAmsGrad => {
                for ((v, vh), g) in self.v.iter_mut().zip(self.v_hat.iter_mut()).zip(g) {
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *vh = vh.max(*v);
                }
                Ok(self.diag_from(self.v_hat.iter().copied()))
            }
        }
    }

    fn advance(&mut self) {
        self.k += 1;
    }
}

/// Caller-supplied (φ, ψ) maps. Both closures receive `(k, g_k)`; ψ returns
/// the diagonal of `H_k`.
pub struct CustomMaps<F, G> {
    phi: F,
    psi: G,
    k: u64,
}

impl<F, G> CustomMaps<F, G>
where
    F: FnMut(u64, &[f64]) -> Vec<f64>,
    G: FnMut(u64, &[f64]) -> Vec<f64>,
{
    pub fn new(phi: F, psi: G) -> Self {
        CustomMaps { phi, psi, k: 1 }
    }
}

impl<F, G> MomentMaps for CustomMaps<F, G>
where
    F: FnMut(u64, &[f64]) -> Vec<f64>,
    G: FnMut(u64, &[f64]) -> Vec<f64>,
{
    fn iteration(&self) -> u64 {
        self.k
    }

    fn phi(&mut self, g: &[f64]) -> Result<Vec<f64>> {
        Ok((self.phi)(self.k, g))
    }

    fn psi(&mut self, g: &[f64]) -> Result<Preconditioner> {
        let diag = (self.psi)(self.k, g);
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Contract("preconditioner must be positive definite".into()));
        }
        Ok(Preconditioner { diag })
    }

    fn advance(&mut self) {
        self.k += 1;
    }
}

/// Everything one iteration produced besides the new iterate.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub alpha: f64,
    pub direction: Tangent,
    pub preconditioner: Preconditioner,
}

/// One iteration of the generic scheme: returns `x_{k+1}` and advances the maps.
pub fn step<M: MomentMaps + ?Sized>(
    manifold: &Manifold,
    x: &Point,
    g: &Tangent,
    maps: &mut M,
    alpha: f64,
) -> Result<(Point, StepInfo)> {
    let (rows, cols) = manifold.shape();
    if g.values().shape() != (rows, cols) {
        return Err(Error::Dimension {
            expected: (rows, cols),
            got: g.values().shape(),
        });
    }
    let flat = g.values().as_slice();
    let m = maps.phi(flat)?;
    let h = maps.psi(flat)?;
    let scaled = DMatrix::from_vec(rows, cols, h.solve(&m));
    let direction = manifold.project(x, &scaled)?;
    let next = manifold.retract(x, &direction.scaled(-alpha))?;
    maps.advance();
    Ok((
        next,
        StepInfo {
            alpha,
            direction,
            preconditioner: h,
        },
    ))
}

/// A configured optimizer: spec, state and schedules in one place.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    state: AdaptiveState,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, manifold: &Manifold) -> Result<Self> {
        spec.validate()?;
        Ok(Optimizer {
            state: AdaptiveState::new(&spec, manifold.ambient_dim()),
            spec,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn state(&self) -> &AdaptiveState {
        &self.state
    }

    pub fn iteration(&self) -> u64 {
        self.state.k
    }

    pub fn alpha(&self) -> f64 {
        // k ≥ 1 always holds for a live state.
        self.spec.step.alpha(self.state.k).unwrap_or(f64::NAN)
    }

    pub fn batch_size(&self) -> usize {
        self.spec.batch.size(self.state.k)
    }

    pub fn step(&mut self, manifold: &Manifold, x: &Point, g: &Tangent) -> Result<(Point, StepInfo)> {
        let alpha = self.spec.step.alpha(self.state.k)?;
        step(manifold, x, g, &mut self.state, alpha)
    }
}
