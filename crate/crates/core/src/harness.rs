//! Experiment runner: seeded trials, per-iteration metrics, step-size grid
//! search and iterations-to-threshold tables.
//!
//! Trials are independent and run on a work pool when the `parallel`
//! feature is enabled; each trial is a sequential loop over the optimizer.
//! Results are always returned in input order so output files do not depend
//! on scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, DenseDataset, SparseRatings};
use crate::error::{Error, Result};
use crate::manifold::{Point, Tangent};
use crate::optim::{BatchGrowth, BatchSchedule, Method, Optimizer, OptimizerSpec, StepInfo, StepSchedule};
use crate::problems::{sample_batch, Problem};

/// Exact header of the metrics CSV.
pub const METRICS_HEADER: &str = "k,alpha_k,b_k,f_train,f_test,gnorm_train,gnorm_test,elapsed_s";

/// Objective values above this count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// `{10⁻¹, …, 10⁻⁸}`.
pub const DEFAULT_ALPHAS: [f64; 8] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Pca,
    Lrmc,
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(ProblemKind::Pca),
            "lrmc" => Ok(ProblemKind::Lrmc),
            _ => Err(Error::Contract(format!("unknown problem `{s}`"))),
        }
    }
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Pca => "pca",
            ProblemKind::Lrmc => "lrmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    SynthPca {
        n: usize,
        p: usize,
        count: usize,
        noise: f64,
        seed: u64,
    },
    SynthLrmc {
        n: usize,
        count: usize,
        p: usize,
        obs: f64,
        noise: f64,
        seed: u64,
    },
    /// IDX images or a dense CSV, chosen by content.
    Dense(PathBuf),
    Ratings {
        path: PathBuf,
        delimiter: String,
    },
}

impl DataSource {
    /// Parses `synth:key=value,...` or a file path.
    ///
    /// PCA keys: `n`, `p`, `N`, `noise`, `seed`. LRMC keys: `n`, `N`, `p`,
    /// `obs`, `noise`, `seed`.
    pub fn parse(spec: &str, kind: ProblemKind, delimiter: &str) -> Result<Self> {
        let Some(rest) = spec.strip_prefix("synth") else {
            let path = PathBuf::from(spec);
            return Ok(match kind {
                ProblemKind::Pca => DataSource::Dense(path),
                ProblemKind::Lrmc => DataSource::Ratings {
                    path,
                    delimiter: delimiter.to_string(),
                },
            });
        };
        let rest = rest.strip_prefix(':').unwrap_or(rest);
        let mut kv = BTreeMap::new();
        for part in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Contract(format!("bad synthetic data field `{part}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str, default: &str| -> String { kv.get(k).cloned().unwrap_or_else(|| default.to_string()) };
        let source = match kind {
            ProblemKind::Pca => DataSource::SynthPca {
                n: parse_field("n", &get("n", "20"))?,
                p: parse_field("p", &get("p", "3"))?,
                count: parse_field("N", &get("N", "512"))?,
                noise: parse_field("noise", &get("noise", "0.1"))?,
                seed: parse_field("seed", &get("seed", "0"))?,
            },
            ProblemKind::Lrmc => DataSource::SynthLrmc {
                n: parse_field("n", &get("n", "30"))?,
                count: parse_field("N", &get("N", "60"))?,
                p: parse_field("p", &get("p", "3"))?,
                obs: parse_field("obs", &get("obs", "0.5"))?,
                noise: parse_field("noise", &get("noise", "0"))?,
                seed: parse_field("seed", &get("seed", "0"))?,
            },
        };
        if let Some(k) = kv
            .keys()
            .find(|k| !["n", "p", "N", "noise", "seed", "obs"].contains(&k.as_str()))
        {
            return Err(Error::Contract(format!("unknown synthetic data field `{k}`")));
        }
        Ok(source)
    }

    fn planted_rank(&self) -> Option<usize> {
        match *self {
            DataSource::SynthPca { p, .. } | DataSource::SynthLrmc { p, .. } => Some(p),
            _ => None,
        }
    }
}

fn parse_field<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Contract(format!("invalid value `{v}` for `{key}`")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub data: DataSource,
    /// Target rank `p`; defaults to the planted rank for synthetic data and
    /// 10 otherwise.
    pub rank: Option<usize>,
    /// Training fraction; `None` trains on everything and skips test metrics.
    pub split: Option<f64>,
    pub split_seed: u64,
    /// `(scale, shift)` applied to every observed rating before splitting.
    pub rescale: Option<(f64, f64)>,
}

/// Training objective plus an optional held-out objective.
pub struct Workload {
    pub train: Box<dyn Problem + Send>,
    pub test: Option<Box<dyn Problem + Send>>,
}

impl ProblemSpec {
    pub fn rank(&self) -> usize {
        self.rank.or(self.data.planted_rank()).unwrap_or(10)
    }

    pub fn load(&self) -> Result<Workload> {
        let p = self.rank();
        match self.kind {
            ProblemKind::Pca => {
                let ds = match &self.data {
                    &DataSource::SynthPca {
                        n,
                        p,
                        count,
                        noise,
                        seed,
                    } => data::synth_pca(n, p, count, noise, seed)?.dataset,
                    DataSource::Dense(path) => load_dense(path)?,
                    other => return Err(Error::Contract(format!("{other:?} is not PCA data"))),
                };
                let (train, test) = match self.split {
                    Some(f) => {
                        let (a, b) = data::split_dense(&ds, f, self.split_seed)?;
                        (a, Some(b))
                    }
                    None => (ds, None),
                };
                Ok(Workload {
                    train: Box::new(train.to_pca(p)?),
                    test: match test {
                        Some(t) => Some(Box::new(t.to_pca(p)?)),
                        None => None,
                    },
                })
            }
            ProblemKind::Lrmc => {
                let ratings = match &self.data {
                    &DataSource::SynthLrmc {
                        n,
                        count,
                        p,
                        obs,
                        noise,
                        seed,
                    } => data::synth_lrmc(n, count, p, obs, noise, seed)?.ratings,
                    DataSource::Ratings { path, delimiter } => data::read_ratings_csv(path, delimiter)?,
                    other => return Err(Error::Contract(format!("{other:?} is not matrix-completion data"))),
                };
                let mut ratings = ratings;
                if let Some((scale, shift)) = self.rescale {
                    ratings.rescale(scale, shift);
                }
                let (train, test): (SparseRatings, Option<SparseRatings>) = match self.split {
                    Some(f) => {
                        let (a, b) = data::split_ratings(&ratings, f, self.split_seed)?;
                        (a, Some(b))
                    }
                    None => (ratings, None),
                };
                Ok(Workload {
                    train: Box::new(train.to_lrmc(p)?),
                    test: match test {
                        Some(t) => Some(Box::new(t.to_lrmc(p)?)),
                        None => None,
                    },
                })
            }
        }
    }
}

fn load_dense(path: &Path) -> Result<DenseDataset> {
    let head = fs::read(path).map_err(|e| Error::io(path, e))?;
    if head.len() >= 4 && u32::from_be_bytes([head[0], head[1], head[2], head[3]]) == data::IDX_UBYTE_3D {
        data::read_idx(path)
    } else {
        data::read_dense_csv(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    pub seeds: Vec<u64>,
    /// Number of iterations `K`.
    pub iters: u64,
    pub threshold: f64,
    /// Record every `cadence` iterations; `None` picks a default from `K`.
    pub cadence: Option<u64>,
    pub out: Option<PathBuf>,
    /// Measure wall-clock time. Off by default so metric files are
    /// reproducible byte for byte.
    pub timing: bool,
}

impl ExperimentConfig {
    /// Builds a config from `key=value` settings whose keys mirror the CLI
    /// flags (`problem`, `method`, `step`, `alpha`, `batch`,
    /// `batch-schedule`, `iters`, `seeds`, `threshold`, `data`, `out`,
    /// `rank`, `split`, `split-seed`, `delimiter`, `beta1`, `beta2`, `eps`,
    /// `cadence`, `timing`, `adam-bias`, `rescale`).
    pub fn from_settings(settings: &BTreeMap<String, String>) -> Result<Self> {
        const KNOWN: [&str; 22] = [
            "problem",
            "method",
            "step",
            "alpha",
            "batch",
            "batch-schedule",
            "iters",
            "seeds",
            "threshold",
            "data",
            "out",
            "rank",
            "split",
            "split-seed",
            "delimiter",
            "beta1",
            "beta2",
            "eps",
            "cadence",
            "timing",
            "adam-bias",
            "rescale",
        ];
        if let Some(k) = settings.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::Contract(format!("unknown setting `{k}`")));
        }
        let get = |k: &str| settings.get(k).map(String::as_str);

        let kind: ProblemKind = get("problem").unwrap_or("pca").parse()?;
        let delimiter = get("delimiter").unwrap_or(",");
        let data = DataSource::parse(get("data").unwrap_or("synth"), kind, delimiter)?;
        let split = match get("split") {
            None => match data {
                DataSource::Dense(_) | DataSource::Ratings { .. } => Some(0.8),
                _ => None,
            },
            Some(s) => {
                let f: f64 = parse_field("split", s)?;
                (f < 1.0).then_some(f)
            }
        };
        let problem = ProblemSpec {
            kind,
            data,
            rank: get("rank").map(|v| parse_field("rank", v)).transpose()?,
            split,
            split_seed: get("split-seed")
                .map(|v| parse_field("split-seed", v))
                .transpose()?
                .unwrap_or(0),
            rescale: get("rescale").map(parse_rescale).transpose()?,
        };
        if problem.rescale.is_some() && kind != ProblemKind::Lrmc {
            return Err(Error::Contract("rescale applies to ratings only".into()));
        }

        let method: Method = get("method").unwrap_or("ramsgrad").parse()?;
        let alpha: f64 = parse_field("alpha", get("alpha").unwrap_or("1e-3"))?;
        let step = match get("step").unwrap_or("constant") {
            "constant" => StepSchedule::Constant(alpha),
            "diminishing" => StepSchedule::Diminishing(alpha),
            other => return Err(Error::Contract(format!("unknown step schedule `{other}`"))),
        };
        let default_batch = match kind {
            ProblemKind::Pca => "1024",
            ProblemKind::Lrmc => "256",
        };
        let b0: usize = parse_field("batch", get("batch").unwrap_or(default_batch))?;
        let batch = match get("batch-schedule") {
            None | Some("constant") => BatchSchedule::constant(b0),
            Some(s) => parse_batch_schedule(s, b0)?,
        };
        let mut optimizer = OptimizerSpec::new(method, step, batch);
        if let Some(v) = get("beta1") {
            optimizer.beta1 = parse_field("beta1", v)?;
        }
        if let Some(v) = get("beta2") {
            optimizer.beta2 = parse_field("beta2", v)?;
        }
        if let Some(v) = get("eps") {
            optimizer.eps = parse_field("eps", v)?;
        }
        match get("adam-bias") {
            None | Some("shifted") => {}
            Some("standard") => optimizer.adam_bias = crate::optim::AdamBias::Standard,
            Some(other) => return Err(Error::Contract(format!("unknown adam-bias `{other}`"))),
        }
        optimizer.validate()?;

        let seeds = parse_list::<u64>("seeds", get("seeds").unwrap_or("0,1,2"))?;
        let config = ExperimentConfig {
            problem,
            optimizer,
            seeds,
            iters: parse_field("iters", get("iters").unwrap_or("1000"))?,
            threshold: parse_field("threshold", get("threshold").unwrap_or("2"))?,
            cadence: get("cadence").map(|v| parse_field("cadence", v)).transpose()?,
            out: get("out").map(PathBuf::from),
            timing: get("timing")
                .map(|v| parse_field("timing", v))
                .transpose()?
                .unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Contract("iters must be at least 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Contract("threshold must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Contract("at least one seed is required".into()));
        }
        if self.cadence == Some(0) {
            return Err(Error::Contract("cadence must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    /// Every iteration for `K ≤ 2000`, else every `⌈K/2000⌉`.
    pub fn effective_cadence(&self) -> u64 {
        self.cadence.unwrap_or_else(|| self.iters.div_ceil(2000).max(1))
    }
}

/// `scale:shift`
fn parse_rescale(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Contract(format!("rescale must be `scale:shift`, got `{s}`")))?;
    let pair: (f64, f64) = (parse_field("rescale", a)?, parse_field("rescale", b)?);
    if !(pair.0.is_finite() && pair.1.is_finite()) || pair.0 == 0.0 {
        return Err(Error::Contract(format!(
            "rescale needs a finite nonzero scale, got `{s}`"
        )));
    }
    Ok(pair)
}

/// `exp:δ:period`.
pub fn parse_batch_schedule(s: &str, b0: usize) -> Result<BatchSchedule> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["exp", delta, period] => {
            BatchSchedule::exponential(b0, parse_field("delta", delta)?, parse_field("period", period)?)
        }
        _ => Err(Error::Contract(format!(
            "batch schedule `{s}` is not `exp:delta:period`"
        ))),
    }
}

pub fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_field(key, v))
        .collect()
}

/// Parses a flat `key=value` file. `#` starts a comment line.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        out.insert(k.trim().trim_start_matches("--").to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub k: u64,
    pub alpha_k: f64,
    pub b_k: usize,
    pub f_train: f64,
    pub f_test: f64,
    pub gnorm_train: f64,
    pub gnorm_test: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { k: u64, reason: String },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub status: RunStatus,
    pub final_point: Point,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn final_f_train(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.f_train)
    }
}

/// Called after every iteration with `(k, mini-batch gradient, step info)`.
pub type StepObserver<'a> = dyn FnMut(u64, &Tangent, &StepInfo) + 'a;

/// One seeded trial. The seed picks the initial point and the mini-batch
/// stream.
pub fn run_trial(workload: &Workload, config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    run_trial_observed(workload, config, seed, None)
}

pub fn run_trial_observed(
    workload: &Workload,
    config: &ExperimentConfig,
    seed: u64,
    mut observer: Option<&mut StepObserver<'_>>,
) -> Result<RunOutcome> {
    config.validate()?;
    let train = workload.train.as_ref();
    let manifold = train.manifold();
    let n = train.num_samples();
    let mut spec = config.optimizer;
    spec.batch = spec.batch.with_cap(n);
    let mut opt = Optimizer::new(spec, manifold)?;

    let mut x = manifold.random_point(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let cadence = config.effective_cadence();
    let clock = config.timing.then(std::time::Instant::now);
    let mut records = Vec::new();
    let mut status = RunStatus::Completed;

    for k in 1..=config.iters + 1 {
        let last = k == config.iters + 1;
        if (k - 1) % cadence == 0 || last {
            let rec = measure(workload, &x, k, &spec, clock)?;
            let bad = !rec.f_train.is_finite() || rec.f_train > DIVERGENCE_LIMIT || !rec.gnorm_train.is_finite();
            records.push(rec);
            if bad {
                status = RunStatus::Diverged {
                    k,
                    reason: format!("objective {}", rec.f_train),
                };
                break;
            }
        }
        if last {
            break;
        }
        let batch = sample_batch(&mut rng, n, opt.batch_size());
        let g = train.minibatch_grad(&x, &batch)?;
        match opt.step(manifold, &x, &g) {
            Ok((next, info)) => {
                if let Some(obs) = observer.as_mut() {
                    obs(k, &g, &info);
                }
                x = next;
            }
            Err(e @ (Error::NonFinite(_) | Error::Numerical(_))) => {
                status = RunStatus::Diverged {
                    k,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutcome {
        seed,
        records,
        status,
        final_point: x,
    })
}

fn measure(
    workload: &Workload,
    x: &Point,
    k: u64,
    spec: &OptimizerSpec,
    clock: Option<std::time::Instant>,
) -> Result<RunRecord> {
    let train = workload.train.as_ref();
    let (f_test, gnorm_test) = match &workload.test {
        Some(t) => (t.value(x)?, t.full_grad(x)?.norm()),
        None => (f64::NAN, f64::NAN),
    };
    Ok(RunRecord {
        k,
        alpha_k: spec.step.alpha(k)?,
        b_k: spec.batch.size(k),
        f_train: train.value(x)?,
        f_test,
        gnorm_train: train.full_grad(x)?.norm(),
        gnorm_test,
        elapsed_s: clock.map_or(0.0, |c| c.elapsed().as_secs_f64()),
    })
}

/// Runs every seed of `config`.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    let workload = config.problem.load()?;
    run_on(&workload, config)
}

pub fn run_on(workload: &Workload, config: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    par_map(&config.seeds, |&s| run_trial(workload, config, s))
        .into_iter()
        .collect()
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// First recorded `k` whose training full-gradient norm is below `tau`.
pub fn iterations_to_threshold(records: &[RunRecord], tau: f64) -> Option<u64> {
    records.iter().find(|r| r.gnorm_train < tau).map(|r| r.k)
}

/// Writes records as CSV with [`METRICS_HEADER`].
pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{},{:e},{},{:e},{:e},{:e},{:e},{:.6}",
            r.k, r.alpha_k, r.b_k, r.f_train, r.f_test, r.gnorm_train, r.gnorm_test, r.elapsed_s
        )
        .expect("write to String");
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

/// File name for one trial's metrics.
pub fn trial_file_name(config: &ExperimentConfig, seed: u64) -> String {
    let spec = &config.optimizer;
    let step = match spec.step {
        StepSchedule::Constant(_) => "const",
        StepSchedule::Diminishing(_) => "dim",
    };
    let batch = match spec.batch.growth {
        BatchGrowth::Constant => format!("b{}", spec.batch.initial),
        BatchGrowth::Exponential { delta, period } => format!("b{}x{delta}p{period}", spec.batch.initial),
    };
    format!(
        "{}_{}_{}_a{:e}_{}_seed{}.csv",
        config.problem.kind.name(),
        spec.method,
        step,
        spec.step.initial(),
        batch,
        seed
    )
}

/// Writes each outcome's metrics under `dir`; returns the paths written.
pub fn write_outcomes(dir: &Path, config: &ExperimentConfig, outcomes: &[RunOutcome]) -> Result<Vec<PathBuf>> {
    outcomes
        .iter()
        .map(|o| {
            let path = dir.join(trial_file_name(config, o.seed));
            write_metrics_csv(&path, &o.records).map(|_| path)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridEntry {
    pub alpha: f64,
    pub outcomes: Vec<RunOutcome>,
    /// Mean final training objective; `None` if any seed diverged.
    pub mean_final: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// `None` when every step size diverged.
    pub best: Option<f64>,
    pub entries: Vec<GridEntry>,
}

/// Tries every initial step size in `alphas` on every seed and picks the one
/// with the smallest mean final training objective. A step size diverging on
/// any seed is never selected; ties go to the smaller step size.
pub fn grid_search(config: &ExperimentConfig, alphas: &[f64]) -> Result<GridResult> {
    let workload = config.problem.load()?;
    grid_search_on(&workload, config, alphas)
}

pub fn grid_search_on(workload: &Workload, config: &ExperimentConfig, alphas: &[f64]) -> Result<GridResult> {
    if alphas.is_empty() {
        return Err(Error::Contract("step-size grid is empty".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..alphas.len())
        .flat_map(|i| config.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let configs: Vec<ExperimentConfig> = alphas.iter().map(|&a| with_alpha(config, a)).collect();
    let results = par_map(&jobs, |&(i, s)| run_trial(workload, &configs[i], s));

    let mut per_alpha: Vec<Vec<RunOutcome>> = vec![Vec::new(); alphas.len()];
    for (&(i, _), r) in jobs.iter().zip(results) {
        per_alpha[i].push(r?);
    }
    let entries: Vec<GridEntry> = alphas
        .iter()
        .zip(per_alpha)
        .map(|(&alpha, outcomes)| {
            let ok = outcomes.iter().all(|o| !o.diverged() && o.final_f_train().is_finite());
            let mean_final =
                ok.then(|| outcomes.iter().map(RunOutcome::final_f_train).sum::<f64>() / outcomes.len() as f64);
            GridEntry {
                alpha,
                outcomes,
                mean_final,
            }
        })
        .collect();
    let best = entries
        .iter()
        .filter_map(|e| e.mean_final.map(|m| (e.alpha, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|(a, _)| a);
    Ok(GridResult { best, entries })
}

pub fn with_alpha(config: &ExperimentConfig, alpha: f64) -> ExperimentConfig {
    let mut c = config.clone();
    c.optimizer.step = c.optimizer.step.with_initial(alpha);
    c
}

pub fn with_method(config: &ExperimentConfig, method: Method) -> ExperimentConfig {
    let mut c = config.clone();
    c.optimizer.method = method;
    c
}

pub fn with_batch(config: &ExperimentConfig, b: usize) -> ExperimentConfig {
    let mut c = config.clone();
    c.optimizer.batch.initial = b;
    c
}

#[derive(Debug, Clone)]
pub struct TableCell {
    pub method: Method,
    pub alpha: f64,
    pub batch: usize,
    pub per_seed: Vec<Option<u64>>,
    pub outcomes: Vec<RunOutcome>,
}

impl TableCell {
    /// Mean iterations over seeds when every seed reached the threshold.
    pub fn mean(&self) -> Option<f64> {
        let hits: Option<Vec<u64>> = self.per_seed.iter().copied().collect();
        hits.map(|h| h.iter().sum::<u64>() as f64 / h.len() as f64)
    }

    /// Mean with misses counted as `censor`.
    pub fn censored_mean(&self, censor: u64) -> f64 {
        self.per_seed.iter().map(|h| h.unwrap_or(censor) as f64).sum::<f64>() / self.per_seed.len() as f64
    }
}

/// Iterations-to-threshold for every `(method, α)` pair and batch size.
pub fn threshold_table(
    workload: &Workload,
    config: &ExperimentConfig,
    methods: &[(Method, f64)],
    batches: &[usize],
) -> Result<Vec<TableCell>> {
    let mut cells = Vec::new();
    for &(method, alpha) in methods {
        for &b in batches {
            let c = with_batch(&with_alpha(&with_method(config, method), alpha), b);
            let outcomes = run_on(workload, &c)?;
            let per_seed = outcomes
                .iter()
                .map(|o| iterations_to_threshold(&o.records, config.threshold))
                .collect();
            cells.push(TableCell {
                method,
                alpha,
                batch: b,
                per_seed,
                outcomes,
            });
        }
    }
    Ok(cells)
}

/// `method,alpha,b,<seed columns>,mean` with `-` for a missed threshold.
pub fn table_csv(cells: &[TableCell], seeds: &[u64]) -> String {
    let mut s = String::from("method,alpha,b");
    for seed in seeds {
        write!(s, ",seed{seed}").unwrap();
    }
    s.push_str(",mean\n");
    for c in cells {
        write!(s, "{},{:e},{}", c.method, c.alpha, c.batch).unwrap();
        for h in &c.per_seed {
            match h {
                Some(k) => write!(s, ",{k}").unwrap(),
                None => s.push_str(",-"),
            }
        }
        match c.mean() {
            Some(m) => writeln!(s, ",{m}").unwrap(),
            None => s.push_str(",-\n"),
        }
    }
    s
}
