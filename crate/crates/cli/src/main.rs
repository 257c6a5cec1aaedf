use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use radopt::harness::{
    self, grid_search_on, iterations_to_threshold, parse_config_text, parse_list, run_on, table_csv, threshold_table,
    write_outcomes, ExperimentConfig, RunOutcome, RunStatus, DEFAULT_ALPHAS,
};
use radopt::optim::Method;
use radopt::verify;

#[derive(Parser)]
#[command(
    name = "radopt",
    version,
    about = "Adaptive stochastic optimization on matrix manifolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials and write one metrics CSV per seed.
    Run(Experiment),
    /// Search initial step sizes and report the best one.
    Grid {
        #[command(flatten)]
        exp: Experiment,
        /// Candidate initial step sizes (defaults to 1e-1 through 1e-8).
        #[arg(long)]
        alphas: Option<String>,
    },
    /// Iterations needed to bring the full gradient norm below the threshold.
    Table {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long, default_value = "rsgd,radam,ramsgrad")]
        methods: String,
        #[arg(long, default_value = "64,256,1024")]
        batches: String,
        /// Pick each method's step size from this grid at the first batch
        /// size instead of using `--alpha`.
        #[arg(long)]
        alphas: Option<String>,
    },
    /// Finite-difference and exhaustive-expectation checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `verify.txt` and `verify.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Experiment flags. Every flag mirrors a key of the config file and wins
/// over it.
#[derive(Args, Default)]
struct Experiment {
    /// Flat `key=value` file; keys match the long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["pca", "lrmc"])]
    problem: Option<String>,
    #[arg(long, value_parser = ["rsgd", "radagrad", "rrmsprop", "radam", "ramsgrad"])]
    method: Option<String>,
    #[arg(long, value_parser = ["constant", "diminishing"])]
    step: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    /// `exp:δ:period`
    #[arg(long)]
    batch_schedule: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    /// File path or `synth:key=value,...`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    /// Training fraction; 1 disables the held-out split.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    /// Field delimiter for ratings files.
    #[arg(long)]
    delimiter: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    cadence: Option<String>,
    /// Record wall-clock seconds (makes metric files differ between runs).
    #[arg(long)]
    timing: Option<String>,
    #[arg(long)]
    adam_bias: Option<String>,
    /// `scale:shift` applied to every rating.
    #[arg(long)]
    rescale: Option<String>,
}

impl Experiment {
    fn settings(&self) -> Result<BTreeMap<String, String>> {
        let mut settings = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_config_text(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => BTreeMap::new(),
        };
        let flags = [
            ("problem", &self.problem),
            ("method", &self.method),
            ("step", &self.step),
            ("alpha", &self.alpha),
            ("batch", &self.batch),
            ("batch-schedule", &self.batch_schedule),
            ("iters", &self.iters),
            ("seeds", &self.seeds),
            ("threshold", &self.threshold),
            ("data", &self.data),
            ("out", &self.out),
            ("rank", &self.rank),
            ("split", &self.split),
            ("split-seed", &self.split_seed),
            ("delimiter", &self.delimiter),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("eps", &self.eps),
            ("cadence", &self.cadence),
            ("timing", &self.timing),
            ("adam-bias", &self.adam_bias),
            ("rescale", &self.rescale),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                settings.insert(key.to_string(), v.clone());
            }
        }
        Ok(settings)
    }

    fn config(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::from_settings(&self.settings()?)?)
    }
}

fn summarize(outcomes: &[RunOutcome], threshold: f64) {
    println!("seed,status,final_f_train,final_gnorm_train,iters_to_threshold");
    for o in outcomes {
        let last = o.records.last();
        let status = match &o.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { k, .. } => format!("diverged@{k}"),
        };
        let hit = iterations_to_threshold(&o.records, threshold).map_or("-".to_string(), |k| k.to_string());
        println!(
            "{},{},{:e},{:e},{}",
            o.seed,
            status,
            last.map_or(f64::NAN, |r| r.f_train),
            last.map_or(f64::NAN, |r| r.gnorm_train),
            hit
        );
    }
}

fn write_into(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run_cmd(exp: &Experiment) -> Result<ExitCode> {
    let config = exp.config()?;
    let workload = config.problem.load()?;
    let outcomes = run_on(&workload, &config)?;
    if let Some(dir) = &config.out {
        for p in write_outcomes(dir, &config, &outcomes)? {
            log::info!("wrote {}", p.display());
        }
    }
    summarize(&outcomes, config.threshold);
    Ok(ExitCode::SUCCESS)
}

fn grid_cmd(exp: &Experiment, alphas: Option<&str>) -> Result<ExitCode> {
    let config = exp.config()?;
    let alphas = match alphas {
        Some(s) => parse_list("alphas", s)?,
        None => DEFAULT_ALPHAS.to_vec(),
    };
    let workload = config.problem.load()?;
    let result = grid_search_on(&workload, &config, &alphas)?;
    println!("alpha,mean_final_f_train");
    for e in &result.entries {
        match e.mean_final {
            Some(m) => println!("{:e},{m:e}", e.alpha),
            None => println!("{:e},diverged", e.alpha),
        }
        if let Some(dir) = &config.out {
            let c = harness::with_alpha(&config, e.alpha);
            write_outcomes(dir, &c, &e.outcomes)?;
        }
    }
    match result.best {
        Some(a) => {
            println!("best alpha {a:e}");
            Ok(ExitCode::SUCCESS)
        }
        None => {
            eprintln!("no viable step size: every candidate diverged");
            Ok(ExitCode::from(2))
        }
    }
}

fn table_cmd(exp: &Experiment, methods: &str, batches: &str, alphas: Option<&str>) -> Result<ExitCode> {
    let config = exp.config()?;
    let methods: Vec<Method> = parse_list("methods", methods)?;
    let batches: Vec<usize> = parse_list("batches", batches)?;
    if batches.is_empty() || methods.is_empty() {
        bail!("need at least one method and one batch size");
    }
    let workload = config.problem.load()?;
    let mut chosen = Vec::with_capacity(methods.len());
    for m in methods {
        let alpha = match alphas {
            Some(s) => {
                let grid = parse_list("alphas", s)?;
                let c = harness::with_batch(&harness::with_method(&config, m), batches[0]);
                match grid_search_on(&workload, &c, &grid)?.best {
                    Some(a) => a,
                    None => {
                        eprintln!("{m}: no viable step size, skipped");
                        continue;
                    }
                }
            }
            None => config.optimizer.step.initial(),
        };
        chosen.push((m, alpha));
    }
    let cells = threshold_table(&workload, &config, &chosen, &batches)?;
    let csv = table_csv(&cells, &config.seeds);
    print!("{csv}");
    if let Some(dir) = &config.out {
        write_into(dir, "table.csv", &csv)?;
        for cell in &cells {
            let c = harness::with_batch(
                &harness::with_alpha(&harness::with_method(&config, cell.method), cell.alpha),
                cell.batch,
            );
            write_outcomes(dir, &c, &cell.outcomes)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let checks = verify::standard_checks(seed)?;
    let text = verify::report_text(&checks);
    print!("{text}");
    if let Some(dir) = out {
        write_into(dir, "verify.txt", &text)?;
        write_into(dir, "verify.csv", &verify::report_csv(&checks))?;
    }
    Ok(if checks.iter().all(|c| c.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(exp) => run_cmd(exp),
        Command::Grid { exp, alphas } => grid_cmd(exp, alphas.as_deref()),
        Command::Table {
            exp,
            methods,
            batches,
            alphas,
        } => table_cmd(exp, methods, batches, alphas.as_deref()),
        Command::Verify { seed, out } => verify_cmd(*seed, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
