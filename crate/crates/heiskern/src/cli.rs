//! Command-line entry point.

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;

use crate::config::{ExperimentConfig, Overrides};
use crate::exec::Pool;
use crate::experiments::{find, list_table, Context, EXPERIMENTS};
use crate::formats::SkewFormJson;
use crate::report::{self, Outcome, Summary, Timestamp};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Monte Carlo experiments on step-two nilpotent groups.
///
/// Settings are taken from built-in defaults, then the --config file, then
/// the flags below; later sources win.
#[derive(Debug, Parser)]
#[command(name = "heiskern", version)]
pub struct Cli {
    /// Experiment to run, or `list` to describe them.
    pub experiment: String,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time steps per path.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory; defaults to `heiskern-out/<experiment>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "HEISKERN_THREADS")]
    pub threads: Option<usize>,
    /// Do not print per-check lines.
    #[arg(long, short)]
    pub quiet: bool,
}

/// The effective configuration for `cli`.
pub fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = &cfg.experiment {
        if name != &cli.experiment {
            anyhow::bail!("config is for experiment {name:?} but {:?} was requested", cli.experiment);
        }
    }
    cfg.experiment = Some(cli.experiment.clone());
    cfg.apply(&Overrides { seed: cli.seed, n_paths: cli.paths, n_steps: cli.steps, out: cli.out.clone() });
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the configured experiment on `pool`.
pub fn execute(cfg: &ExperimentConfig, pool: &Pool) -> anyhow::Result<(Summary, Outcome)> {
    let name = cfg.experiment.as_deref().unwrap_or_default();
    let exp = find(name).ok_or_else(|| {
        let known: Vec<&str> = EXPERIMENTS.iter().map(|e| e.name).collect();
        anyhow::anyhow!("unknown experiment {name:?}; expected one of {}", known.join(", "))
    })?;
    let form = cfg.form.build()?;
    let ctx = Context {
        exec: pool,
        form: form.clone(),
        horizon: cfg.horizon,
        mc: cfg.mc.into(),
        tol: cfg.tolerance,
        params: serde_json::Value::Object(cfg.params.clone()),
    };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let clock = Instant::now();
    let outcome = (exp.run)(&ctx)?;
    let summary = Summary {
        experiment: name.to_string(),
        pass: outcome.pass(),
        config_hash: cfg.hash(),
        seed: cfg.mc.seed,
        n_paths: cfg.mc.n_paths,
        n_steps: cfg.mc.n_steps,
        horizon: cfg.horizon,
        form: SkewFormJson::from(&form),
        tolerance: cfg.tolerance,
        params: outcome.params.clone(),
        checks: outcome.checks.clone(),
        results: outcome.results.clone(),
        timestamp: Timestamp { started_unix_ms: started, wall_time_seconds: clock.elapsed().as_secs_f64() },
    };
    Ok((summary, outcome))
}

fn run_parsed(cli: &Cli) -> anyhow::Result<i32> {
    if cli.experiment == "list" {
        print!("{}", list_table());
        return Ok(EXIT_PASS);
    }
    let cfg = resolve(cli)?;
    let pool = match cli.threads {
        Some(n) if n > 0 => Pool::new(n)?,
        Some(_) => anyhow::bail!("--threads must be positive"),
        None => Pool::available()?,
    };
    let (summary, outcome) = execute(&cfg, &pool)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("heiskern-out").join(&summary.experiment));
    report::write(&dir, &summary, &outcome.detail, &outcome.extra)?;
    if !cli.quiet {
        for c in &summary.checks {
            println!("{} {}", if c.pass { "pass" } else { "FAIL" }, c.name);
        }
    }
    let failed = summary.checks.iter().filter(|c| !c.pass).count();
    println!(
        "{}: {} of {} checks passed in {:.1} s; report in {}",
        summary.experiment,
        summary.checks.len() - failed,
        summary.checks.len(),
        summary.timestamp.wall_time_seconds,
        dir.display()
    );
    Ok(if summary.pass { EXIT_PASS } else { EXIT_FAIL })
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match run_parsed(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}
