use std::path::PathBuf;
use std::process::ExitCode;

use cd_anneal::harness::{self, Check, RunConfig};
use cd_anneal::Error;
use clap::{Args, Parser, Subcommand};

/// Contrastive divergence with annealed learning rates: experiments and
/// checks of the convergence theory.
#[derive(Debug, Parser)]
#[command(name = "cd-anneal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (n, m, seed) cell and write trajectories, diagnostics and plot data.
    Run(Common),
    /// Compute the model constants and check the assumptions.
    Verify(Common),
    /// Run the experiment and fit the rate of δ_n in n.
    Rate(Common),
    /// Re-run the diagnostics on trajectories stored under the output directory.
    Diagnose(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECKS: u8 = 3;

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if self.workers == Some(0) {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn slack(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |s| format!("{s:e}"))
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn execute(command: &Command, cfg: &RunConfig) -> Result<bool, Error> {
    let out = cfg.out_dir.as_path();
    match command {
        Command::Run(_) => {
            let result = harness::run(cfg, out)?;
            for v in result.merged_verdicts() {
                println!("{}: {} steps, {} violations, worst slack {}", v.check, v.steps, v.violations, slack(v.worst_slack));
            }
            println!("wrote {} cells to {}", result.cells.len(), out.display());
            Ok(true)
        }
        Command::Verify(_) => {
            harness::output::ensure_writable(out)?;
            let report = harness::verify_assumptions(cfg)?;
            harness::write_assumptions(&report, out)?;
            print_checks(&report.checks);
            Ok(true)
        }
        Command::Rate(_) => {
            harness::output::ensure_writable(out)?;
            let report = harness::rate_sweep(cfg, out)?;
            for (m, fit) in &report.fits {
                println!("m = {m}: slope {:.4}, intercept {:.4}", fit.slope, fit.intercept);
            }
            print_checks(&report.checks);
            Ok(report.passed())
        }
        Command::Diagnose(_) => {
            harness::output::ensure_writable(out)?;
            let report = harness::diagnose(cfg, out)?;
            for v in &report.merged {
                println!(
                    "{} {}: {} steps, {} violations, worst slack {}",
                    if v.passed() { "PASS" } else { "FAIL" },
                    v.check,
                    v.steps,
                    v.violations,
                    slack(v.worst_slack)
                );
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Run(c) | Command::Verify(c) | Command::Rate(c) | Command::Diagnose(c) => c,
    };
    let cfg = match common.load() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = common.workers {
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    match pool.install(|| execute(&cli.command, &cfg)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECKS),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Unwritable { .. } | Error::InvalidSchedule(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_FAILURE),
            }
        }
    }
}
