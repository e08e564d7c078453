use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wmlr_bench::checks::{self, CheckOutcome};
use wmlr_bench::experiment::{generate, run_experiment};
use wmlr_bench::reproduce::{self, Scale, Table};
use wmlr_bench::sweep::{sweep, write_sweep, Grid, Selection, Spacing, SweepParam, SweepSpec};
use wmlr_bench::{presets, Algorithm, ExperimentConfig, HarnessError, Overrides, Result};

#[derive(Parser)]
#[command(name = "wmlr", version, about = "Mixed linear regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset a configuration would run on.
    Generate(Exp),
    /// Run one experiment and write its log and summary.
    Run(Exp),
    /// Evaluate a log-spaced grid of one hyperparameter and keep the best point.
    Sweep {
        #[command(flatten)]
        exp: Exp,
        #[command(flatten)]
        grid: SweepArgs,
    },
    /// Re-run a results table and compare every cell with its band.
    Reproduce {
        #[arg(long, value_enum)]
        table: Table,
        #[arg(long, value_enum, default_value_t = Scale::Desk)]
        scale: Scale,
        #[arg(long, default_value = "runs/reproduce")]
        out: PathBuf,
    },
    /// Run the invariant suite (criteria 5-11; `--all` adds the experiment criteria 1-4).
    Check {
        #[arg(long)]
        all: bool,
        /// Run only these criteria.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

#[derive(Args)]
struct Exp {
    /// Experiment configuration JSON.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset, e.g. centralized-snr10-n10k or federated-snr20-m1k.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep specification JSON; replaces the grid flags below.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Param::Lambda)]
    param: Param,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0.1)]
    lo: f64,
    #[arg(long, default_value_t = 2.0)]
    hi: f64,
    #[arg(long, value_enum, default_value_t = Select::MinFinalNll)]
    select: Select,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Lambda,
    Alpha,
}

#[derive(Clone, Copy, ValueEnum)]
enum Select {
    MinFinalNll,
    FastestConvergence,
}

impl Exp {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => presets::by_name(name)
                .ok_or_else(|| HarnessError::Validation(format!("unknown preset {name:?}")))?,
            (None, None) => presets::by_name(presets::NAMES[0]).expect("default preset"),
        };
        let o = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            algorithm: self.algorithm,
            snr: self.snr,
            n: self.n,
            agents: self.agents,
            lambda: self.lambda,
            alpha: self.alpha,
            iters: self.iters,
        };
        o.apply(&mut cfg)?;
        Ok(cfg)
    }
}

impl SweepArgs {
    fn spec(&self) -> Result<SweepSpec> {
        if let Some(p) = &self.sweep {
            let text = std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", p.display())))?;
            return serde_json::from_str(&text).map_err(|e| HarnessError::Validation(format!("sweep spec: {e}")));
        }
        Ok(SweepSpec {
            parameter: match self.param {
                Param::Lambda => SweepParam::Lambda,
                Param::Alpha => SweepParam::Alpha,
            },
            grid: Grid { count: self.count, lo: self.lo, hi: self.hi, spacing: Spacing::Log },
            selection: match self.select {
                Select::MinFinalNll => Selection::MinFinalNll,
                Select::FastestConvergence => Selection::FastestConvergence,
            },
        })
    }
}

fn print_checks(results: &[CheckOutcome]) -> Result<()> {
    for r in results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(HarnessError::ChecksFailed { failed, total: results.len() });
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(exp) => {
            let cfg = exp.resolve()?;
            generate(&cfg)?;
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Run(exp) => {
            let cfg = exp.resolve()?;
            let s = run_experiment(&cfg)?;
            println!(
                "{} rel_err={} nll={} convergence_round={} wall_ms={:.0} -> {}",
                s.algorithm,
                fmt_opt(s.final_rel_err),
                fmt_opt(s.final_nll),
                s.convergence_round.map_or("-".into(), |r| r.to_string()),
                s.wall_ms,
                cfg.output_dir.display()
            );
        }
        Command::Sweep { exp, grid } => {
            let cfg = exp.resolve()?;
            let result = sweep(&cfg, &grid.spec()?)?;
            write_sweep(&result)?;
            println!("selected {} -> {}", result.best_value, cfg.output_dir.display());
        }
        Command::Reproduce { table, scale, out } => {
            let report = reproduce::reproduce(table, scale, &out)?;
            print!("{}", report.to_markdown());
            let failed = report.failed();
            if failed > 0 {
                return Err(HarnessError::ChecksFailed { failed, total: report.graded() });
            }
        }
        Command::Check { all, only } => {
            let ids: Vec<u32> = if !only.is_empty() {
                only
            } else if all {
                checks::ALL.to_vec()
            } else {
                checks::INVARIANTS.to_vec()
            };
            let results = ids.into_iter().map(checks::run).collect::<Result<Vec<_>>>()?;
            print_checks(&results)?;
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
