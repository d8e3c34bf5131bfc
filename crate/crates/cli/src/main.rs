use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairglite_cli::{commands, CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fairglite", version, about = "Fair graph representation learning with partly observed demographics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData(Common),
    /// Train the configured variant for every seed.
    Train(Common),
    /// Train and compare every configured variant.
    Ablate(Common),
    /// Train the full model over the `(a, b)` grid.
    Sweep(Common),
    /// Re-score a saved model on the configured data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializes"));
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.load()?;
            let seed = c.seed.unwrap_or(cfg.seeds[0]);
            let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.join(format!("data_seed{seed}")));
            let manifest = commands::gen_data(&cfg, seed, &out)?;
            print_json(&manifest);
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Train(c) => {
            let summary = commands::train(&c.load()?)?;
            report_failures(&summary.errors);
            eprintln!("results in {}", summary.dir.display());
            summary.into_result().map(drop)
        }
        Command::Ablate(c) => {
            let (summary, table) = commands::ablate(&c.load()?)?;
            println!("{:<10} {:>5} {:>16} {:>16} {:>16}", "variant", "runs", "acc", "dp", "eo");
            for row in &table {
                let f = |(m, s): (f64, f64)| format!("{m:.4} ± {s:.4}");
                println!("{:<10} {:>5} {:>16} {:>16} {:>16}", row.variant, row.runs, f(row.accuracy), f(row.delta_dp), f(row.delta_eo));
            }
            report_failures(&summary.errors);
            eprintln!("results in {}", summary.dir.display());
            summary.into_result().map(drop)
        }
        Command::Sweep(c) => {
            let (summary, trends) = commands::sweep(&c.load()?)?;
            for t in &trends {
                println!("a={}: mean dp {:?}, spearman rho {:.3}, p {:.4}", t.a, t.mean_dp, t.trend.rho, t.trend.p_negative);
            }
            report_failures(&summary.errors);
            eprintln!("results in {}", summary.dir.display());
            summary.into_result().map(drop)
        }
        Command::Evaluate { common, model } => {
            let cfg = common.load()?;
            let seed = common.seed.unwrap_or(cfg.seeds[0]);
            print_json(&commands::evaluate_model(&cfg, seed, &model)?);
            Ok(())
        }
    }
}

fn report_failures(errors: &[(String, CliError)]) {
    for (run, e) in errors {
        eprintln!("{run} failed: {e}");
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
