use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gpi_harness::config::RunConfig;
use gpi_harness::{plan, plot, train, verify};

#[derive(Parser)]
#[command(name = "gpi", version, about = "Policy improvement with sample reuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its run directory.
    Train(TrainArgs),
    /// Tabulate optimal mixture weights across the ESS/TV trade-off.
    Plan {
        #[arg(long = "B", default_value_t = 2)]
        b: usize,
        /// Number of evenly spaced kappa values in [0, 1].
        #[arg(long, default_value_t = 11)]
        points: usize,
        /// Explicit comma-separated kappa values; overrides --points.
        #[arg(long, value_delimiter = ',')]
        kappa: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check the improvement bounds exactly on random tabular MDPs.
    VerifyBounds {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Average a metric over runs and draw it with half-standard-error bands.
    Plot {
        /// Run directories or metrics.csv files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        #[arg(long, default_value = "step")]
        x: String,
        #[arg(long, default_value = "mean_return")]
        y: String,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Key-value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any other config key, as key=value. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Parent directory for the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Exact run directory, instead of a name derived from the config.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

fn build_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)?;
    }
    let flags = [
        ("algo", args.algo.clone()),
        ("env", args.env.clone()),
        ("steps", args.steps.map(|v| v.to_string())),
        ("b", args.b.map(|v| v.to_string())),
        ("n", args.n.map(|v| v.to_string())),
        ("kappa", args.kappa.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &args.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let cfg = build_config(&args)?;
            let dir = args
                .run_dir
                .clone()
                .unwrap_or_else(|| args.out.join(train::run_name(&cfg)));
            log::info!(
                "training {} on {} for {} steps ({} updates) into {}",
                cfg.algo,
                cfg.env,
                cfg.steps,
                cfg.num_updates(),
                dir.display()
            );
            let start = Instant::now();
            let out = train::train(&cfg, &dir)?;
            let last = out.rows.iter().rev().find_map(|r| r.mean_return);
            log::info!(
                "done in {:.1}s: {} updates, final mean return {}",
                start.elapsed().as_secs_f64(),
                out.rows.len(),
                last.map_or("n/a".to_string(), |v| format!("{v:.1}"))
            );
        }
        Command::Plan {
            b,
            points,
            kappa,
            n,
            eps,
            csv,
        } => {
            let kappas = kappa.unwrap_or_else(|| plan::kappa_grid(points));
            let plans = plan::sweep(b, &kappas, n, eps)?;
            print!("{}", plan::format_table(&plans));
            let (ess, tv) = plan::frontier_extremes(&plans);
            println!(
                "max ESS gain {:.2}%, max TV gain {:.2}%",
                100.0 * ess,
                100.0 * tv
            );
            if let Some(path) = csv {
                plan::write_csv(&plans, &path)?;
            }
        }
        Command::VerifyBounds { instances, seed } => {
            let rows = verify::run_suite(instances, seed)?;
            print!("{}", verify::format_table(&rows));
            if rows.iter().any(|r| !r.passed()) {
                bail!("bound verification failed");
            }
        }
        Command::Plot { runs, out, x, y } => {
            for path in plot::plot_runs(&runs, &out, &x, &y)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
