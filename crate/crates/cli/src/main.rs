use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use downreg_core::envelope::PwaEnvelope;
use downreg_core::harness::{self, Config, Figure, Model, RunResult};
use downreg_core::mpc::Strategy;

#[derive(Parser)]
#[command(
    name = "downreg",
    version,
    about = "Wind-turbine down-regulation MPC scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the strategy in the config file.
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several strategies on the same scenario.
    Batch {
        #[arg(long)]
        config: PathBuf,
        /// `all` or a comma-separated list of strategy names.
        #[arg(long, default_value = "all")]
        strategies: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the available-power envelope and save it.
    Envelope {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Long-format extract of a recorded run for one figure.
    PlotData {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        figure: Figure,
    },
}

fn load(path: &Path) -> Result<(Config, Model)> {
    let cfg = Config::load(path).with_context(|| format!("loading {}", path.display()))?;
    let model = Model::load(&cfg).context("building the turbine model")?;
    Ok((cfg, model))
}

fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let s: Strategy = name.parse().map_err(|e: String| anyhow::anyhow!(e))?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        bail!("no strategies given");
    }
    Ok(out)
}

fn print_metrics(runs: &[RunResult]) {
    println!(
        "{:<26} {:>12} {:>12} {:>10} {:>12} {:>9}",
        "strategy", "mean K (J)", "thrust (N)", "track (s)", "rmse (W)", "degraded"
    );
    for r in runs {
        let m = &r.metrics;
        println!(
            "{:<26} {:>12.4e} {:>12.0} {:>10.1} {:>12.1} {:>9}",
            m.strategy,
            m.mean_k_before,
            m.mean_thrust_before,
            m.tracking_time_after_saturation,
            m.tracking_rmse_before,
            m.degraded_steps
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            strategy,
            out,
        } => {
            let (cfg, model) = load(&config)?;
            let strategy = strategy.unwrap_or(cfg.mpc.strategy);
            let run = harness::run_scenario(&cfg, &model, strategy)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.join(strategy.name()));
            harness::write_run(&dir, &run)?;
            print_metrics(std::slice::from_ref(&run));
            println!("wrote {}", dir.display());
        }
        Command::Batch {
            config,
            strategies,
            out,
        } => {
            let (cfg, model) = load(&config)?;
            let list = parse_strategies(&strategies)?;
            let start = std::time::Instant::now();
            let runs = harness::run_batch(&cfg, &model, &list)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            harness::write_batch(&dir, &runs)?;
            print_metrics(&runs);
            println!(
                "{} runs in {:.1} s, wrote {}",
                runs.len(),
                start.elapsed().as_secs_f64(),
                dir.display()
            );
        }
        Command::Envelope { config, out } => {
            let cfg =
                Config::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let surface = match &cfg.aero.table {
                Some(p) => downreg_core::aero::AeroSurface::from_table_file(p)?,
                None => downreg_core::aero::AeroSurface::parametric_default(),
            };
            let env = PwaEnvelope::build(&cfg.turbine, &surface, &cfg.envelope)?;
            env.save(&out)?;
            let worst = env.residuals.iter().fold(0.0_f64, |a, &b| a.max(b));
            println!(
                "{} wind speeds, {} pieces, worst residual {:.3} %, wrote {}",
                env.wind_grid.len(),
                env.k,
                100.0 * worst,
                out.display()
            );
        }
        Command::PlotData { run, figure } => {
            let path = harness::plot_data(&run, figure)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
