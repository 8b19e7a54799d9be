use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikedual::experiments::{self, write_with_provenance};
use spikedual::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "spikedual", version, about = "Non-negative Gaussian super-resolution through the penalised dual")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the iteration count the subcommand uses.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the clean problem and recover the sources.
    Solve(Common),
    /// Location error against dual error over the iterate window.
    ExpLambdaT(Common),
    /// Amplitude error against location error over the iterate window.
    #[command(name = "exp-t-a")]
    ExpTA(Common),
    /// Dual and location error against noise magnitude.
    ExpNoise(Common),
    /// Every bound and constant at the reference dual solution.
    Bounds(Common),
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_NO_SUPPORT: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::EmptySupport => EXIT_NO_SUPPORT,
        Error::Io(_) => 1,
        _ => EXIT_SOLVER,
    }
}

enum Iters {
    Solve,
    Reference,
    Noise,
}

fn load(common: &Common, which: Iters) -> spikedual::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.iters {
        match which {
            Iters::Solve => cfg.iterations = n,
            Iters::Noise => cfg.noise_iterations = n,
            Iters::Reference => {
                if cfg.window.1 >= n {
                    return Err(Error::Config {
                        key: "window_end".into(),
                        message: format!("must be below the iteration count {n}"),
                    });
                }
                cfg.reference_iterations = n;
            }
        }
    }
    Ok(cfg)
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

fn stop_reason(st: &spikedual::BundleState) -> &'static str {
    if st.stalled {
        "fixed_point"
    } else if st.gap() <= spikedual::solver::DEFAULT_GAP_TOL {
        "gap"
    } else {
        "max_iterations"
    }
}

fn run(cli: Cli) -> spikedual::Result<()> {
    match cli.command {
        Command::Solve(c) => {
            let cfg = load(&c, Iters::Solve)?;
            let outcome = experiments::cmd_solve(&cfg, &c.out)?;
            for f in &outcome.files {
                report(f);
            }
            println!(
                "iterations={} mu={:e} nu={:e} gap={:e} stop={}",
                outcome.state.iterations(),
                outcome.state.mu,
                outcome.state.nu,
                outcome.state.gap(),
                stop_reason(&outcome.state)
            );
            let rec = outcome.recovery?;
            println!("{}", rec.summary());
            for (t, a) in rec.locations.iter().zip(&rec.amplitudes) {
                println!("t={t} a={a}");
            }
        }
        Command::ExpLambdaT(c) => {
            let cfg = load(&c, Iters::Reference)?;
            let rep = experiments::exp_lambda_t(&cfg)?;
            let path = c.out.join("lambda_t.csv");
            write_with_provenance(&path, &cfg, |w| experiments::write_lambda_t(&rep, w))?;
            report(&path);
            println!("rows={} skipped={} threshold={:e}", rep.rows.len(), rep.skipped, rep.threshold);
        }
        Command::ExpTA(c) => {
            let cfg = load(&c, Iters::Reference)?;
            let rep = experiments::exp_t_a(&cfg)?;
            let path = c.out.join("t_a.csv");
            write_with_provenance(&path, &cfg, |w| experiments::write_t_a(&rep, w))?;
            report(&path);
            println!("rows={} Ca_log10={}", rep.rows.len(), rep.ca_log10);
        }
        Command::ExpNoise(c) => {
            let cfg = load(&c, Iters::Noise)?;
            let rep = experiments::exp_noise(&cfg)?;
            let path = c.out.join("noise.csv");
            write_with_provenance(&path, &cfg, |w| experiments::write_noise(&rep, w))?;
            report(&path);
        }
        Command::Bounds(c) => {
            let cfg = load(&c, Iters::Reference)?;
            let rep = experiments::cmd_bounds(&cfg)?;
            let path = c.out.join("bounds.txt");
            write_with_provenance(&path, &cfg, |w| rep.write_kv(w))?;
            report(&path);
            let path = c.out.join("bounds.csv");
            write_with_provenance(&path, &cfg, |w| rep.write_csv(w))?;
            report(&path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
