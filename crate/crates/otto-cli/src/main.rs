use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use otto::optimize::evaluate;
use otto_cli::{build, grad_test, output_dir, parse_config, run_experiment, RunConfig, GRAD_TOLERANCE};

#[derive(Parser)]
#[command(name = "otto", version, about = "Shape optimization with Laguerre diagrams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (overrides `[run] output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump the diagram and a picture every K iterations (0: last only).
        #[arg(long, default_value_t = 10)]
        snapshot_every: usize,
    },
    /// Validate a configuration and evaluate its initial design.
    Check { config: PathBuf },
    /// Compare the design gradient with finite differences.
    GradTest {
        config: PathBuf,
        /// Number of random directions per variable block.
        #[arg(long, default_value_t = 3)]
        directions: usize,
    },
}

/// Exit code for invalid configurations.
const CONFIG_ERROR: u8 = 2;

fn load(path: &Path) -> Result<RunConfig, ExitCode> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(ExitCode::from(CONFIG_ERROR));
        }
    };
    parse_config(&text).map_err(|errs| {
        for e in &errs.0 {
            eprintln!("{}: {e}", path.display());
        }
        ExitCode::from(CONFIG_ERROR)
    })
}

fn check(cfg: &RunConfig) -> anyhow::Result<()> {
    let exp = build(cfg)?;
    let ev = evaluate(&exp.problem, &exp.params, &exp.initial).context("evaluating the initial design")?;
    println!("kind = {:?}", cfg.kind);
    println!("box = {:?}, area = {}", cfg.bbox, cfg.area());
    for (name, label) in cfg.labels() {
        println!("label {label} = {name}");
    }
    println!("N = {}, V_T = {}, iterations = {}", cfg.n, cfg.vt, cfg.iters);
    println!("initial objective = {:e}", ev.objective);
    println!("initial volume = {:e}", ev.design.volume());
    println!("newton iterations = {}", ev.newton_iters);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, snapshot_every } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let dir = output_dir(out, &cfg);
            match run_experiment(&cfg, &dir, snapshot_every) {
                Ok(s) => {
                    print!("{}", s.render());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    let msg = format!("{e:#}\n");
                    eprint!("error: {msg}");
                    if fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("error.txt"), &msg)).is_err() {
                        eprintln!("error: cannot write the diagnostic file in {}", dir.display());
                    }
                    ExitCode::FAILURE
                }
            }
        }
        Command::Check { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match check(&cfg) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::GradTest { config, directions } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let checks = match build(&cfg).and_then(|exp| grad_test(&exp, directions, cfg.rng_seed)) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::FAILURE;
                }
            };
            let mut ok = true;
            for c in &checks {
                let pass = c.relative_error <= GRAD_TOLERANCE;
                ok &= pass;
                println!(
                    "{} {:>8} analytic {:+.9e} fd {:+.9e} rel {:.2e}",
                    if pass { "PASS" } else { "FAIL" },
                    c.block,
                    c.analytic,
                    c.finite_difference,
                    c.relative_error
                );
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
