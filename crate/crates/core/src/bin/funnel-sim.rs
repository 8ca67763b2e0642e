use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use funnel_sim::scenario::{self, Failure, Overrides};

#[derive(Parser)]
#[command(name = "funnel-sim", version, about = "Funnel-controlled passive systems: run, list and check scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one or more scenarios (bundled names or config files).
    Run {
        #[arg(required = true)]
        targets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        rtol: Option<f64>,
        #[arg(long)]
        atol: Option<f64>,
    },
    /// Print the bundled scenario names.
    List,
    /// Audit the assumptions of a config without integrating.
    Check { config: String },
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("error: {f}");
    ExitCode::from(f.exit_code() as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            for name in scenario::list_scenarios() {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Check { config } => {
            let outcome = scenario::resolve(&config)
                .map_err(Failure::Config)
                .and_then(|(cfg, base)| scenario::check_config(&cfg, &base));
            match outcome {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(f) => fail(&f),
            }
        }
        Command::Run {
            targets,
            out,
            horizon,
            rtol,
            atol,
        } => {
            let overrides = Overrides { horizon, rtol, atol };
            let mut jobs = Vec::new();
            for t in &targets {
                match scenario::resolve(t) {
                    Ok((mut cfg, base)) => {
                        overrides.apply(&mut cfg);
                        jobs.push((cfg, base));
                    }
                    Err(e) => return fail(&Failure::Config(e)),
                }
            }
            let mut code = ExitCode::SUCCESS;
            for result in scenario::run_many(&jobs, &out, scenario::thread_cap()) {
                match result {
                    Ok(r) => println!(
                        "{}: pass (max φ|e| = {:.6}, {} steps, {:.2} s) -> {}",
                        r.name,
                        r.funnel.max_phi_e,
                        r.trajectory.stats.accepted,
                        r.runtime_s,
                        r.csv_path.display()
                    ),
                    Err(f) => {
                        if code == ExitCode::SUCCESS {
                            code = fail(&f);
                        } else {
                            eprintln!("error: {f}");
                        }
                    }
                }
            }
            code
        }
    }
}
