//! Batch front end for the denoising toolkit.
//!
//! Subcommands:
//!   denoise   load a PNM image, optionally add seeded noise, solve, write
//!             the restored PNM and a metrics CSV
//!   validate  run the embedded self-check suite
//!   bench     run both sweeps on the same instance and compare costs
//!
//! Exit codes: 0 success, 1 usage/config, 2 io, 3 step certification,
//! 4 divergence. Set PDSPLIT_LOG=quiet|info|debug for stderr verbosity.

mod checks;
mod commands;
mod config;
mod csvout;
mod errors;
mod pnm;

use config::RunConfig;
use errors::CliError;

const USAGE: &str = "usage: pdsplit <denoise|validate|bench> [flags]

flags (denoise, bench):
  --input PATH        input PNM image (P2/P3/P5/P6)
  --output PATH       restored image (denoise only; P5/P6, maxval 255)
  --model ic|mic      penalty model (default ic)
  --solver fb|fbf     iterative scheme (default fb; denoise only)
  --alpha1 A --alpha2 A     penalty weights (defaults 0.06, 0.2)
  --omega1 a,b --omega2 a,b weight pairs (defaults 1,1)
  --noise-sigma S     add seeded Gaussian noise to the input first
  --seed N            noise seed (default 0)
  --reference PATH    clean image enabling ISNR metrics
  --iters N           iteration budget (default 500)
  --tol T             relative residual tolerance (default 1e-8)
  --metrics PATH      per-iteration CSV (bench writes PATH.fb.csv/.fbf.csv)
  --wall-time         record wall time in the CSV (breaks reproducibility)
  --config PATH       key=value file; explicit flags override it
  --tau/--theta1/--theta2/--gamma1/--gamma2/--sigma   explicit fb steps
  --lambda L          fb relaxation (default 1)
  --fbf-gamma G       explicit fbf step
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match run(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pdsplit: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(args: &[String]) -> Result<(), CliError> {
    let Some(sub) = args.first() else {
        eprint!("{USAGE}");
        return Err(CliError::Usage("missing subcommand".into()));
    };
    match sub.as_str() {
        "denoise" => {
            let cfg = RunConfig::from_args(&args[1..])?;
            commands::cmd_denoise(&cfg)
        }
        "validate" => {
            if args.len() > 1 {
                return Err(CliError::Usage("validate takes no flags".into()));
            }
            commands::cmd_validate()
        }
        "bench" => {
            let cfg = RunConfig::from_args(&args[1..])?;
            commands::cmd_bench(&cfg)
        }
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => {
            eprint!("{USAGE}");
            Err(CliError::Usage(format!("unknown subcommand '{other}'")))
        }
    }
}
