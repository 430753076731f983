use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kmflow_cli::output::write_outputs;
use kmflow_cli::{execute, parse_config, CliError, Execution, Status};

#[derive(Parser)]
#[command(
    name = "kmflow",
    version,
    about = "Lagrangian mean curvature flow of optimal transport maps on flat tori"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json, series.csv and final_map.csv.
    Run {
        config: PathBuf,
        /// Output directory (overrides [output] dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario and check its properties without writing outputs.
    Verify {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Worker threads (default: all cores).
    #[arg(long, env = "KMFLOW_THREADS")]
    threads: Option<usize>,
    /// Seed override for randomized scenarios.
    #[arg(long)]
    seed: Option<u64>,
}

fn print_summary(exec: &Execution) {
    let r = &exec.report;
    if let Some(f) = &r.flow {
        println!(
            "flow: {:?} after {} steps, t = {:.6e}, sup|grad theta| = {:.3e}",
            f.termination, f.steps, f.final_time, f.final_grad_theta
        );
    }
    if let Some(m) = &r.mtw {
        let min = m
            .min_value
            .map_or("n/a".to_string(), |v| format!("{v:.6e}"));
        println!(
            "mtw: {:?}, min cross-curvature {min} over {} samples",
            m.verdict, m.samples
        );
    }
    if let Some(c) = r.defect_envelope_rate {
        println!("defect envelope rate C = {c:.6e}");
    }
    for c in &r.checks {
        let value = c.value.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<26} {value:>14}  (limit {:.3e})", c.name, c.limit);
    }
    let status = match r.status {
        Status::Passed => "passed",
        Status::PropertyViolation => "property violation",
        Status::Error => "error",
    };
    println!("status: {status} ({:.2} s)", r.runtime_seconds);
}

fn run(cli: Cli) -> Result<Status, CliError> {
    let (path, out, common) = match cli.command {
        Command::Run {
            config,
            out,
            common,
        } => (config, Some(out), common),
        Command::Verify { config, common } => (config, None, common),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::ThreadPool(e.to_string()))?;
    }
    let mut config = parse_config(&path)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let exec = execute(&config)?;
    print_summary(&exec);
    if let Some(out) = out {
        let dir = out.unwrap_or_else(|| config.output_dir.clone());
        for p in write_outputs(&dir, &exec)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(exec.report.status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version go to stdout and are not failures
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
