use clap::{Parser, Subcommand};
use effectop_cli::{run, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "effectop", version, about = "Effective monotone laws of random media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its tables and manifest.
    Run {
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for ensemble and sweep parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    // exit code 2 is reserved for partial results, so usage errors exit 1
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match cli.command {
        Command::Run { config, out, threads } => {
            if let Some(k) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                    eprintln!("error: cannot start {k} threads: {e}");
                    return ExitCode::from(1);
                }
            }
            match run::run(&config, out) {
                Ok((status, manifest)) => {
                    for o in &manifest.outputs {
                        println!("{}  {}", o.sha256, o.file);
                    }
                    if status == run::RunStatus::Partial {
                        eprintln!("warning: some results are flagged; see the summary file");
                    }
                    ExitCode::from(status.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Validate { config } => match ExperimentConfig::load(&config).and_then(|(c, _)| c.validate()) {
            Ok(v) => {
                println!("ok: {} experiment", v.config.experiment.name());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
