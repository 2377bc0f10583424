use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mkvlab::catalog::{self, CATALOG};
use mkvlab::experiment::{load_config_text, run_experiment};

#[derive(Parser)]
#[command(name = "mkvlab", version, about = "McKean-Vlasov numerical laboratory")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "MKVLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or an emitted manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. `sim.N=20000` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// List the built-in models.
    Models,
    /// Print the default experiment config of a built-in model.
    Show { id: String },
}

fn parse_overrides(set: &[String], seed: Option<u64>) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for s in set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        out.push((k.trim().to_string(), v.to_string()));
    }
    if let Some(seed) = seed {
        out.push(("sim.seed".into(), seed.to_string()));
    }
    Ok(out)
}

fn execute(command: Command) -> Result<i32, String> {
    match command {
        Command::Models => {
            for e in CATALOG {
                println!("{:<18} {}", e.id, e.description);
            }
            Ok(0)
        }
        Command::Show { id } => {
            let e = catalog::find(&id).ok_or_else(|| format!("unknown model `{id}`"))?;
            let cfg = e.config().map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&cfg.to_value()).map_err(|e| e.to_string())?);
            Ok(0)
        }
        Command::Validate { config, set } => {
            let text = std::fs::read_to_string(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let cfg = load_config_text(&text, &parse_overrides(&set, None)?).map_err(|e| e.to_string())?;
            println!("ok: {} ({})", cfg.experiment.name(), cfg.hash());
            Ok(0)
        }
        Command::Run { config, set, out, seed } => {
            let text = std::fs::read_to_string(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let cfg = load_config_text(&text, &parse_overrides(&set, seed)?).map_err(|e| e.to_string())?;
            let dir = out
                .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let outcome = run_experiment(&cfg, &dir).map_err(|e| e.to_string())?;
            println!(
                "{}: {:?} -> {}",
                cfg.experiment.name(),
                outcome.status,
                dir.join("verdict.json").display()
            );
            Ok(outcome.status.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
