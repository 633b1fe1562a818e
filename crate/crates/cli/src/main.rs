use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mialab::commands;
use mialab::config::ExperimentConfig;
use mialab::{CliError, Result};
use mialab_core::attacks::{AttackMethod, AttackMode};

#[derive(Parser)]
#[command(name = "mialab", version, about = "Shadow-model membership inference experiments")]
struct Cli {
    /// Worker threads for farm training and attacks (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shadow farm and write farm.bin.
    TrainShadows(Common),
    /// Run the configured attack for every seed.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Farm store (default: <out>/farm.bin).
        #[arg(long)]
        farm: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        method: Option<AttackMethod>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AttackMode>,
    },
    /// Summarize score tables into report.csv and ROC files.
    Eval {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Delta table of canary and noise reports against a LiRA report.
    Compare {
        #[arg(long)]
        lira: PathBuf,
        #[arg(long)]
        canary: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn parse_method(s: &str) -> std::result::Result<AttackMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown method {s:?} (lira, canary, random-noise)"))
}

fn parse_mode(s: &str) -> std::result::Result<AttackMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode {s:?} (online, offline)"))
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::TrainShadows(common) => {
            let (cfg, out) = load(&common)?;
            let m = commands::train_shadows(&cfg, &out, common.force, &[&common.config])?;
            let mean = |f: fn(&commands::ModelSummary) -> f64| {
                m.models.iter().map(f).sum::<f64>() / m.models.len() as f64
            };
            println!(
                "trained {} models in {:.1}s (mean train acc {:.3}, test acc {:.3}) -> {}",
                m.models.len(),
                m.wall_time_secs,
                mean(|s| s.train_accuracy),
                mean(|s| s.test_accuracy),
                m.farm_file.display()
            );
        }
        Command::Attack { common, farm, method, mode } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(method) = method {
                cfg.attack.method = method;
            }
            if let Some(mode) = mode {
                cfg.attack.mode = mode;
            }
            let farm = farm.unwrap_or_else(|| out.join(commands::FARM_FILE));
            let inputs: [&Path; 2] = [&common.config, &farm];
            let m = commands::attack(&cfg, &farm, &out, common.force, &inputs)?;
            for r in &m.runs {
                println!(
                    "seed {}: target model {}, {} members / {} non-members, {} IN / {} OUT evals -> {}",
                    r.seed,
                    r.target_model,
                    r.members,
                    r.non_members,
                    r.stats.in_model_evals,
                    r.stats.out_model_evals,
                    r.scores_file.display()
                );
            }
        }
        Command::Eval { scores, out, force } => {
            for r in commands::eval(&scores, &out, force)? {
                println!("{:<16} {:>6} {:.4}", r.metric, r.seed, r.value);
            }
        }
        Command::Compare { lira, canary, noise, out, force } => {
            let rows = commands::compare(&lira, canary.as_deref(), noise.as_deref(), &out, force)?;
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:+.4}"));
            println!("{:<16} {:>6} {:>8} {:>10} {:>10}", "metric", "seed", "lira", "Δ canary", "Δ noise");
            for r in rows {
                println!(
                    "{:<16} {:>6} {:>8.4} {:>10} {:>10}",
                    r.metric,
                    r.seed,
                    r.lira,
                    fmt(r.canary_minus_lira),
                    fmt(r.noise_minus_lira)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
