use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use openworld::losses::LossMode;
use openworld_cli::commands::{cmd_eval_lpr, cmd_eval_ood, cmd_eval_retrieval, cmd_gen, cmd_train, write_json, GenKind, Scenario};
use openworld_cli::config::RunConfig;
use openworld_cli::data::DataLocation;
use openworld_cli::error::CliError;
use openworld_cli::experiments::{cmd_experiment, ExperimentId};
use openworld_cli::system::cmd_eval_system;

#[derive(Parser, Debug)]
#[command(name = "openworld", version, about = "Open-world retrieval, OOD detection and plate-reading experiments")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GenArg {
    Embeddings,
    Plates,
    Scenes,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioArg {
    Seen,
    Unseen,
    Combined,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExperimentArg {
    AddClasses,
    SamplesPerClass,
    OodIngest,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate embeddings, plates or scenes.
    Gen {
        #[arg(value_enum)]
        kind: GenArg,
    },
    /// Train a projection head on the seen reference split.
    Train {
        /// Dataset stem (`<stem>.emb`, `<stem>.jsonl`, `<stem>.split.json`).
        #[arg(long)]
        data: PathBuf,
        /// ms, hisupcon, hims-max or hims-min.
        #[arg(long)]
        mode: Option<LossMode>,
    },
    /// Prec@k, mAP@R and fallback accuracy per database scenario.
    EvalRetrieval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        scenario: ScenarioArg,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated hierarchy levels.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
    },
    /// KNN+ k-sweep and Mahalanobis baseline.
    EvalOod {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        /// Comma-separated neighbor ranks.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Detection and recognition metrics over a scene directory.
    EvalLpr {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Incremental-database experiments.
    Experiment {
        #[arg(value_enum)]
        id: ExperimentArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Whole-system accuracy roll-up.
    EvalSystem {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long)]
        exclude_ood_false_positives: bool,
    },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    match &cli.command {
        Command::Train { mode: Some(m), .. } => cfg.loss.mode = *m,
        Command::EvalRetrieval { k, levels, .. } => {
            if let Some(k) = k {
                cfg.retrieval.k = *k;
            }
            if levels.is_some() {
                cfg.retrieval.levels = levels.clone();
            }
        }
        Command::EvalOod { k: Some(k), .. } => cfg.ood.k_values = k.clone(),
        Command::EvalLpr { jitter: Some(j), .. } => cfg.lpr.jitter = *j,
        Command::Experiment { runs: Some(r), .. } => cfg.experiment.runs = *r,
        Command::EvalSystem {
            exclude_ood_false_positives: true,
            ..
        } => cfg.system.exclude_ood_false_positives = true,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let cfg = effective_config(cli)?;
    println!("{}", serde_json::to_string(&cfg)?);
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let summary = match &cli.command {
        Command::Gen { kind } => {
            let kind = match kind {
                GenArg::Embeddings => GenKind::Embeddings,
                GenArg::Plates => GenKind::Plates,
                GenArg::Scenes => GenKind::Scenes,
            };
            serde_json::to_value(cmd_gen(kind, &cfg, out)?)?
        }
        Command::Train { data, .. } => serde_json::to_value(cmd_train(&cfg, &DataLocation::new(data), out)?)?,
        Command::EvalRetrieval { data, head, scenario, .. } => {
            let scenario = match scenario {
                ScenarioArg::Seen => Scenario::Seen,
                ScenarioArg::Unseen => Scenario::Unseen,
                ScenarioArg::Combined => Scenario::Combined,
                ScenarioArg::All => Scenario::All,
            };
            serde_json::to_value(cmd_eval_retrieval(&cfg, &DataLocation::new(data), head.as_deref(), scenario, out)?)?
        }
        Command::EvalOod { data, head, .. } => {
            serde_json::to_value(cmd_eval_ood(&cfg, &DataLocation::new(data), head.as_deref(), out)?)?
        }
        Command::EvalLpr { scenes, .. } => serde_json::to_value(cmd_eval_lpr(&cfg, scenes, out)?)?,
        Command::Experiment { id, data, head, .. } => {
            let id = match id {
                ExperimentArg::AddClasses => ExperimentId::AddClasses,
                ExperimentArg::SamplesPerClass => ExperimentId::SamplesPerClass,
                ExperimentArg::OodIngest => ExperimentId::OodIngest,
            };
            cmd_experiment(id, &cfg, &DataLocation::new(data), head.as_deref(), out)?
        }
        Command::EvalSystem { data, head, .. } => {
            serde_json::to_value(cmd_eval_system(&cfg, &DataLocation::new(data), head.as_deref(), out)?)?
        }
    };
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
