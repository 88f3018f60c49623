use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dialrec::config::{parse_percents, ExperimentConfig};
use dialrec::harness::{run_experiment, Command};
use dialrec::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "dialrec", version, about = "Medication recommendation from doctor-patient dialogues")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    no_dialogue_graph: bool,
    #[arg(long, global = true)]
    no_kg: bool,
    /// Comma-separated discourse percentages, e.g. 20,40,60,80,100.
    #[arg(long, global = true)]
    discourse_percents: Option<String>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key: --set key=value (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Train the recommender and evaluate it.
    Train,
    /// Evaluate a saved checkpoint.
    Eval,
    /// Write per-dialogue predictions from a checkpoint.
    Predict,
    /// Compare the full model with both ablations.
    Ablate,
    /// Jaccard as a function of the dialogue prefix kept.
    Truncate,
    /// Corpus statistics table.
    Stats,
    /// Inter-annotator agreement.
    Kappa,
    /// Generate a synthetic corpus, KG and DDI table.
    Synth,
    /// TF-IDF one-vs-rest logistic baseline.
    Baseline,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Predict => Command::Predict,
            Cmd::Ablate => Command::Ablate,
            Cmd::Truncate => Command::Truncate,
            Cmd::Stats => Command::Stats,
            Cmd::Kappa => Command::Kappa,
            Cmd::Synth => Command::Synth,
            Cmd::Baseline => Command::Baseline,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| HarnessError::Config(format!("--set expects key=value, got {o:?}")))?;
        c.set(k.trim(), v)?;
    }
    if cli.no_dialogue_graph {
        c.no_dialogue_graph = true;
    }
    if cli.no_kg {
        c.no_kg = true;
    }
    if let Some(p) = &cli.discourse_percents {
        c.discourse_percents = parse_percents(p)?;
    }
    if let Some(r) = cli.repeats {
        c.repeats = r;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out = o.to_string_lossy().into_owned();
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("dialrec: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let command = Command::from(cli.command);
    match run_experiment(command, &config) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dialrec {}: {e}", command.name());
            let marker = config.out_dir().join("FAILED");
            let _ = std::fs::write(&marker, format!("{}: {e}\n", command.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
