use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dialact_core::harness::{self, EvaluationReport, HarnessError, DEFAULT_SPLIT};
use dialact_core::{
    load_model, load_operators, read_corpus, write_corpus, Corpus, DialogueModel, LanguageModel, OperatorLibrary,
    PredictorError, SyntheticSource,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INCONSISTENT: u8 = 3;

#[derive(Parser)]
#[command(name = "dialact", version, about = "Speech-act prediction, tracking and plan recognition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model definition file (inventory and dialogue machine).
    #[arg(long, global = true, value_name = "PATH")]
    model_def: Option<PathBuf>,
    /// Plan operator library.
    #[arg(long, global = true, value_name = "PATH")]
    operators: Option<PathBuf>,
    /// Seed for sampling commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Comma-separated prediction counts.
    #[arg(long, global = true, value_delimiter = ',', default_value = "1,2,3")]
    k: Vec<usize>,
    /// Fraction of dialogues used for counting; the rest estimates the weights.
    #[arg(long, global = true, default_value_t = DEFAULT_SPLIT)]
    split: f64,
    /// Do not score the first act of each dialogue.
    #[arg(long, global = true)]
    skip_initial: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a predictor and write it in the persistence format.
    Train {
        corpus: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Top-k accuracy of a trained predictor on one or more test corpora.
    Eval {
        model: PathBuf,
        #[arg(required = true)]
        test: Vec<PathBuf>,
    },
    /// Run one dialogue through all layers and print the trace.
    Replay {
        corpus: PathBuf,
        dialogue: String,
        /// Trained predictor; without it no predictions are printed.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Exit with status 3 when the tracker logged inconsistencies.
        #[arg(long)]
        fail_on_inconsistency: bool,
    },
    /// Sample a corpus from a source file.
    Generate {
        source: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Act that ends a sampled dialogue.
        #[arg(long, default_value = "VERABSCHIEDUNG")]
        terminal: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Accuracy of the generating source itself on a sample.
    Bayes { source: PathBuf, sample: PathBuf },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn set_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Common {
    fn model(&self) -> Result<DialogueModel> {
        match &self.model_def {
            Some(p) => load_model(&read(p)?).with_context(|| format!("loading {}", p.display())),
            None => Ok(DialogueModel::default_model()),
        }
    }

    fn library(&self, model: &DialogueModel) -> Result<OperatorLibrary> {
        match &self.operators {
            Some(p) => load_operators(&read(p)?, model.inventory.clone()).with_context(|| format!("loading {}", p.display())),
            None => Ok(OperatorLibrary::default_library(model.inventory.clone())),
        }
    }

    fn corpus(&self, model: &DialogueModel, path: &Path) -> Result<Corpus> {
        read_corpus(&read(path)?, &model.inventory).with_context(|| format!("reading corpus {}", path.display()))
    }

    fn predictor(&self, model: &DialogueModel, path: &Path) -> Result<LanguageModel> {
        LanguageModel::from_text(&read(path)?, model.inventory.clone())
            .with_context(|| format!("loading predictor {}", path.display()))
    }

    fn source(&self, model: &DialogueModel, path: &Path) -> Result<SyntheticSource> {
        SyntheticSource::from_text(&read(path)?, model.inventory.clone())
            .with_context(|| format!("loading source {}", path.display()))
    }

    fn ks(&self) -> Result<Vec<usize>> {
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(HarnessError::Usage("--k needs positive prediction counts".into()).into());
        }
        Ok(self.k.clone())
    }
}

fn run(cli: Cli) -> Result<u8> {
    let common = &cli.common;
    let model = common.model()?;
    match &cli.command {
        Command::Train { corpus, output } => {
            let corpus = common.corpus(&model, corpus)?;
            let lm = match harness::train(&corpus, model.inventory.clone(), common.split) {
                Err(HarnessError::Predictor(e @ (PredictorError::DegenerateHeldOut | PredictorError::Untrained))) => {
                    return Err(anyhow::Error::new(e).context(format!(
                        "splitting {} dialogues at {} leaves one side unable to train or rate the model; \
                         change --split or add dialogues",
                        corpus.dialogues.len(),
                        common.split
                    )))
                }
                other => other?,
            };
            emit(output.as_deref(), &lm.to_text())?;
        }
        Command::Eval { model: path, test } => {
            let ks = common.ks()?;
            let lm = common.predictor(&model, path)?;
            let mut sets = Vec::with_capacity(test.len());
            for t in test {
                let corpus = common.corpus(&model, t)?;
                sets.push(harness::evaluate(&lm, &corpus, &set_name(t), &ks, common.skip_initial)?);
            }
            print!("{}", EvaluationReport { ks, sets }.format());
        }
        Command::Replay {
            corpus,
            dialogue,
            model: lm_path,
            fail_on_inconsistency,
        } => {
            let library = Arc::new(common.library(&model)?);
            let predictor = match lm_path {
                Some(p) => Some(Arc::new(common.predictor(&model, p)?)),
                None => None,
            };
            let corpus = common.corpus(&model, corpus)?;
            let d = harness::find_dialogue(&corpus, dialogue)?;
            let r = harness::replay(&model, library, predictor, d)?;
            print!("{}", r.transcript);
            if *fail_on_inconsistency && r.inconsistencies > 0 {
                return Ok(EXIT_INCONSISTENT);
            }
        }
        Command::Generate {
            source,
            count,
            terminal,
            output,
        } => {
            let src = common.source(&model, source)?;
            let corpus = harness::generate(&src, *count, common.seed, terminal)?;
            emit(output.as_deref(), &write_corpus(&corpus))?;
        }
        Command::Bayes { source, sample } => {
            let ks = common.ks()?;
            let src = common.source(&model, source)?;
            let corpus = common.corpus(&model, sample)?;
            let set = harness::bayes(&src, &corpus, &set_name(sample), &ks, common.skip_initial)?;
            print!("{}", EvaluationReport { ks, sets: vec![set] }.format());
        }
    }
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HarnessError>() {
        Some(HarnessError::Usage(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
