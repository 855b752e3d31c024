//! Train, evaluate, replay and generate: the operations behind the command
//! line front end.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Dialogue};
use crate::model::{ActId, ActInventory, DialogueModel, ModelError};
use crate::planner::{OperatorLibrary, PlannerError};
use crate::predictor::{rank_distribution, LanguageModel, PredictorError};
use crate::session::Session;
use crate::source::{SourceError, SyntheticSource};

pub const DEFAULT_KS: [usize; 3] = [1, 2, 3];
pub const DEFAULT_SPLIT: f64 = 0.9;
pub const REPLAY_PREDICTIONS: usize = 2;
pub const FAILED_MARKER: &str = "****Failed****";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("dialogue {0} not found")]
    UnknownDialogue(String),
}

/// Train tables on the first `floor(n * split)` dialogues and estimate the
/// weights on the rest.
pub fn train(corpus: &Corpus, inventory: Arc<ActInventory>, split: f64) -> Result<LanguageModel, HarnessError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(HarnessError::Usage(format!("split must lie strictly between 0 and 1, got {split}")));
    }
    let (train, held_out) = corpus.split(split);
    Ok(LanguageModel::fit(&train, &held_out, inventory)?)
}

/// Top-k hit counts for one test set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetResult {
    pub name: String,
    pub dialogues: usize,
    /// Predicted positions.
    pub acts: usize,
    /// Hits per k, aligned with the report's k list.
    pub hits: Vec<usize>,
}

impl SetResult {
    /// Percentage for the `i`-th k.
    pub fn accuracy(&self, i: usize) -> f64 {
        if self.acts == 0 {
            0.0
        } else {
            100.0 * self.hits[i] as f64 / self.acts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationReport {
    pub ks: Vec<usize>,
    pub sets: Vec<SetResult>,
}

impl EvaluationReport {
    /// Rows are k values, columns test sets, then dialogue and act totals.
    pub fn format(&self) -> String {
        let mut out = String::from("Pred.");
        for s in &self.sets {
            let _ = write!(out, "\t{}", s.name);
        }
        out.push('\n');
        for (i, k) in self.ks.iter().enumerate() {
            let _ = write!(out, "{k}");
            for s in &self.sets {
                let _ = write!(out, "\t{:.2} %", s.accuracy(i));
            }
            out.push('\n');
        }
        out.push_str("Dialogues");
        for s in &self.sets {
            let _ = write!(out, "\t{}", s.dialogues);
        }
        out.push_str("\nActs");
        for s in &self.sets {
            let _ = write!(out, "\t{}", s.acts);
        }
        out.push('\n');
        out
    }
}

fn dialogue_ids(d: &Dialogue, inventory: &ActInventory) -> Result<Vec<ActId>, ModelError> {
    d.turns.iter().map(|t| inventory.require(t.act.as_str())).collect()
}

/// Count top-k hits with `rank` giving the ranking after a history. Dialogues
/// are scored in parallel; the sums do not depend on the order.
fn count_hits<E, F>(
    corpus: &Corpus,
    inventory: &ActInventory,
    ks: &[usize],
    skip_initial: bool,
    rank: F,
) -> Result<(Vec<usize>, usize), HarnessError>
where
    E: Into<HarnessError> + Send,
    F: Fn(&[ActId]) -> Result<Vec<(ActId, f64)>, E> + Sync,
{
    corpus
        .dialogues
        .par_iter()
        .map(|d| -> Result<(Vec<usize>, usize), HarnessError> {
            let ids = dialogue_ids(d, inventory)?;
            let mut hits = vec![0usize; ks.len()];
            let mut total = 0;
            for i in usize::from(skip_initial)..ids.len() {
                let ranked = rank(&ids[..i]).map_err(Into::into)?;
                let pos = ranked.iter().position(|(a, _)| *a == ids[i]).unwrap_or(usize::MAX);
                for (h, &k) in hits.iter_mut().zip(ks) {
                    if pos < k {
                        *h += 1;
                    }
                }
                total += 1;
            }
            Ok((hits, total))
        })
        .try_reduce(
            || (vec![0; ks.len()], 0),
            |(mut a, n), (b, m)| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok((a, n + m))
            },
        )
}

pub fn evaluate(
    model: &LanguageModel,
    corpus: &Corpus,
    name: &str,
    ks: &[usize],
    skip_initial: bool,
) -> Result<SetResult, HarnessError> {
    let (hits, acts) = count_hits(corpus, model.inventory(), ks, skip_initial, |h| model.ranked(h))?;
    Ok(SetResult {
        name: name.to_string(),
        dialogues: corpus.dialogues.len(),
        acts,
        hits,
    })
}

/// Accuracy of predicting with the generating source itself.
pub fn bayes(
    source: &SyntheticSource,
    sample: &Corpus,
    name: &str,
    ks: &[usize],
    skip_initial: bool,
) -> Result<SetResult, HarnessError> {
    let (hits, acts) = count_hits(sample, source.inventory(), ks, skip_initial, |h| {
        source.conditional(h).map(|d| rank_distribution(&d))
    })?;
    Ok(SetResult {
        name: name.to_string(),
        dialogues: sample.dialogues.len(),
        acts,
        hits,
    })
}

pub fn generate(source: &SyntheticSource, count: usize, seed: u64, terminal: &str) -> Result<Corpus, HarnessError> {
    Ok(source.generate(count, seed, terminal)?)
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub transcript: String,
    pub inconsistencies: usize,
    pub repairs: usize,
    pub session: Session,
}

/// Run one dialogue through all layers and render the trace.
pub fn replay(
    model: &DialogueModel,
    library: Arc<OperatorLibrary>,
    predictor: Option<Arc<LanguageModel>>,
    dialogue: &Dialogue,
) -> Result<Replay, HarnessError> {
    let mut session = Session::new(model, library, predictor.clone())?;
    let inv = &model.inventory;
    let ids = dialogue_ids(dialogue, inv)?;
    let mut out = String::new();
    for (i, turn) in dialogue.turns.iter().enumerate() {
        let outcome = session.process(turn)?;
        let _ = writeln!(out, "{}: {}", turn.turn_id, turn.act);
        if let Some(p) = &predictor {
            let top = p.predict_top_k_ids(&ids[..=i], REPLAY_PREDICTIONS)?;
            let names: Vec<&str> = top.iter().map(|s| s.act.as_str()).collect();
            let _ = write!(out, "Prediction: ({})", names.join(" "));
            if let Some(next) = dialogue.turns.get(i + 1) {
                if !top.iter().any(|s| s.act == next.act) {
                    let _ = write!(out, " {FAILED_MARKER}");
                }
            }
            out.push('\n');
        }
        for e in &outcome.events {
            let _ = writeln!(out, "Event: {}", e.display(inv, &model.machine));
        }
        if let Some(r) = &outcome.repair {
            let _ = write!(out, "Repair: {} {}", r.error_kind.as_str(), r.resolution.as_str());
            if !r.inserted.is_empty() {
                let names: Vec<&str> = r.inserted.iter().map(|a| a.as_str()).collect();
                let _ = write!(out, " ({})", names.join(" "));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str(&session.memory_dump());
    let inconsistencies = session.inconsistencies();
    let repairs = session.repairs();
    let _ = writeln!(out, "\ninconsistencies: {inconsistencies}\nrepairs: {repairs}");
    Ok(Replay {
        transcript: out,
        inconsistencies,
        repairs,
        session,
    })
}

/// Look a dialogue up by id.
pub fn find_dialogue<'c>(corpus: &'c Corpus, id: &str) -> Result<&'c Dialogue, HarnessError> {
    corpus
        .dialogue(id)
        .ok_or_else(|| HarnessError::UnknownDialogue(id.to_string()))
}
