//! Statistical layer: trigram speech-act prediction with deleted
//! interpolation.
//!
//! The probability of the next act `s` after history `.., a, b` is
//!
//! ```text
//! q1 f(s) + q2 f(s | b) + q3 f(s | a, b)
//! ```
//!
//! where `f` are relative frequencies from the training corpus. A history
//! shorter than two acts is padded with the boundary symbol. If the trigram
//! context `(a, b)` was never seen, `q3` is added to `q2`; if `b` was never
//! seen as a context, the bigram weight is added to `q1`. The unigram term is
//! normalized over real acts only, so the result is a distribution over the
//! inventory.

mod persist;
mod tables;
mod weights;

use std::sync::Arc;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{ActId, ActInventory, ActLabel, ModelError};

pub use persist::{read_model, write_model, BOUNDARY};
pub(crate) use persist::parse_raw;
pub use tables::NGramTables;
pub use weights::{estimate_weights, InterpolationWeights, EM_MAX_ITERATIONS, EM_TOLERANCE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PredictorError {
    #[error("model is untrained (no act counts)")]
    Untrained,
    #[error("unknown act `{0}`")]
    UnknownAct(String),
    #[error("held-out data has no usable trigram events")]
    DegenerateHeldOut,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<ModelError> for PredictorError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownAct(a) => PredictorError::UnknownAct(a),
            other => PredictorError::UnknownAct(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub act: ActLabel,
    pub probability: f64,
}

/// Trained tables plus weights; an immutable snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub tables: NGramTables,
    pub weights: InterpolationWeights,
}

impl LanguageModel {
    pub fn new(tables: NGramTables, weights: InterpolationWeights) -> Self {
        LanguageModel { tables, weights }
    }

    /// Train tables on `train` and estimate weights on `held_out`.
    pub fn fit(
        train: &Corpus,
        held_out: &Corpus,
        inventory: Arc<ActInventory>,
    ) -> Result<Self, PredictorError> {
        let tables = NGramTables::train(train, inventory)?;
        let weights = estimate_weights(&tables, held_out)?;
        Ok(LanguageModel { tables, weights })
    }

    pub fn inventory(&self) -> &Arc<ActInventory> {
        self.tables.inventory()
    }

    /// Interpolated distribution over the inventory for the act following
    /// `history`.
    pub fn distribution(&self, history: &[ActId]) -> Result<Vec<f64>, PredictorError> {
        let (uni, bi, tri) = self.tables.relative_frequencies(history)?;
        let [q1, q2, q3] = self.weights.effective(bi.is_some(), tri.is_some());
        Ok((0..uni.len())
            .map(|s| {
                let mut p = q1 * uni[s];
                if let Some(bi) = &bi {
                    p += q2 * bi[s];
                }
                if let Some(tri) = &tri {
                    p += q3 * tri[s];
                }
                p
            })
            .collect())
    }

    pub fn probability_of(&self, history: &[ActId], candidate: ActId) -> Result<f64, PredictorError> {
        Ok(self.distribution(history)?[candidate.0])
    }

    /// Label-based form of [`LanguageModel::probability_of`].
    pub fn probability(&self, history: &[&str], candidate: &str) -> Result<f64, PredictorError> {
        let candidate = self.inventory().require(candidate)?;
        let history = self.ids(history)?;
        self.probability_of(&history, candidate)
    }

    fn ids(&self, history: &[&str]) -> Result<Vec<ActId>, PredictorError> {
        history
            .iter()
            .map(|h| self.inventory().require(h).map_err(Into::into))
            .collect()
    }

    /// Acts ranked by probability (descending, ties in inventory order).
    pub fn ranked(&self, history: &[ActId]) -> Result<Vec<(ActId, f64)>, PredictorError> {
        let dist = self.distribution(history)?;
        Ok(rank_distribution(&dist))
    }

    pub fn predict_top_k_ids(
        &self,
        history: &[ActId],
        k: usize,
    ) -> Result<Vec<ScoredPrediction>, PredictorError> {
        let inv = self.inventory();
        Ok(self
            .ranked(history)?
            .into_iter()
            .take(k)
            .map(|(id, p)| ScoredPrediction {
                act: inv.label(id).clone(),
                probability: p,
            })
            .collect())
    }

    pub fn predict_top_k(&self, history: &[&str], k: usize) -> Result<Vec<ScoredPrediction>, PredictorError> {
        let history = self.ids(history)?;
        self.predict_top_k_ids(&history, k)
    }

    /// Keywords of the top-k predicted acts: prediction-rank order, file order
    /// within an act, first occurrence kept.
    pub fn predict_keywords(&self, history: &[&str], k: usize) -> Result<Vec<String>, PredictorError> {
        let mut out: Vec<String> = Vec::new();
        for p in self.predict_top_k(history, k)? {
            for w in self.inventory().keywords_for(p.act.as_str())? {
                if !out.contains(w) {
                    out.push(w.clone());
                }
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        write_model(self)
    }

    pub fn from_text(text: &str, inventory: Arc<ActInventory>) -> Result<Self, PredictorError> {
        read_model(text, inventory)
    }
}

/// Indices sorted by probability descending, ties by index.
pub(crate) fn rank_distribution(dist: &[f64]) -> Vec<(ActId, f64)> {
    let mut ranked: Vec<(ActId, f64)> = dist.iter().enumerate().map(|(i, p)| (ActId(i), *p)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
