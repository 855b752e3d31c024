//! Synthetic trigram sources for generating corpora with a known
//! distribution.
//!
//! A source is written in the model persistence layout, with every value read
//! as an (unnormalized) probability: unigram entries give `P(s)`, bigram
//! entries `P(s | prev)`, trigram entries `P(s | prev2, prev)`. Each row is
//! normalized on load. The next-act distribution interpolates the three rows
//! with the `[weights]` and folds unlisted contexts down exactly like the
//! predictor does, so a trained model file read as a source reproduces that
//! model's predictions.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Corpus, Dialogue, Turn};
use crate::model::{ActId, ActInventory};
use crate::predictor::{parse_raw, rank_distribution, InterpolationWeights, PredictorError};

/// A generated dialogue longer than this is treated as non-terminating.
pub const MAX_DIALOGUE_LENGTH: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SourceError {
    #[error(transparent)]
    Format(#[from] PredictorError),
    #[error("source has no distribution for context ({0}, {1})")]
    UndefinedContext(String, String),
    #[error("dialogue exceeded {MAX_DIALOGUE_LENGTH} acts without reaching {0}")]
    Nonterminating(String),
    #[error("unknown act `{0}`")]
    UnknownAct(String),
}

type Row = Vec<f64>;

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    inventory: Arc<ActInventory>,
    weights: InterpolationWeights,
    unigram: Option<Row>,
    bigram: HashMap<usize, Row>,
    trigram: HashMap<(usize, usize), Row>,
}

fn normalize(row: &mut Row) -> bool {
    let s: f64 = row.iter().sum();
    if s <= 0.0 {
        return false;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
    true
}

impl SyntheticSource {
    pub fn from_text(text: &str, inventory: Arc<ActInventory>) -> Result<Self, SourceError> {
        let raw = parse_raw(text, &inventory)?;
        let weights = InterpolationWeights::new(raw.weights[0], raw.weights[1], raw.weights[2])?;
        let n = inventory.len();
        let boundary = n;

        let mut unigram = vec![0.0; n];
        for (s, v) in raw.unigrams {
            // the boundary unigram of a trained model is not an outcome
            if s != boundary {
                unigram[s] += v;
            }
        }
        let unigram = normalize(&mut unigram).then_some(unigram);

        let mut bigram: HashMap<usize, Row> = HashMap::new();
        for ((a, s), v) in raw.bigrams {
            bigram.entry(a).or_insert_with(|| vec![0.0; n])[s] += v;
        }
        bigram.retain(|_, row| normalize(row));

        let mut trigram: HashMap<(usize, usize), Row> = HashMap::new();
        for ((a, b, s), v) in raw.trigrams {
            trigram.entry((a, b)).or_insert_with(|| vec![0.0; n])[s] += v;
        }
        trigram.retain(|_, row| normalize(row));

        Ok(SyntheticSource {
            inventory,
            weights,
            unigram,
            bigram,
            trigram,
        })
    }

    pub fn inventory(&self) -> &Arc<ActInventory> {
        &self.inventory
    }

    fn name(&self, sym: usize) -> String {
        if sym == self.inventory.len() {
            crate::predictor::BOUNDARY.to_string()
        } else {
            self.inventory.acts()[sym].to_string()
        }
    }

    /// Distribution of the act following `history`.
    pub fn conditional(&self, history: &[ActId]) -> Result<Vec<f64>, SourceError> {
        let b = self.inventory.len();
        let k = history.len();
        let prev = if k >= 1 { history[k - 1].0 } else { b };
        let prev2 = if k >= 2 { history[k - 2].0 } else { b };
        let tri = self.trigram.get(&(prev2, prev));
        let bi = self.bigram.get(&prev);
        let [q1, q2, q3] = self.weights.effective(bi.is_some(), tri.is_some());
        let mut out = vec![0.0; b];
        let mut mass = 0.0;
        for (q, row) in [(q1, self.unigram.as_ref()), (q2, bi), (q3, tri)] {
            if q == 0.0 {
                continue;
            }
            if let Some(row) = row {
                for (o, p) in out.iter_mut().zip(row) {
                    *o += q * p;
                }
                mass += q;
            }
        }
        if mass == 0.0 {
            return Err(SourceError::UndefinedContext(self.name(prev2), self.name(prev)));
        }
        if mass != 1.0 {
            // the unigram row is absent; renormalize over the orders present
            for o in out.iter_mut() {
                *o /= mass;
            }
        }
        Ok(out)
    }

    /// Sample one act sequence, stopping after `terminal`.
    pub fn sample_dialogue<R: Rng>(&self, rng: &mut R, terminal: ActId) -> Result<Vec<ActId>, SourceError> {
        let mut acts = Vec::new();
        loop {
            if acts.len() >= MAX_DIALOGUE_LENGTH {
                return Err(SourceError::Nonterminating(self.inventory.label(terminal).to_string()));
            }
            let dist = self.conditional(&acts)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, p) in dist.iter().enumerate() {
                if *p <= 0.0 {
                    continue;
                }
                acc += p;
                chosen = Some(i);
                if u < acc {
                    break;
                }
            }
            let next = ActId(chosen.expect("conditional has positive mass"));
            acts.push(next);
            if next == terminal {
                return Ok(acts);
            }
        }
    }

    /// `count` dialogues, deterministic for a given seed.
    pub fn generate(&self, count: usize, seed: u64, terminal: &str) -> Result<Corpus, SourceError> {
        let terminal = self
            .inventory
            .id(terminal)
            .ok_or_else(|| SourceError::UnknownAct(terminal.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = count.max(1).to_string().len();
        let mut dialogues = Vec::with_capacity(count);
        for d in 0..count {
            let id = format!("G{:0width$}", d + 1);
            let acts = self.sample_dialogue(&mut rng, terminal)?;
            let turns = acts
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    Turn::new(
                        &id,
                        &(i + 1).to_string(),
                        if i % 2 == 0 { "A" } else { "B" },
                        self.inventory.label(*a).as_str(),
                    )
                })
                .collect();
            dialogues.push(Dialogue { id, turns });
        }
        Ok(Corpus::new(dialogues))
    }

    /// Top-k accuracy (percent, per k) of predicting with the source itself:
    /// the ceiling for any model trained on its samples.
    pub fn bayes_accuracy(&self, sample: &Corpus, ks: &[usize], skip_initial: bool) -> Result<Vec<f64>, SourceError> {
        let mut hits = vec![0usize; ks.len()];
        let mut total = 0usize;
        for d in &sample.dialogues {
            let ids = d
                .turns
                .iter()
                .map(|t| {
                    self.inventory
                        .id(t.act.as_str())
                        .ok_or_else(|| SourceError::UnknownAct(t.act.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            for i in 0..ids.len() {
                if skip_initial && i == 0 {
                    continue;
                }
                let ranked = rank_distribution(&self.conditional(&ids[..i])?);
                let pos = ranked.iter().position(|(a, _)| *a == ids[i]).expect("every act is ranked");
                for (h, &k) in hits.iter_mut().zip(ks) {
                    if pos < k {
                        *h += 1;
                    }
                }
                total += 1;
            }
        }
        Ok(hits
            .iter()
            .map(|h| if total == 0 { 0.0 } else { 100.0 * *h as f64 / total as f64 })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DialogueModel;

    fn inv() -> Arc<ActInventory> {
        DialogueModel::default_model().inventory
    }

    const DET: &str = include_str!("../data/sources/det_trigram.source");
    const UNI: &str = include_str!("../data/sources/unigram.source");

    #[test]
    fn rows_are_normalized() {
        let src = SyntheticSource::from_text(UNI, inv()).unwrap();
        let d = src.conditional(&[]).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let v = inv().id("VORSCHLAG").unwrap();
        assert!((d[v.0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn deterministic_source_is_deterministic() {
        let src = SyntheticSource::from_text(DET, inv()).unwrap();
        let c = src.generate(3, 1, "VERABSCHIEDUNG").unwrap();
        for d in &c.dialogues {
            let acts: Vec<&str> = d.turns.iter().map(|t| t.act.as_str()).collect();
            assert_eq!(
                acts,
                [
                    "BEGRUESSUNG",
                    "INIT_TERMINABSPRACHE",
                    "VORSCHLAG",
                    "ABLEHNUNG",
                    "VORSCHLAG",
                    "AKZEPTANZ",
                    "BESTAETIGUNG",
                    "VERABSCHIEDUNG"
                ]
            );
        }
        assert_eq!(src.bayes_accuracy(&c, &[1], false).unwrap(), vec![100.0]);
    }

    #[test]
    fn same_seed_same_corpus() {
        let src = SyntheticSource::from_text(UNI, inv()).unwrap();
        let a = src.generate(20, 7, "VERABSCHIEDUNG").unwrap();
        let b = src.generate(20, 7, "VERABSCHIEDUNG").unwrap();
        assert_eq!(a, b);
        let c = src.generate(20, 8, "VERABSCHIEDUNG").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unreachable_terminal_is_reported() {
        let text = "[weights]\n1 0 0\n[unigrams]\nVORSCHLAG\t1\n";
        let src = SyntheticSource::from_text(text, inv()).unwrap();
        assert!(matches!(
            src.generate(1, 0, "VERABSCHIEDUNG"),
            Err(SourceError::Nonterminating(_))
        ));
    }

    #[test]
    fn missing_context_is_an_error() {
        let text = "[weights]\n0 0 1\n[trigrams]\n<s> <s> VORSCHLAG\t1\n";
        let src = SyntheticSource::from_text(text, inv()).unwrap();
        let v = inv().id("VORSCHLAG").unwrap();
        assert!(matches!(
            src.conditional(&[v]),
            Err(SourceError::UndefinedContext(..))
        ));
    }

    #[test]
    fn uniform_source_ceiling_is_k_over_m() {
        let mut text = String::from("[weights]\n1 0 0\n[unigrams]\n");
        for a in inv().acts() {
            text.push_str(&format!("{a}\t1\n"));
        }
        let src = SyntheticSource::from_text(&text, inv()).unwrap();
        let sample = src.generate(2000, 3, "VERABSCHIEDUNG").unwrap();
        let acc = src.bayes_accuracy(&sample, &[1, 2, 3], false).unwrap();
        let m = inv().len() as f64;
        for (k, a) in [1.0, 2.0, 3.0].iter().zip(&acc) {
            assert!((a - 100.0 * k / m).abs() < 1.5, "k={k}: {a}");
        }
    }
}
