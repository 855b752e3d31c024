use std::collections::BTreeMap;
use std::sync::Arc;

use crate::corpus::Corpus;
use crate::model::{ActId, ActInventory};

use super::PredictorError;

/// Symbol index: inventory acts are `0..n`, the boundary symbol is `n`.
pub(crate) type Sym = usize;

/// Unigram row, then the bigram and trigram rows when their context was seen.
pub(crate) type Estimates = (Vec<f64>, Option<Vec<f64>>, Option<Vec<f64>>);

/// Unigram, bigram and trigram counts over speech acts.
///
/// Every dialogue is padded with two leading boundary symbols. The boundary
/// is counted as a unigram (twice per dialogue) and may appear as context in
/// bigrams and trigrams, but never as the predicted (last) element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramTables {
    inventory: Arc<ActInventory>,
    pub(crate) unigrams: Vec<u64>,
    pub(crate) bigrams: BTreeMap<(Sym, Sym), u64>,
    pub(crate) trigrams: BTreeMap<(Sym, Sym, Sym), u64>,
    pub(crate) bigram_context: Vec<u64>,
    pub(crate) trigram_context: BTreeMap<(Sym, Sym), u64>,
    pub(crate) total: u64,
}

impl NGramTables {
    pub fn empty(inventory: Arc<ActInventory>) -> Self {
        let n = inventory.len();
        NGramTables {
            inventory,
            unigrams: vec![0; n + 1],
            bigrams: BTreeMap::new(),
            trigrams: BTreeMap::new(),
            bigram_context: vec![0; n + 1],
            trigram_context: BTreeMap::new(),
            total: 0,
        }
    }

    /// Count every dialogue of `corpus`.
    pub fn train(corpus: &Corpus, inventory: Arc<ActInventory>) -> Result<Self, PredictorError> {
        let mut tables = NGramTables::empty(inventory);
        for dialogue in &corpus.dialogues {
            let ids = dialogue
                .turns
                .iter()
                .map(|t| tables.inventory.require(t.act.as_str()))
                .collect::<Result<Vec<_>, _>>()?;
            tables.count_sequence(&ids);
        }
        Ok(tables)
    }

    pub(crate) fn count_sequence(&mut self, acts: &[ActId]) {
        for i in 0..acts.len() {
            self.observe_ids(&acts[..i], acts[i]);
        }
    }

    pub fn inventory(&self) -> &Arc<ActInventory> {
        &self.inventory
    }

    pub fn boundary(&self) -> Sym {
        self.inventory.len()
    }

    /// Sum of all unigram counts, boundary symbols included.
    pub fn total_unigrams(&self) -> u64 {
        self.total
    }

    /// Unigram count mass of real acts (boundary excluded).
    pub fn act_total(&self) -> u64 {
        self.total - self.unigrams[self.boundary()]
    }

    pub fn unigram_count(&self, act: ActId) -> u64 {
        self.unigrams[act.0]
    }

    pub fn boundary_count(&self) -> u64 {
        self.unigrams[self.boundary()]
    }

    pub fn bigram_count(&self, prev: Option<ActId>, act: ActId) -> u64 {
        let prev = prev.map_or(self.boundary(), |a| a.0);
        self.bigrams.get(&(prev, act.0)).copied().unwrap_or(0)
    }

    pub fn trigram_count(&self, prev2: Option<ActId>, prev: Option<ActId>, act: ActId) -> u64 {
        let b = self.boundary();
        let key = (prev2.map_or(b, |a| a.0), prev.map_or(b, |a| a.0), act.0);
        self.trigrams.get(&key).copied().unwrap_or(0)
    }

    /// `count(s) / total_unigrams` over acts and the boundary symbol.
    pub fn relative_frequency(&self, sym: Option<ActId>) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let count = self.unigrams[sym.map_or(self.boundary(), |a| a.0)];
        count as f64 / self.total as f64
    }

    /// The two conditioning symbols for the next act after `history`.
    pub(crate) fn context(&self, history: &[ActId]) -> (Sym, Sym) {
        let b = self.boundary();
        let n = history.len();
        let prev = if n >= 1 { history[n - 1].0 } else { b };
        let prev2 = if n >= 2 { history[n - 2].0 } else { b };
        (prev2, prev)
    }

    pub(crate) fn observe_ids(&mut self, history: &[ActId], act: ActId) {
        let b = self.boundary();
        if history.is_empty() {
            self.unigrams[b] += 2;
            self.total += 2;
        }
        let (prev2, prev) = self.context(history);
        self.unigrams[act.0] += 1;
        self.total += 1;
        *self.bigrams.entry((prev, act.0)).or_insert(0) += 1;
        self.bigram_context[prev] += 1;
        *self.trigrams.entry((prev2, prev, act.0)).or_insert(0) += 1;
        *self.trigram_context.entry((prev2, prev)).or_insert(0) += 1;
    }

    /// Count one more observation in place. An empty history marks the start
    /// of a dialogue and also counts its two boundary symbols.
    pub fn observe(&mut self, history: &[ActId], act: ActId) -> Result<(), PredictorError> {
        let n = self.inventory.len();
        if act.0 >= n || history.iter().any(|h| h.0 >= n) {
            return Err(PredictorError::UnknownAct(format!("#{}", act.0)));
        }
        self.observe_ids(history, act);
        Ok(())
    }

    /// Copy-on-write variant of [`NGramTables::observe`] taking labels.
    pub fn online_update(&self, history: &[&str], observed: &str) -> Result<Self, PredictorError> {
        let act = self.inventory.require(observed)?;
        let history = history
            .iter()
            .map(|h| self.inventory.require(h))
            .collect::<Result<Vec<_>, _>>()?;
        let mut next = self.clone();
        next.observe_ids(&history, act);
        Ok(next)
    }

    /// Maximum-likelihood estimates `(f(s), f(s|prev), f(s|prev2,prev))` for
    /// every act, with `None` for an order whose context was never seen.
    pub(crate) fn relative_frequencies(
        &self,
        history: &[ActId],
    ) -> Result<Estimates, PredictorError> {
        let act_total = self.act_total();
        if act_total == 0 {
            return Err(PredictorError::Untrained);
        }
        let n = self.inventory.len();
        let (prev2, prev) = self.context(history);
        let uni: Vec<f64> = (0..n)
            .map(|s| self.unigrams[s] as f64 / act_total as f64)
            .collect();
        let bi_total = self.bigram_context[prev];
        let bi = (bi_total > 0).then(|| {
            (0..n)
                .map(|s| {
                    self.bigrams.get(&(prev, s)).copied().unwrap_or(0) as f64 / bi_total as f64
                })
                .collect()
        });
        let tri_total = self.trigram_context.get(&(prev2, prev)).copied().unwrap_or(0);
        let tri = (tri_total > 0).then(|| {
            (0..n)
                .map(|s| {
                    self.trigrams.get(&(prev2, prev, s)).copied().unwrap_or(0) as f64
                        / tri_total as f64
                })
                .collect()
        });
        Ok((uni, bi, tri))
    }

    /// Checks the count invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let sum: u64 = self.unigrams.iter().sum();
        if sum != self.total {
            return Err(format!("total {} != sum of unigrams {}", self.total, sum));
        }
        for (&(a, b), &c) in &self.bigrams {
            if c > self.unigrams[a] {
                return Err(format!("bigram ({a},{b}) count {c} exceeds unigram {}", self.unigrams[a]));
            }
        }
        for (a, &ctx) in self.bigram_context.iter().enumerate() {
            let s: u64 = self.bigrams.range((a, 0)..(a + 1, 0)).map(|(_, c)| c).sum();
            if s != ctx {
                return Err(format!("bigram context {a} total mismatch"));
            }
        }
        for (&(a, b), &ctx) in &self.trigram_context {
            let s: u64 = self
                .trigrams
                .range((a, b, 0)..(a, b + 1, 0))
                .map(|(_, c)| c)
                .sum();
            if s != ctx {
                return Err(format!("trigram context ({a},{b}) total mismatch"));
            }
            let b_sym = self.boundary();
            if (a, b) != (b_sym, b_sym) && ctx > self.bigrams.get(&(a, b)).copied().unwrap_or(0) {
                return Err(format!("trigram context ({a},{b}) exceeds its bigram"));
            }
        }
        Ok(())
    }
}
