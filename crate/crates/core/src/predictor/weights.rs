use crate::corpus::Corpus;

use super::tables::NGramTables;
use super::PredictorError;

/// Stop when no weight moves by more than this between iterations.
pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERATIONS: usize = 200;

/// Mixture weights for the unigram, bigram and trigram estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationWeights {
    q: [f64; 3],
}

impl InterpolationWeights {
    /// Weights must be non-negative and sum to one (within 1e-9); they are
    /// renormalized so the stored sum is exact to rounding.
    pub fn new(q1: f64, q2: f64, q3: f64) -> Result<Self, PredictorError> {
        let q = [q1, q2, q3];
        if q.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PredictorError::InvalidWeights(format!(
                "weights must be non-negative, got {q:?}"
            )));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PredictorError::InvalidWeights(format!(
                "weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self::normalized(q))
    }

    /// Sums already within rounding of one are kept bit-for-bit, which makes
    /// normalization idempotent and persistence exact.
    fn normalized(q: [f64; 3]) -> Self {
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() <= 4.0 * f64::EPSILON {
            return InterpolationWeights { q };
        }
        InterpolationWeights {
            q: [q[0] / sum, q[1] / sum, q[2] / sum],
        }
    }

    pub fn uniform() -> Self {
        InterpolationWeights {
            q: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }

    pub fn q1(&self) -> f64 {
        self.q[0]
    }

    pub fn q2(&self) -> f64 {
        self.q[1]
    }

    pub fn q3(&self) -> f64 {
        self.q[2]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.q
    }

    /// Weights after folding the mass of unseen contexts down to the next
    /// lower order.
    pub(crate) fn effective(&self, bigram_seen: bool, trigram_seen: bool) -> [f64; 3] {
        let [mut q1, mut q2, mut q3] = self.q;
        if !trigram_seen {
            q2 += q3;
            q3 = 0.0;
        }
        if !bigram_seen {
            q1 += q2;
            q2 = 0.0;
        }
        [q1, q2, q3]
    }
}

/// Held-out re-estimation of the interpolation weights.
///
/// Each held-out act contributes its three component likelihoods; when a
/// context is unseen the component takes the next lower order's estimate,
/// which is exactly the redistribution the predictor applies, so the
/// likelihood being maximized is that of the model actually used.
pub fn estimate_weights(
    tables: &NGramTables,
    held_out: &Corpus,
) -> Result<InterpolationWeights, PredictorError> {
    let inventory = tables.inventory();
    let mut events: Vec<[f64; 3]> = Vec::new();
    for dialogue in &held_out.dialogues {
        let ids = dialogue
            .turns
            .iter()
            .map(|t| inventory.require(t.act.as_str()))
            .collect::<Result<Vec<_>, _>>()?;
        for i in 0..ids.len() {
            let (uni, bi, tri) = tables.relative_frequencies(&ids[..i])?;
            let s = ids[i].0;
            let p1 = uni[s];
            let p2 = bi.as_ref().map_or(p1, |b| b[s]);
            let p3 = tri.as_ref().map_or(p2, |t| t[s]);
            if p1 > 0.0 || p2 > 0.0 || p3 > 0.0 {
                events.push([p1, p2, p3]);
            }
        }
    }
    if events.is_empty() {
        return Err(PredictorError::DegenerateHeldOut);
    }

    let mut q = InterpolationWeights::uniform().q;
    let n = events.len() as f64;
    for _ in 0..EM_MAX_ITERATIONS {
        let mut acc = [0.0f64; 3];
        for p in &events {
            let mix = q[0] * p[0] + q[1] * p[1] + q[2] * p[2];
            if mix <= 0.0 {
                continue;
            }
            for j in 0..3 {
                acc[j] += q[j] * p[j] / mix;
            }
        }
        let next = [acc[0] / n, acc[1] / n, acc[2] / n];
        let sum: f64 = next.iter().sum();
        let next = [next[0] / sum, next[1] / sum, next[2] / sum];
        let delta = (0..3).map(|j| (next[j] - q[j]).abs()).fold(0.0, f64::max);
        q = next;
        if delta < EM_TOLERANCE {
            break;
        }
    }
    Ok(InterpolationWeights::normalized(q))
}
