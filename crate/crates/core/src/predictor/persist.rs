//! Text persistence for trained models.
//!
//! ```text
//! [weights]
//! 0.2
//! 0.3
//! 0.5
//! [unigrams]
//! <s>    4
//! VORSCHLAG    3
//! [bigrams]
//! VORSCHLAG AKZEPTANZ    2
//! [trigrams]
//! ABLEHNUNG VORSCHLAG AKZEPTANZ    1
//! ```
//!
//! Counts follow the symbols after a tab. `<s>` is the boundary symbol. Entries are written in inventory order with
//! the boundary first; zero counts are omitted.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::model::ActInventory;

use super::tables::{NGramTables, Sym};
use super::{InterpolationWeights, LanguageModel, PredictorError};

pub const BOUNDARY: &str = "<s>";

/// Section contents with real-valued entries; shared with the synthetic
/// source loader, which reads the same layout as probabilities.
#[derive(Debug, Default)]
pub(crate) struct RawTables {
    pub weights: Vec<f64>,
    pub unigrams: Vec<(Sym, f64)>,
    pub bigrams: Vec<((Sym, Sym), f64)>,
    pub trigrams: Vec<((Sym, Sym, Sym), f64)>,
}

fn perr(line: usize, message: impl Into<String>) -> PredictorError {
    PredictorError::Parse {
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_raw(text: &str, inventory: &ActInventory) -> Result<RawTables, PredictorError> {
    let boundary = inventory.len();
    let sym = |name: &str, line: usize| -> Result<Sym, PredictorError> {
        if name == BOUNDARY {
            return Ok(boundary);
        }
        inventory
            .id(name)
            .map(|a| a.0)
            .ok_or_else(|| perr(line, format!("unknown act {name}")))
    };
    let order = ["weights", "unigrams", "bigrams", "trigrams"];
    let mut section: Option<usize> = None;
    let mut raw = RawTables::default();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if let Some(name) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let idx = order
                .iter()
                .position(|s| *s == name)
                .ok_or_else(|| perr(line, format!("unknown section [{name}]")))?;
            if section.is_some_and(|cur| idx <= cur) {
                return Err(perr(line, format!("section [{name}] out of order")));
            }
            section = Some(idx);
            continue;
        }
        let value_of = |v: &str| -> Result<f64, PredictorError> {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| perr(line, format!("bad number `{v}`")))?;
            if !x.is_finite() || x < 0.0 {
                return Err(perr(line, format!("value must be finite and non-negative: {v}")));
            }
            Ok(x)
        };
        match section {
            None => return Err(perr(line, "content before first section")),
            Some(0) => {
                for tok in l.split_whitespace() {
                    raw.weights.push(value_of(tok)?);
                }
            }
            Some(s) => {
                let (key, value) = l
                    .split_once('\t')
                    .ok_or_else(|| perr(line, "expected `ACT[ ACT[ ACT]]<TAB>value`"))?;
                let value = value_of(value)?;
                let names: Vec<&str> = key.split(' ').filter(|t| !t.is_empty()).collect();
                if names.len() != s {
                    return Err(perr(line, format!("expected {s} act(s), found {}", names.len())));
                }
                let syms = names
                    .iter()
                    .map(|n| sym(n, line))
                    .collect::<Result<Vec<_>, _>>()?;
                if s > 1 && syms[s - 1] == boundary {
                    return Err(perr(line, "the boundary symbol cannot be predicted"));
                }
                match s {
                    1 => raw.unigrams.push((syms[0], value)),
                    2 => raw.bigrams.push(((syms[0], syms[1]), value)),
                    _ => raw.trigrams.push(((syms[0], syms[1], syms[2]), value)),
                }
            }
        }
    }
    if raw.weights.len() != 3 {
        return Err(perr(0, format!("[weights] needs 3 values, found {}", raw.weights.len())));
    }
    Ok(raw)
}

fn as_count(v: f64) -> Result<u64, PredictorError> {
    if v.fract() != 0.0 {
        return Err(PredictorError::Parse {
            line: 0,
            message: format!("count {v} is not an integer"),
        });
    }
    Ok(v as u64)
}

pub fn read_model(text: &str, inventory: Arc<ActInventory>) -> Result<LanguageModel, PredictorError> {
    let raw = parse_raw(text, &inventory)?;
    let weights = InterpolationWeights::new(raw.weights[0], raw.weights[1], raw.weights[2])?;
    let mut tables = NGramTables::empty(inventory);
    for (s, v) in raw.unigrams {
        tables.unigrams[s] = as_count(v)?;
    }
    tables.total = tables.unigrams.iter().sum();
    for ((a, b), v) in raw.bigrams {
        let c = as_count(v)?;
        if c > 0 {
            tables.bigrams.insert((a, b), c);
            tables.bigram_context[a] += c;
        }
    }
    for ((a, b, c), v) in raw.trigrams {
        let n = as_count(v)?;
        if n > 0 {
            tables.trigrams.insert((a, b, c), n);
            *tables.trigram_context.entry((a, b)).or_insert(0) += n;
        }
    }
    tables
        .check_invariants()
        .map_err(|m| PredictorError::Parse { line: 0, message: m })?;
    Ok(LanguageModel { tables, weights })
}

/// Boundary sorts first, then inventory order.
fn rank(sym: Sym, boundary: Sym) -> usize {
    if sym == boundary {
        0
    } else {
        sym + 1
    }
}

pub fn write_model(model: &LanguageModel) -> String {
    let t = &model.tables;
    let inv = t.inventory();
    let b = t.boundary();
    let name = |s: Sym| -> &str {
        if s == b {
            BOUNDARY
        } else {
            inv.acts()[s].as_str()
        }
    };
    let mut out = String::from("[weights]\n");
    for q in model.weights.as_array() {
        out.push_str(&format!("{q}\n"));
    }
    out.push_str("[unigrams]\n");
    let mut syms: Vec<Sym> = (0..=b).collect();
    syms.sort_by_key(|s| rank(*s, b));
    for s in &syms {
        if t.unigrams[*s] > 0 {
            out.push_str(&format!("{}\t{}\n", name(*s), t.unigrams[*s]));
        }
    }
    out.push_str("[bigrams]\n");
    let bigrams: BTreeMap<(usize, usize), u64> = t
        .bigrams
        .iter()
        .map(|(&(x, y), &c)| ((rank(x, b), rank(y, b)), c))
        .collect();
    let unrank = |r: usize| if r == 0 { b } else { r - 1 };
    for ((x, y), c) in bigrams {
        out.push_str(&format!("{} {}\t{}\n", name(unrank(x)), name(unrank(y)), c));
    }
    out.push_str("[trigrams]\n");
    let trigrams: BTreeMap<(usize, usize, usize), u64> = t
        .trigrams
        .iter()
        .map(|(&(x, y, z), &c)| ((rank(x, b), rank(y, b), rank(z, b)), c))
        .collect();
    for ((x, y, z), c) in trigrams {
        out.push_str(&format!(
            "{} {} {}\t{}\n",
            name(unrank(x)),
            name(unrank(y)),
            name(unrank(z)),
            c
        ));
    }
    out
}
