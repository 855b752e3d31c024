//! Generated corpora checked against the sources that produced them.

use std::collections::BTreeMap;
use std::sync::Arc;

use dialact_core::harness;
use dialact_core::{
    read_corpus, write_corpus, ActId, ActInventory, Corpus, DialogueModel, InterpolationWeights, LanguageModel,
    NGramTables, SourceError, SyntheticSource,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const TINY: &str = include_str!("../data/fixtures/tiny.corpus");
const NEGOTIATION: &str = include_str!("../data/sources/negotiation.source");
const DET_TRIGRAM: &str = include_str!("../data/sources/det_trigram.source");
const TERMINAL: &str = "VERABSCHIEDUNG";

fn inventory() -> Arc<ActInventory> {
    DialogueModel::default_model().inventory
}

fn ids(corpus: &Corpus, inv: &ActInventory) -> Vec<Vec<ActId>> {
    corpus
        .dialogues
        .iter()
        .map(|d| d.turns.iter().map(|t| inv.require(t.act.as_str()).unwrap()).collect())
        .collect()
}

/// The two preceding acts, `None` before the dialogue start.
type Context = (Option<usize>, Option<usize>);

/// Pearson statistic of observed successor counts against the source's
/// conditionals, per two-act context. Cells expecting fewer than five
/// events are pooled within their context.
fn chi_square(source: &SyntheticSource, sample: &Corpus) -> (f64, f64) {
    let inv = source.inventory().clone();
    let m = inv.len();
    let mut contexts: BTreeMap<Context, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for seq in ids(sample, &inv) {
        for i in 0..seq.len() {
            let key = (i.checked_sub(2).map(|j| seq[j].0), i.checked_sub(1).map(|j| seq[j].0));
            let p = source.conditional(&seq[..i]).unwrap();
            let (obs, exp) = contexts.entry(key).or_insert_with(|| (vec![0.0; m], vec![0.0; m]));
            obs[seq[i].0] += 1.0;
            for (e, q) in exp.iter_mut().zip(&p) {
                *e += q;
            }
        }
    }
    let (mut stat, mut df) = (0.0, 0.0);
    for (obs, exp) in contexts.values() {
        let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
        let mut bins = Vec::new();
        for (o, e) in obs.iter().zip(exp) {
            if *e >= 5.0 {
                bins.push((*o, *e));
            } else {
                pooled_o += o;
                pooled_e += e;
            }
        }
        if pooled_e > 0.0 {
            bins.push((pooled_o, pooled_e));
        }
        if bins.len() < 2 {
            continue;
        }
        stat += bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum::<f64>();
        df += (bins.len() - 1) as f64;
    }
    (stat, df)
}

fn p_value(stat: f64, df: f64) -> f64 {
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

#[test]
fn generated_trigrams_follow_the_source() {
    let src = SyntheticSource::from_text(NEGOTIATION, inventory()).unwrap();
    let sample = harness::generate(&src, 1000, 5, TERMINAL).unwrap();
    let (stat, df) = chi_square(&src, &sample);
    assert!(df > 10.0, "df {df}");
    let p = p_value(stat, df);
    assert!(p > 1e-3, "chi2 {stat} on {df} df, p = {p}");
}

#[test]
fn source_read_off_the_tiny_corpus_regenerates_it() {
    let inv = inventory();
    let t = read_corpus(TINY, &inv).unwrap();
    let tables = NGramTables::train(&t, inv.clone()).unwrap();
    let text = LanguageModel::new(tables, InterpolationWeights::new(0.0, 0.0, 1.0).unwrap()).to_text();
    let src = SyntheticSource::from_text(&text, inv.clone()).unwrap();
    let sample = harness::generate(&src, 1000, 9, TERMINAL).unwrap();
    // the only branching context is (INIT_TERMINABSPRACHE, VORSCHLAG)
    let (stat, df) = chi_square(&src, &sample);
    assert_eq!(df, 1.0);
    assert!(p_value(stat, df) > 1e-3, "chi2 {stat}");
    let originals: Vec<Vec<ActId>> = ids(&t, &inv);
    for seq in ids(&sample, &inv) {
        assert!(originals.contains(&seq));
    }
}

#[test]
fn generation_depends_only_on_the_seed() {
    let src = SyntheticSource::from_text(NEGOTIATION, inventory()).unwrap();
    let a = write_corpus(&harness::generate(&src, 200, 3, TERMINAL).unwrap());
    let b = write_corpus(&harness::generate(&src, 200, 3, TERMINAL).unwrap());
    assert_eq!(a, b);
}

#[test]
fn unreachable_terminal_is_reported() {
    let src = SyntheticSource::from_text(
        "[weights]\n1\n0\n0\n[unigrams]\nBEGRUESSUNG\t1\n[bigrams]\n[trigrams]\n",
        inventory(),
    )
    .unwrap();
    assert!(matches!(
        src.generate(1, 0, TERMINAL),
        Err(SourceError::Nonterminating(_))
    ));
}

#[test]
fn deterministic_source_is_predicted_perfectly() {
    let inv = inventory();
    let src = SyntheticSource::from_text(DET_TRIGRAM, inv.clone()).unwrap();
    let train = harness::generate(&src, 100, 1, TERMINAL).unwrap();
    let test = harness::generate(&src, 100, 2, TERMINAL).unwrap();
    let bayes = harness::bayes(&src, &test, "det", &[1], false).unwrap();
    assert_eq!(bayes.accuracy(0), 100.0);
    let lm = harness::train(&train, inv, 0.9).unwrap();
    let trained = harness::evaluate(&lm, &test, "det", &[1], false).unwrap();
    assert_eq!(trained.accuracy(0), 100.0);
}

#[test]
fn uniform_source_ceiling_is_k_over_m() {
    let inv = inventory();
    let m = inv.len();
    let mut text = String::from("[weights]\n1\n0\n0\n[unigrams]\n");
    for a in inv.acts() {
        text.push_str(&format!("{a}\t1\n"));
    }
    let src = SyntheticSource::from_text(&text, inv).unwrap();
    let sample = harness::generate(&src, 1000, 4, TERMINAL).unwrap();
    let ks: Vec<usize> = (1..=m).collect();
    let r = harness::bayes(&src, &sample, "uniform", &ks, false).unwrap();
    for (i, k) in ks.iter().enumerate() {
        let expected = 100.0 * *k as f64 / m as f64;
        assert!((r.accuracy(i) - expected).abs() < 2.0, "k={k}: {} vs {expected}", r.accuracy(i));
    }
    assert_eq!(r.accuracy(m - 1), 100.0);
}

#[test]
fn trained_models_stay_under_the_ceiling() {
    let inv = inventory();
    let src = SyntheticSource::from_text(NEGOTIATION, inv.clone()).unwrap();
    for seed in [100, 200, 300] {
        let train = harness::generate(&src, 800, seed, TERMINAL).unwrap();
        let test = harness::generate(&src, 200, seed + 1, TERMINAL).unwrap();
        let lm = harness::train(&train, inv.clone(), 0.9).unwrap();
        let ks = [1, 2, 3];
        let trained = harness::evaluate(&lm, &test, "t", &ks, false).unwrap();
        let ceiling = harness::bayes(&src, &test, "b", &ks, false).unwrap();
        for (i, k) in ks.iter().enumerate() {
            assert!(
                trained.accuracy(i) <= ceiling.accuracy(i) + 1.0,
                "seed {seed} k={k}: {} > {}",
                trained.accuracy(i),
                ceiling.accuracy(i)
            );
        }
    }
}
