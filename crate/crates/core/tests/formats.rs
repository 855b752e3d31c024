use dialact_core::planner::parse_operators;
use dialact_core::{load_model, read_corpus, write_corpus, write_model, CorpusError, DialogueModel, LanguageModel};
use proptest::prelude::*;

const CORPORA: [(&str, &str); 3] = [
    ("tiny", include_str!("../data/fixtures/tiny.corpus")),
    ("fixtures", include_str!("../data/fixtures/fixtures.corpus")),
    ("excerpt", include_str!("../data/fixtures/excerpt.corpus")),
];
const EXTENDED: &str = include_str!("../data/fixtures/extended.model");

#[test]
fn every_fixture_corpus_round_trips() {
    let model = DialogueModel::default_model();
    for (name, text) in CORPORA {
        let corpus = read_corpus(text, &model.inventory).unwrap();
        let again = read_corpus(&write_corpus(&corpus), &model.inventory).unwrap();
        assert_eq!(again, corpus, "{name}");
    }
}

#[test]
fn shipped_models_round_trip() {
    for model in [DialogueModel::default_model(), load_model(EXTENDED).unwrap()] {
        let again = load_model(&write_model(&model)).unwrap();
        assert_eq!(again.inventory.acts(), model.inventory.acts());
        assert_eq!(again.machine, model.machine);
    }
}

fn line_soup() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("D1".to_string()),
        Just("VORSCHLAG".to_string()),
        Just("FROBNICATE".to_string()),
        Just("-".to_string()),
        Just("\t".to_string()),
        Just("\n".to_string()),
        Just("month=May;day_from=3".to_string()),
        Just("=;".to_string()),
        Just("\\".to_string()),
        Just("[weights]".to_string()),
        Just("[trigrams]".to_string()),
        Just("<s>".to_string()),
        Just("0.5".to_string()),
        Just(" ".to_string()),
        "[ -~]{0,6}",
    ];
    prop::collection::vec(piece, 0..40).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn corpus_parsing_never_panics(text in line_soup()) {
        let model = DialogueModel::default_model();
        let lines = text.lines().count().max(1);
        match read_corpus(&text, &model.inventory) {
            Ok(c) => prop_assert_eq!(read_corpus(&write_corpus(&c), &model.inventory).unwrap(), c),
            Err(e) => {
                let line = match &e {
                    CorpusError::Parse { line, .. } | CorpusError::UnknownAct { line, .. } => *line,
                };
                prop_assert!(line >= 1 && line <= lines, "{e}");
            }
        }
    }

    #[test]
    fn other_readers_never_panic(text in line_soup()) {
        let model = DialogueModel::default_model();
        let _ = load_model(&text);
        let _ = parse_operators(&text);
        let _ = LanguageModel::from_text(&text, model.inventory.clone());
    }
}
