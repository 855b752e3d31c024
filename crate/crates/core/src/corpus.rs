//! Annotated dialogue corpora.
//!
//! One turn per line, six tab-separated columns:
//! `dialogue_id  turn_id  speaker  ACT  theme  utterance`. The theme column is
//! a `;`-separated list of `key=value` pairs or `-`; the utterance is free
//! text or `-`. Tabs, newlines and backslashes inside utterances are written
//! as `\t`, `\n` and `\\`, and an utterance that is literally `-` as `\-`.

use std::collections::HashSet;

use thiserror::Error;

use crate::model::{ActInventory, ActLabel};

pub const HEADER: &str = "# dialogue_id\tturn_id\tspeaker\tact\ttheme\tutterance";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown act `{act}`")]
    UnknownAct { line: usize, act: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub dialogue_id: String,
    pub turn_id: String,
    pub speaker: String,
    pub act: ActLabel,
    pub utterance: Option<String>,
    pub theme: Vec<(String, String)>,
}

impl Turn {
    /// A bare turn with no theme or utterance.
    pub fn new(dialogue_id: &str, turn_id: &str, speaker: &str, act: &str) -> Self {
        Turn {
            dialogue_id: dialogue_id.to_string(),
            turn_id: turn_id.to_string(),
            speaker: speaker.to_string(),
            act: ActLabel::from(act),
            utterance: None,
            theme: Vec::new(),
        }
    }

    pub fn with_theme(mut self, pairs: &[(&str, &str)]) -> Self {
        self.theme = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        self
    }

    pub fn theme_value(&self, key: &str) -> Option<&str> {
        self.theme
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn acts(&self) -> Vec<ActLabel> {
        self.turns.iter().map(|t| t.act.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>) -> Self {
        Corpus { dialogues }
    }

    pub fn act_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }

    /// Splits off the first `floor(len * fraction)` dialogues.
    pub fn split(&self, fraction: f64) -> (Corpus, Corpus) {
        let n = ((self.dialogues.len() as f64) * fraction).floor() as usize;
        let n = n.min(self.dialogues.len());
        (
            Corpus::new(self.dialogues[..n].to_vec()),
            Corpus::new(self.dialogues[n..].to_vec()),
        )
    }
}

/// Per-dialogue act sequences, in turn order.
pub fn act_sequences(corpus: &Corpus) -> Vec<(String, Vec<ActLabel>)> {
    act_sequences_filtered(corpus, None)
}

/// As [`act_sequences`], dropping turns of `skip_speaker` (e.g. translation
/// turns) when given.
pub fn act_sequences_filtered(
    corpus: &Corpus,
    skip_speaker: Option<&str>,
) -> Vec<(String, Vec<ActLabel>)> {
    corpus
        .dialogues
        .iter()
        .map(|d| {
            let acts = d
                .turns
                .iter()
                .filter(|t| Some(t.speaker.as_str()) != skip_speaker)
                .map(|t| t.act.clone())
                .collect();
            (d.id.clone(), acts)
        })
        .collect()
}

fn unescape(field: &str, line: usize) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some('-') => out.push('-'),
            other => {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("bad escape sequence `\\{}`", other.map(String::from).unwrap_or_default()),
                })
            }
        }
    }
    Ok(out)
}

fn escape(text: &str) -> String {
    if text == "-" {
        return "\\-".to_string();
    }
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

fn parse_theme(field: &str, line: usize) -> Result<Vec<(String, String)>, CorpusError> {
    if field == "-" {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|pair| {
            let (k, v) = pair.split_once('=').ok_or_else(|| CorpusError::Parse {
                line,
                message: format!("theme entry `{pair}` is not key=value"),
            })?;
            if k.is_empty() {
                return Err(CorpusError::Parse {
                    line,
                    message: "empty theme key".into(),
                });
            }
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

/// Parse a corpus, checking every act against `inventory`.
pub fn read_corpus(text: &str, inventory: &ActInventory) -> Result<Corpus, CorpusError> {
    let mut dialogues: Vec<Dialogue> = Vec::new();
    let mut seen_dialogues: HashSet<String> = HashSet::new();
    let mut seen_turns: HashSet<String> = HashSet::new();
    let mut block_open = false;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            block_open = false;
            continue;
        }
        if raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 6 {
            return Err(CorpusError::Parse {
                line,
                message: format!("expected 6 tab-separated fields, found {}", fields.len()),
            });
        }
        let (dialogue_id, turn_id, speaker, act) = (fields[0], fields[1], fields[2], fields[3]);
        for (name, value) in [("dialogue_id", dialogue_id), ("turn_id", turn_id), ("speaker", speaker)] {
            if value.is_empty() {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("empty {name}"),
                });
            }
        }
        if !inventory.validate_act(act) {
            return Err(CorpusError::UnknownAct {
                line,
                act: act.to_string(),
            });
        }
        let theme = parse_theme(fields[4], line)?;
        let utterance = match fields[5] {
            "-" => None,
            u => Some(unescape(u, line)?),
        };

        let continues = block_open
            && dialogues
                .last()
                .is_some_and(|d| d.id == dialogue_id);
        if !continues {
            if !seen_dialogues.insert(dialogue_id.to_string()) {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("dialogue {dialogue_id} appears in more than one block"),
                });
            }
            dialogues.push(Dialogue {
                id: dialogue_id.to_string(),
                turns: Vec::new(),
            });
            seen_turns.clear();
        }
        if !seen_turns.insert(turn_id.to_string()) {
            return Err(CorpusError::Parse {
                line,
                message: format!("duplicate turn id {turn_id} in dialogue {dialogue_id}"),
            });
        }
        block_open = true;
        dialogues
            .last_mut()
            .expect("pushed above")
            .turns
            .push(Turn {
                dialogue_id: dialogue_id.to_string(),
                turn_id: turn_id.to_string(),
                speaker: speaker.to_string(),
                act: ActLabel::new(act),
                utterance,
                theme,
            });
    }
    Ok(Corpus { dialogues })
}

/// Serialize in canonical form: header line, then dialogues separated by one
/// blank line.
pub fn write_corpus(corpus: &Corpus) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (i, d) in corpus.dialogues.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for t in &d.turns {
            let theme = if t.theme.is_empty() {
                "-".to_string()
            } else {
                t.theme
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(";")
            };
            let utterance = t.utterance.as_deref().map(escape).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                d.id, t.turn_id, t.speaker, t.act, theme, utterance
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DialogueModel;

    fn inv() -> std::sync::Arc<ActInventory> {
        DialogueModel::default_model().inventory
    }

    #[test]
    fn empty_file() {
        let c = read_corpus("", &inv()).unwrap();
        assert_eq!(c.dialogues.len(), 0);
        assert_eq!(c.act_count(), 0);
        assert_eq!(write_corpus(&c), format!("{HEADER}\n"));
        assert!(act_sequences(&c).is_empty());
    }

    #[test]
    fn unknown_act_reports_line() {
        let text = "# c\nD\t1\tA\tBEGRUESSUNG\t-\t-\nD\t2\tB\tFOO\t-\t-\n";
        assert_eq!(
            read_corpus(text, &inv()).unwrap_err(),
            CorpusError::UnknownAct {
                line: 3,
                act: "FOO".into()
            }
        );
    }

    #[test]
    fn malformed_lines_are_positioned() {
        for text in [
            "D\t1\tA\tVORSCHLAG\t-\n",
            "D\t1\tA\tVORSCHLAG\tmonth\t-\n",
            "D\t1\tA\tVORSCHLAG\t-\tbad \\q escape\n",
            "D\t1\tA\tVORSCHLAG\t-\t-\nD\t1\tA\tVORSCHLAG\t-\t-\n",
            "D\t1\tA\tVORSCHLAG\t-\t-\n\nE\t1\tA\tVORSCHLAG\t-\t-\n\nD\t2\tA\tVORSCHLAG\t-\t-\n",
        ] {
            assert!(
                matches!(read_corpus(text, &inv()), Err(CorpusError::Parse { .. })),
                "{text:?}"
            );
        }
    }

    #[test]
    fn dialogue_boundary_from_id_change() {
        let text = "D\t1\tA\tVORSCHLAG\t-\t-\nE\t1\tA\tVORSCHLAG\t-\t-\n";
        let c = read_corpus(text, &inv()).unwrap();
        assert_eq!(c.dialogues.len(), 2);
    }

    #[test]
    fn tab_in_utterance_round_trips() {
        let mut t = Turn::new("D", "1", "A", "VORSCHLAG");
        t.utterance = Some("a\tb\\c".into());
        let c = Corpus::new(vec![Dialogue {
            id: "D".into(),
            turns: vec![t],
        }]);
        let text = write_corpus(&c);
        assert!(text.contains("a\\tb\\\\c"));
        assert_eq!(read_corpus(&text, &inv()).unwrap(), c);
    }

    #[test]
    fn literal_dash_utterance_is_not_absent() {
        let mut t = Turn::new("D", "1", "A", "VORSCHLAG");
        t.utterance = Some("-".into());
        let c = Corpus::new(vec![Dialogue {
            id: "D".into(),
            turns: vec![t],
        }]);
        assert_eq!(read_corpus(&write_corpus(&c), &inv()).unwrap(), c);
    }

    #[test]
    fn skip_speaker_filter() {
        let text = "D\t1\tDE\tVORSCHLAG\t-\t-\nD\t2\tVM\tVORSCHLAG\t-\t-\nD\t3\tEL\tABLEHNUNG\t-\t-\n";
        let c = read_corpus(text, &inv()).unwrap();
        assert_eq!(act_sequences(&c)[0].1.len(), 3);
        let filtered = act_sequences_filtered(&c, Some("VM"));
        assert_eq!(
            filtered[0].1,
            vec![ActLabel::from("VORSCHLAG"), ActLabel::from("ABLEHNUNG")]
        );
    }
}
