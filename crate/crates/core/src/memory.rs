//! Dialogue memory: the thematic record of negotiated dates and places and the
//! referential table of surface realizations. The intentional layer is the
//! plan tree, owned by the planner and dumped alongside.

use std::collections::BTreeMap;

use crate::corpus::Turn;
use crate::planner::PlanTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThemeStatus {
    Proposed,
    Refined,
    Rejected,
    Accepted,
    Confirmed,
}

impl ThemeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThemeStatus::Proposed => "proposed",
            ThemeStatus::Refined => "refined",
            ThemeStatus::Rejected => "rejected",
            ThemeStatus::Accepted => "accepted",
            ThemeStatus::Confirmed => "confirmed",
        }
    }

    pub fn is_open(&self) -> bool {
        matches!(self, ThemeStatus::Proposed | ThemeStatus::Refined)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThematicRecord {
    pub round: usize,
    pub slots: Vec<(String, String)>,
    pub status: ThemeStatus,
    pub proposed_in: String,
    pub resolved_in: Option<String>,
    /// Index of the record this one narrows.
    pub parent: Option<usize>,
}

impl ThematicRecord {
    fn slot(&self, key: &str) -> Option<&str> {
        self.slots.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicKind {
    Time,
    Place,
    None,
}

impl TopicKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TopicKind::Time => "time",
            TopicKind::Place => "place",
            TopicKind::None => "none",
        }
    }
}

const TIME_KEYS: &[&str] = &[
    "year", "month", "week", "day", "day_from", "day_to", "weekday", "date", "time", "hour",
    "time_from", "time_to",
];
const PLACE_KEYS: &[&str] = &["place", "location", "room", "city"];

/// Theme keys with this prefix name a referent (`ref.<key>=<surface>`) and are
/// routed to the referential table instead of the thematic record.
pub const REFERENCE_PREFIX: &str = "ref.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector<'a> {
    LatestAccepted,
    OpenProposals,
    LastTopicKind,
    Realizations(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryResult<'m> {
    Record(Option<(usize, &'m ThematicRecord)>),
    Records(Vec<(usize, &'m ThematicRecord)>),
    TopicKind(TopicKind),
    Realizations(&'m [(String, String)]),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DialogueMemory {
    thematic: Vec<ThematicRecord>,
    referential: BTreeMap<String, Vec<(String, String)>>,
    warnings: Vec<String>,
    round: usize,
    turns: Vec<String>,
}

fn day(v: Option<&str>) -> Option<i64> {
    v.and_then(|s| s.trim().parse().ok())
}

/// Whether `new` narrows `old`: every slot of `old` is kept, either equal or
/// (for day ranges) tightened, and `new` is not identical to `old`.
fn narrows(new: &ThematicRecord, old: &ThematicRecord) -> bool {
    if old.slots.is_empty() || new.slots == old.slots {
        return false;
    }
    let mut strictly = new.slots.len() > old.slots.len();
    for (k, v) in &old.slots {
        let Some(nv) = new.slot(k) else {
            return false;
        };
        if nv == v {
            continue;
        }
        match (k.as_str(), day(Some(v)), day(Some(nv))) {
            ("day_from", Some(o), Some(n)) if n > o => strictly = true,
            ("day_to", Some(o), Some(n)) if n < o => strictly = true,
            _ => return false,
        }
    }
    strictly
}

impl DialogueMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn thematic(&self) -> &[ThematicRecord] {
        &self.thematic
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Set by the planner when a negotiation round opens.
    pub fn set_round(&mut self, round: usize) {
        self.round = round;
    }

    pub fn realizations(&self, key: &str) -> &[(String, String)] {
        self.referential.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Note a processed turn and route its `ref.*` theme entries to the
    /// referential table.
    pub fn register_turn(&mut self, turn: &Turn) {
        self.turns.push(turn.turn_id.clone());
        for (k, v) in &turn.theme {
            if let Some(key) = k.strip_prefix(REFERENCE_PREFIX) {
                self.record_realization(turn, key, v);
            }
        }
    }

    pub fn record_realization(&mut self, turn: &Turn, object_key: &str, surface: &str) {
        self.referential
            .entry(object_key.to_string())
            .or_default()
            .push((turn.turn_id.clone(), surface.to_string()));
    }

    /// Open a thematic record for a proposal turn.
    pub fn retrieve_theme(&mut self, turn: &Turn) {
        let slots: Vec<(String, String)> = turn
            .theme
            .iter()
            .filter(|(k, _)| !k.starts_with(REFERENCE_PREFIX))
            .cloned()
            .collect();
        if slots.is_empty() {
            self.warnings
                .push(format!("{}: proposal without theme", turn.turn_id));
        }
        let mut record = ThematicRecord {
            round: self.round,
            slots,
            status: ThemeStatus::Proposed,
            proposed_in: turn.turn_id.clone(),
            resolved_in: None,
            parent: None,
        };
        if let Some(last) = self.thematic.len().checked_sub(1) {
            let prev = &self.thematic[last];
            if prev.status.is_open() && prev.round == record.round && narrows(&record, prev) {
                record.status = ThemeStatus::Refined;
                record.parent = Some(last);
            }
        }
        self.thematic.push(record);
    }

    /// Apply an acceptance, rejection or confirmation to the relevant record.
    pub fn resolve_theme(&mut self, act: &str, turn_id: &str) {
        let target = match act {
            "AKZEPTANZ" | "ABLEHNUNG" => self.thematic.iter().rposition(|r| r.status.is_open()),
            "BESTAETIGUNG" => self
                .thematic
                .iter()
                .rposition(|r| r.status == ThemeStatus::Accepted),
            other => {
                self.warnings
                    .push(format!("{turn_id}: {other} does not resolve a theme"));
                return;
            }
        };
        let Some(i) = target else {
            self.warnings
                .push(format!("{turn_id}: {act} with no matching open record"));
            return;
        };
        let status = match act {
            "AKZEPTANZ" => {
                let round = self.thematic[i].round;
                if self
                    .thematic
                    .iter()
                    .any(|r| r.round == round && r.status == ThemeStatus::Accepted)
                {
                    self.warnings
                        .push(format!("{turn_id}: round {round} already has an accepted record"));
                    return;
                }
                ThemeStatus::Accepted
            }
            "ABLEHNUNG" => ThemeStatus::Rejected,
            _ => ThemeStatus::Confirmed,
        };
        let rec = &mut self.thematic[i];
        rec.status = status;
        rec.resolved_in = Some(turn_id.to_string());
    }

    pub fn query(&self, selector: Selector<'_>) -> QueryResult<'_> {
        match selector {
            Selector::LatestAccepted => QueryResult::Record(
                self.thematic
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(_, r)| matches!(r.status, ThemeStatus::Accepted | ThemeStatus::Confirmed)),
            ),
            Selector::OpenProposals => QueryResult::Records(
                self.thematic
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.status.is_open())
                    .collect(),
            ),
            Selector::LastTopicKind => QueryResult::TopicKind(self.last_topic_kind()),
            Selector::Realizations(key) => QueryResult::Realizations(self.realizations(key)),
        }
    }

    pub fn last_topic_kind(&self) -> TopicKind {
        let Some(last) = self.thematic.last() else {
            return TopicKind::None;
        };
        if last.slots.iter().any(|(k, _)| TIME_KEYS.contains(&k.as_str())) {
            TopicKind::Time
        } else if last.slots.iter().any(|(k, _)| PLACE_KEYS.contains(&k.as_str())) {
            TopicKind::Place
        } else {
            TopicKind::None
        }
    }

    /// Checks the record and referential invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut accepted_rounds = Vec::new();
        for (i, r) in self.thematic.iter().enumerate() {
            if r.status == ThemeStatus::Accepted {
                if accepted_rounds.contains(&r.round) {
                    return Err(format!("round {} has two accepted records", r.round));
                }
                accepted_rounds.push(r.round);
            }
            if r.status.is_open() == r.resolved_in.is_some() {
                return Err(format!("record {i} resolution does not match status"));
            }
            if let Some(p) = r.parent {
                if p >= i || r.status == ThemeStatus::Proposed {
                    return Err(format!("record {i} has a bad parent link"));
                }
            }
        }
        for (key, entries) in &self.referential {
            for (turn, _) in entries {
                if !self.turns.contains(turn) {
                    return Err(format!("realization of {key} refers to unknown turn {turn}"));
                }
            }
        }
        Ok(())
    }

    /// `[intentional]`, `[thematic]` and `[referential]` sections.
    pub fn dump(&self, tree: &PlanTree) -> String {
        let mut out = String::from("[intentional]\n");
        out.push_str(&tree.dump());
        out.push_str("[thematic]\n");
        for (i, r) in self.thematic.iter().enumerate() {
            let slots = if r.slots.is_empty() {
                "-".to_string()
            } else {
                r.slots
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(";")
            };
            out.push_str(&format!(
                "#{i}\tround={}\t{}\t{}\tproposed_in={}\tresolved_in={}\tparent={}\n",
                r.round,
                r.status.as_str(),
                slots,
                r.proposed_in,
                r.resolved_in.as_deref().unwrap_or("-"),
                r.parent.map_or("-".to_string(), |p| format!("#{p}"))
            ));
        }
        out.push_str("[referential]\n");
        for (key, entries) in &self.referential {
            let list: Vec<String> = entries
                .iter()
                .map(|(t, s)| format!("{t} \"{s}\""))
                .collect();
            out.push_str(&format!("{key}: {}\n", list.join("; ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vorschlag(id: &str, theme: &[(&str, &str)]) -> Turn {
        Turn::new("EX", id, "DE", "VORSCHLAG").with_theme(theme)
    }

    #[test]
    fn proposal_reject_repropose() {
        let mut m = DialogueMemory::new();
        m.set_round(1);
        m.retrieve_theme(&vorschlag(
            "DE006/2",
            &[("month", "October"), ("day_from", "4"), ("day_to", "8")],
        ));
        assert_eq!(m.thematic()[0].status, ThemeStatus::Proposed);
        assert_eq!(m.last_topic_kind(), TopicKind::Time);
        m.resolve_theme("ABLEHNUNG", "EL007/1");
        assert_eq!(m.thematic()[0].status, ThemeStatus::Rejected);
        assert_eq!(m.thematic()[0].resolved_in.as_deref(), Some("EL007/1"));
        m.retrieve_theme(&vorschlag("EL007/2", &[("month", "October"), ("day_to", "13")]));
        assert_eq!(m.thematic()[1].status, ThemeStatus::Proposed);
        m.check_invariants().unwrap();
    }

    #[test]
    fn proposal_without_theme_warns() {
        let mut m = DialogueMemory::new();
        m.retrieve_theme(&vorschlag("1", &[]));
        assert_eq!(m.thematic().len(), 1);
        assert!(m.thematic()[0].slots.is_empty());
        assert_eq!(m.warnings().len(), 1);
    }

    #[test]
    fn narrowing_creates_refined_record() {
        let mut m = DialogueMemory::new();
        m.retrieve_theme(&vorschlag("1", &[("month", "October")]));
        m.retrieve_theme(&vorschlag("2", &[("week", "2"), ("month", "October")]));
        assert_eq!(m.thematic()[1].status, ThemeStatus::Refined);
        assert_eq!(m.thematic()[1].parent, Some(0));
        // widening the range is not a refinement
        m.retrieve_theme(&vorschlag("3", &[("month", "October"), ("day_from", "4"), ("day_to", "8")]));
        m.retrieve_theme(&vorschlag("4", &[("month", "October"), ("day_from", "3"), ("day_to", "8")]));
        assert_eq!(m.thematic()[3].status, ThemeStatus::Proposed);
        m.retrieve_theme(&vorschlag("5", &[("month", "October"), ("day_from", "5"), ("day_to", "6")]));
        assert_eq!(m.thematic()[4].status, ThemeStatus::Refined);
        assert_eq!(m.thematic()[4].parent, Some(3));
    }

    #[test]
    fn accept_then_confirm() {
        let mut m = DialogueMemory::new();
        m.set_round(1);
        m.retrieve_theme(&vorschlag("3", &[("month", "June"), ("week", "2")]));
        m.resolve_theme("ABLEHNUNG", "4");
        m.retrieve_theme(&vorschlag("5", &[("month", "June"), ("week", "3")]));
        m.resolve_theme("AKZEPTANZ", "6");
        m.resolve_theme("BESTAETIGUNG", "7");
        let statuses: Vec<_> = m.thematic().iter().map(|r| r.status).collect();
        assert_eq!(statuses, [ThemeStatus::Rejected, ThemeStatus::Confirmed]);
        match m.query(Selector::LatestAccepted) {
            QueryResult::Record(Some((1, r))) => assert_eq!(r.status, ThemeStatus::Confirmed),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolution_without_open_record_warns() {
        let mut m = DialogueMemory::new();
        m.resolve_theme("ABLEHNUNG", "1");
        assert!(m.thematic().is_empty());
        assert_eq!(m.warnings().len(), 1);

        m.retrieve_theme(&vorschlag("2", &[("month", "May")]));
        m.resolve_theme("AKZEPTANZ", "3");
        m.resolve_theme("AKZEPTANZ", "4");
        assert_eq!(m.warnings().len(), 2);
        assert_eq!(m.thematic()[0].resolved_in.as_deref(), Some("3"));
    }

    #[test]
    fn one_acceptance_per_round() {
        let mut m = DialogueMemory::new();
        m.set_round(1);
        m.retrieve_theme(&vorschlag("1", &[("month", "May")]));
        m.resolve_theme("AKZEPTANZ", "2");
        m.retrieve_theme(&vorschlag("3", &[("month", "June")]));
        m.resolve_theme("AKZEPTANZ", "4");
        assert_eq!(m.thematic()[1].status, ThemeStatus::Proposed);
        m.check_invariants().unwrap();
    }

    #[test]
    fn realizations_keep_every_occurrence() {
        let mut m = DialogueMemory::new();
        let de = Turn::new("EX", "DE004", "DE", "VORSCHLAG");
        let vm = Turn::new("EX", "VM005", "VM", "VORSCHLAG");
        m.register_turn(&de);
        m.register_turn(&vm);
        m.record_realization(&de, "october-meeting", "im Oktober");
        m.record_realization(&vm, "october-meeting", "October");
        m.record_realization(&vm, "october-meeting", "October");
        assert_eq!(
            m.realizations("october-meeting"),
            [
                ("DE004".to_string(), "im Oktober".to_string()),
                ("VM005".to_string(), "October".to_string()),
                ("VM005".to_string(), "October".to_string())
            ]
        );
        assert!(m.realizations("nothing").is_empty());
        m.check_invariants().unwrap();
    }

    #[test]
    fn fresh_memory_queries() {
        let m = DialogueMemory::new();
        assert_eq!(m.query(Selector::OpenProposals), QueryResult::Records(vec![]));
        assert_eq!(m.query(Selector::LastTopicKind), QueryResult::TopicKind(TopicKind::None));
        assert_eq!(m.query(Selector::LatestAccepted), QueryResult::Record(None));
    }

    #[test]
    fn place_topic() {
        let mut m = DialogueMemory::new();
        m.retrieve_theme(&vorschlag("1", &[("place", "Hamburg")]));
        assert_eq!(m.last_topic_kind(), TopicKind::Place);
    }
}
