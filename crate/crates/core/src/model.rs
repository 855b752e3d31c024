//! Speech-act inventory and the finite-state dialogue machine.
//!
//! Both are loaded from a section-based definition file so the engine carries
//! no hard-wired act names beyond the nine core acts every inventory must
//! contain. See `data/default.model` for the shipped definition.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// The shipped default model definition.
pub const DEFAULT_MODEL: &str = include_str!("../data/default.model");

/// Acts every inventory has to define.
pub const REQUIRED_ACTS: [&str; 9] = [
    "BEGRUESSUNG",
    "VERABSCHIEDUNG",
    "INIT_TERMINABSPRACHE",
    "BESTAETIGUNG",
    "AKZEPTANZ",
    "ABLEHNUNG",
    "VORSCHLAG",
    "AUFFORDERUNG_VORSCHLAG",
    "AUFFORDERUNG_STELLUNG",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("unknown act `{0}`")]
    UnknownAct(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ModelError {
    ModelError::Parse {
        line,
        message: message.into(),
    }
}

/// A speech-act symbol such as `VORSCHLAG`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActLabel(String);

impl ActLabel {
    pub fn new(name: impl Into<String>) -> Self {
        ActLabel(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActLabel {
    fn from(s: &str) -> Self {
        ActLabel(s.to_string())
    }
}

/// Position of an act in its inventory. Inventory order is the tie-break
/// order everywhere in the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActClass {
    Phase,
    Anywhere,
    /// Opens a clarification sub-dialogue that the named act closes.
    ClarifyOpen(ActId),
    ClarifyClose,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActInventory {
    acts: Vec<ActLabel>,
    classes: Vec<ActClass>,
    keywords: Vec<Vec<String>>,
    index: HashMap<String, ActId>,
}

impl ActInventory {
    pub fn len(&self) -> usize {
        self.acts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    pub fn acts(&self) -> &[ActLabel] {
        &self.acts
    }

    pub fn id(&self, name: &str) -> Option<ActId> {
        self.index.get(name).copied()
    }

    /// Like [`ActInventory::id`] but reports unknown names as an error.
    pub fn require(&self, name: &str) -> Result<ActId, ModelError> {
        self.id(name)
            .ok_or_else(|| ModelError::UnknownAct(name.to_string()))
    }

    pub fn label(&self, id: ActId) -> &ActLabel {
        &self.acts[id.0]
    }

    pub fn class(&self, id: ActId) -> &ActClass {
        &self.classes[id.0]
    }

    pub fn validate_act(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    /// Keywords configured for an act, in file order.
    pub fn keywords_for(&self, label: &str) -> Result<&[String], ModelError> {
        let id = self.require(label)?;
        Ok(&self.keywords[id.0])
    }

    pub fn ids(&self) -> impl Iterator<Item = ActId> {
        (0..self.acts.len()).map(ActId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub states: Vec<StateId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueMachine {
    /// State names in definition order (first mention).
    states: Vec<String>,
    initial: StateId,
    finals: Vec<StateId>,
    /// Transitions in file order.
    transitions: Vec<(StateId, ActId, StateId)>,
    table: BTreeMap<(StateId, ActId), StateId>,
    anywhere: Vec<ActId>,
    regions: Vec<Region>,
}

impl DialogueMachine {
    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn finals(&self) -> &[StateId] {
        &self.finals
    }

    pub fn is_final(&self, state: StateId) -> bool {
        self.finals.contains(&state)
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, state: StateId) -> &str {
        &self.states[state.0]
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name).map(StateId)
    }

    pub fn transitions(&self) -> &[(StateId, ActId, StateId)] {
        &self.transitions
    }

    pub fn next(&self, from: StateId, act: ActId) -> Option<StateId> {
        self.table.get(&(from, act)).copied()
    }

    pub fn is_anywhere(&self, act: ActId) -> bool {
        self.anywhere.contains(&act)
    }

    pub fn anywhere(&self) -> &[ActId] {
        &self.anywhere
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Acts labelling transitions out of `state`, in file order.
    pub fn outgoing(&self, state: StateId) -> impl Iterator<Item = ActId> + '_ {
        self.transitions
            .iter()
            .filter(move |(from, _, _)| *from == state)
            .map(|(_, act, _)| *act)
    }

    /// States with an incoming transition labelled `act`, in definition order.
    pub fn states_entered_by(&self, act: ActId) -> Vec<StateId> {
        let mut found: Vec<StateId> = self
            .transitions
            .iter()
            .filter(|(_, a, _)| *a == act)
            .map(|(_, _, to)| *to)
            .collect();
        found.sort();
        found.dedup();
        found
    }

    fn reachable(&self) -> HashSet<StateId> {
        let mut seen = HashSet::from([self.initial]);
        let mut queue = VecDeque::from([self.initial]);
        while let Some(s) = queue.pop_front() {
            for (from, _, to) in &self.transitions {
                if *from == s && seen.insert(*to) {
                    queue.push_back(*to);
                }
            }
        }
        seen
    }
}

/// A loaded inventory together with its machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueModel {
    pub inventory: Arc<ActInventory>,
    pub machine: Arc<DialogueMachine>,
}

impl DialogueModel {
    pub fn default_model() -> Self {
        load_model(DEFAULT_MODEL).expect("shipped default model is valid")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Section {
    Acts,
    Machine,
    Anywhere,
    Keywords,
}

impl Section {
    fn parse(name: &str) -> Option<Section> {
        match name {
            "acts" => Some(Section::Acts),
            "machine" => Some(Section::Machine),
            "anywhere" => Some(Section::Anywhere),
            "keywords" => Some(Section::Keywords),
            _ => None,
        }
    }
}

/// Parse and validate a model definition.
pub fn load_model(text: &str) -> Result<DialogueModel, ModelError> {
    let mut section: Option<Section> = None;
    let mut seen_sections: Vec<Section> = Vec::new();

    let mut acts: Vec<(usize, String, String)> = Vec::new();
    let mut initial: Option<(usize, String)> = None;
    let mut finals: Vec<(usize, String)> = Vec::new();
    let mut regions: Vec<(usize, String, Vec<String>)> = Vec::new();
    let mut transitions: Vec<(usize, String, String, String)> = Vec::new();
    let mut anywhere: Vec<(usize, String)> = Vec::new();
    let mut keywords: Vec<(usize, String, Vec<String>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let next = Section::parse(name)
                .ok_or_else(|| parse_err(lineno, format!("unknown section [{name}]")))?;
            if let Some(last) = seen_sections.last() {
                if next <= *last {
                    return Err(parse_err(
                        lineno,
                        format!("section [{name}] out of order or repeated"),
                    ));
                }
            }
            seen_sections.push(next);
            section = Some(next);
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match section {
            None => return Err(parse_err(lineno, "content before first section")),
            Some(Section::Acts) => {
                if tokens.len() != 2 {
                    return Err(parse_err(lineno, "expected `NAME class`"));
                }
                acts.push((lineno, tokens[0].to_string(), tokens[1].to_string()));
            }
            Some(Section::Machine) => match tokens.as_slice() {
                ["initial", s] => {
                    if initial.is_some() {
                        return Err(parse_err(lineno, "duplicate initial state"));
                    }
                    initial = Some((lineno, s.to_string()));
                }
                ["final", rest @ ..] if !rest.is_empty() => {
                    finals.extend(rest.iter().map(|s| (lineno, s.to_string())));
                }
                ["region", name, rest @ ..] if !rest.is_empty() => {
                    regions.push((
                        lineno,
                        name.to_string(),
                        rest.iter().map(|s| s.to_string()).collect(),
                    ));
                }
                [from, act, to] => transitions.push((
                    lineno,
                    from.to_string(),
                    act.to_string(),
                    to.to_string(),
                )),
                _ => {
                    return Err(parse_err(
                        lineno,
                        "expected `initial S`, `final S..`, `region NAME S..` or `FROM ACT TO`",
                    ))
                }
            },
            Some(Section::Anywhere) => {
                if tokens.len() != 1 {
                    return Err(parse_err(lineno, "expected one act per line"));
                }
                anywhere.push((lineno, tokens[0].to_string()));
            }
            Some(Section::Keywords) => {
                let (act, words) = line
                    .split_once(':')
                    .ok_or_else(|| parse_err(lineno, "expected `ACT: word, word, ...`"))?;
                let words: Vec<String> = words
                    .split(',')
                    .map(str::trim)
                    .filter(|w| !w.is_empty())
                    .map(String::from)
                    .collect();
                keywords.push((lineno, act.trim().to_string(), words));
            }
        }
    }

    if !seen_sections.contains(&Section::Acts) {
        return Err(ModelError::Invalid("missing [acts] section".into()));
    }
    if acts.is_empty() {
        return Err(ModelError::Invalid("inventory empty".into()));
    }

    // inventory
    let mut index = HashMap::new();
    let mut labels = Vec::new();
    for (lineno, name, _) in &acts {
        if index.insert(name.clone(), ActId(labels.len())).is_some() {
            return Err(parse_err(*lineno, format!("duplicate act {name}")));
        }
        labels.push(ActLabel(name.clone()));
    }
    for req in REQUIRED_ACTS {
        if !index.contains_key(req) {
            return Err(ModelError::Invalid(format!("missing required act {req}")));
        }
    }
    let mut classes = Vec::with_capacity(acts.len());
    for (lineno, name, class) in &acts {
        let class = match class.as_str() {
            "phase" => ActClass::Phase,
            "anywhere" => ActClass::Anywhere,
            "clarify-close" => ActClass::ClarifyClose,
            other => match other.strip_prefix("clarify-open:") {
                Some(closer) => {
                    let id = *index.get(closer).ok_or_else(|| {
                        parse_err(*lineno, format!("unknown closing act {closer} for {name}"))
                    })?;
                    ActClass::ClarifyOpen(id)
                }
                None => return Err(parse_err(*lineno, format!("unknown act class `{other}`"))),
            },
        };
        classes.push(class);
    }
    for (i, class) in classes.iter().enumerate() {
        if let ActClass::ClarifyOpen(closer) = class {
            if classes[closer.0] != ActClass::ClarifyClose {
                return Err(ModelError::Invalid(format!(
                    "{} is named as the closer of {} but is not a clarify-close act",
                    labels[closer.0], labels[i]
                )));
            }
        }
    }
    let act_of = |lineno: usize, name: &str| -> Result<ActId, ModelError> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| parse_err(lineno, format!("unknown act {name}")))
    };

    let mut keyword_lists = vec![Vec::new(); labels.len()];
    let mut keyed = HashSet::new();
    for (lineno, act, words) in keywords {
        let id = act_of(lineno, &act)?;
        if !keyed.insert(id) {
            return Err(parse_err(lineno, format!("duplicate keyword line for {act}")));
        }
        keyword_lists[id.0] = words;
    }

    let inventory = ActInventory {
        acts: labels,
        classes,
        keywords: keyword_lists,
        index: index.clone(),
    };

    // machine
    if !seen_sections.contains(&Section::Machine) {
        return Err(ModelError::Invalid("missing [machine] section".into()));
    }
    let mut states: Vec<String> = Vec::new();
    fn state_of(states: &mut Vec<String>, name: &str) -> StateId {
        match states.iter().position(|s| s == name) {
            Some(i) => StateId(i),
            None => {
                states.push(name.to_string());
                StateId(states.len() - 1)
            }
        }
    }
    let (_, initial_name) =
        initial.ok_or_else(|| ModelError::Invalid("machine has no initial state".into()))?;
    if finals.is_empty() {
        return Err(ModelError::Invalid("machine has no final state".into()));
    }
    let initial = state_of(&mut states, &initial_name);
    let final_ids: Vec<StateId> = finals.iter().map(|(_, s)| state_of(&mut states, s)).collect();
    let mut table = BTreeMap::new();
    let mut trans = Vec::new();
    for (lineno, from, act, to) in &transitions {
        let act = act_of(*lineno, act)?;
        let from = state_of(&mut states, from);
        let to = state_of(&mut states, to);
        if table.insert((from, act), to).is_some() {
            return Err(ModelError::Invalid(format!(
                "nondeterministic: state {} has two transitions on {} (line {lineno})",
                states[from.0],
                inventory.label(act)
            )));
        }
        trans.push((from, act, to));
    }
    let mut region_list = Vec::new();
    for (lineno, name, members) in regions {
        let mut ids = Vec::new();
        for m in &members {
            match states.iter().position(|s| s == m) {
                Some(i) => ids.push(StateId(i)),
                None => return Err(parse_err(lineno, format!("region {name}: unknown state {m}"))),
            }
        }
        region_list.push(Region { name, states: ids });
    }
    let mut anywhere_ids = Vec::new();
    for (lineno, act) in &anywhere {
        let id = act_of(*lineno, act)?;
        if inventory.classes[id.0] != ActClass::Anywhere {
            return Err(parse_err(*lineno, format!("{act} is not of class anywhere")));
        }
        anywhere_ids.push(id);
    }
    for id in inventory.ids() {
        if inventory.classes[id.0] == ActClass::Anywhere && !anywhere_ids.contains(&id) {
            return Err(ModelError::Invalid(format!(
                "{} has class anywhere but is not listed in [anywhere]",
                inventory.label(id)
            )));
        }
    }

    let machine = DialogueMachine {
        states,
        initial,
        finals: final_ids,
        transitions: trans,
        table,
        anywhere: anywhere_ids,
        regions: region_list,
    };
    let reachable = machine.reachable();
    for f in &machine.finals {
        if !reachable.contains(f) {
            return Err(ModelError::Invalid(format!(
                "final state {} is unreachable from {}",
                machine.state_name(*f),
                machine.state_name(machine.initial)
            )));
        }
    }

    Ok(DialogueModel {
        inventory: Arc::new(inventory),
        machine: Arc::new(machine),
    })
}

/// Serialize a model back into the definition format. Loading the result
/// yields an equal model.
pub fn write_model(model: &DialogueModel) -> String {
    let inv = &model.inventory;
    let m = &model.machine;
    let mut out = String::from("[acts]\n");
    for id in inv.ids() {
        let class = match inv.class(id) {
            ActClass::Phase => "phase".to_string(),
            ActClass::Anywhere => "anywhere".to_string(),
            ActClass::ClarifyOpen(c) => format!("clarify-open:{}", inv.label(*c)),
            ActClass::ClarifyClose => "clarify-close".to_string(),
        };
        out.push_str(&format!("{} {}\n", inv.label(id), class));
    }
    out.push_str("\n[machine]\n");
    out.push_str(&format!("initial {}\n", m.state_name(m.initial)));
    let finals: Vec<&str> = m.finals.iter().map(|s| m.state_name(*s)).collect();
    out.push_str(&format!("final {}\n", finals.join(" ")));
    for r in &m.regions {
        let names: Vec<&str> = r.states.iter().map(|s| m.state_name(*s)).collect();
        out.push_str(&format!("region {} {}\n", r.name, names.join(" ")));
    }
    for (from, act, to) in &m.transitions {
        out.push_str(&format!(
            "{} {} {}\n",
            m.state_name(*from),
            inv.label(*act),
            m.state_name(*to)
        ));
    }
    out.push_str("\n[anywhere]\n");
    for a in &m.anywhere {
        out.push_str(&format!("{}\n", inv.label(*a)));
    }
    out.push_str("\n[keywords]\n");
    for id in inv.ids() {
        let words = &inv.keywords[id.0];
        if !words.is_empty() {
            out.push_str(&format!("{}: {}\n", inv.label(id), words.join(", ")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_ACTS: &str = "[acts]
BEGRUESSUNG phase
VERABSCHIEDUNG phase
INIT_TERMINABSPRACHE phase
BESTAETIGUNG phase
AKZEPTANZ phase
ABLEHNUNG phase
VORSCHLAG phase
AUFFORDERUNG_VORSCHLAG phase
AUFFORDERUNG_STELLUNG phase
";

    #[test]
    fn default_model_loads() {
        let model = DialogueModel::default_model();
        for act in REQUIRED_ACTS {
            assert!(model.inventory.validate_act(act), "{act}");
        }
        let names: Vec<&str> = model.machine.regions().iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["introduction", "negotiation", "closing"]);
        assert_eq!(model.machine.state_name(model.machine.initial()), "S0");
    }

    #[test]
    fn validate_act_membership() {
        let model = DialogueModel::default_model();
        assert!(model.inventory.validate_act("VORSCHLAG"));
        assert!(!model.inventory.validate_act("FROBNICATE"));
        assert!(model.inventory.validate_act("BEGRUESSUNG"));
    }

    #[test]
    fn empty_inventory_rejected() {
        let err = load_model("[acts]\n[machine]\ninitial S0\nfinal S0\n").unwrap_err();
        assert_eq!(err, ModelError::Invalid("inventory empty".into()));
    }

    #[test]
    fn nondeterministic_machine_rejected() {
        let text = format!(
            "{MINIMAL_ACTS}[machine]\ninitial s1\nfinal s2\ns1 VORSCHLAG s2\ns1 VORSCHLAG s3\n"
        );
        let err = load_model(&text).unwrap_err();
        assert!(err.to_string().contains("nondeterministic"), "{err}");
    }

    #[test]
    fn unknown_act_in_transition_names_line() {
        let text = format!("{MINIMAL_ACTS}[machine]\ninitial s1\nfinal s2\ns1 FOO s2\n");
        match load_model(&text).unwrap_err() {
            ModelError::Parse { line, message } => {
                assert_eq!(line, 14);
                assert!(message.contains("FOO"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_final_rejected() {
        let text = format!(
            "{MINIMAL_ACTS}[machine]\ninitial s1\nfinal s9\ns1 VORSCHLAG s2\ns9 VORSCHLAG s9\n"
        );
        assert!(load_model(&text).unwrap_err().to_string().contains("unreachable"));
    }

    #[test]
    fn sections_must_be_ordered_and_known() {
        let text = format!("{MINIMAL_ACTS}[keywords]\n[machine]\ninitial a\nfinal a\n");
        assert!(matches!(load_model(&text), Err(ModelError::Parse { .. })));
        let text = format!("{MINIMAL_ACTS}[extras]\n");
        assert!(load_model(&text).unwrap_err().to_string().contains("unknown section"));
    }

    #[test]
    fn missing_required_act() {
        let text = "[acts]\nVORSCHLAG phase\n[machine]\ninitial a\nfinal a\n";
        assert!(load_model(text).unwrap_err().to_string().contains("missing required act"));
    }

    #[test]
    fn clarification_opener_needs_closer() {
        let text = format!(
            "{MINIMAL_ACTS}OPEN clarify-open:CLOSE\n[machine]\ninitial a\nfinal a\n"
        );
        assert!(load_model(&text).is_err());
        let text = format!(
            "{MINIMAL_ACTS}OPEN clarify-open:VORSCHLAG\n[machine]\ninitial a\nfinal a\n"
        );
        assert!(load_model(&text).is_err());
    }

    #[test]
    fn keywords_in_file_order() {
        let model = DialogueModel::default_model();
        let words = model.inventory.keywords_for("ABLEHNUNG").unwrap();
        assert_eq!(words, ["nein", "leider", "nicht", "no", "too bad", "not free"]);
        assert!(matches!(
            model.inventory.keywords_for("FROBNICATE"),
            Err(ModelError::UnknownAct(_))
        ));
    }

    #[test]
    fn absent_keyword_section_gives_empty_lists() {
        let text = format!("{MINIMAL_ACTS}[machine]\ninitial a\nfinal a\n");
        let model = load_model(&text).unwrap();
        assert!(model.inventory.keywords_for("VORSCHLAG").unwrap().is_empty());
    }

    #[test]
    fn write_then_load_is_identity() {
        let model = DialogueModel::default_model();
        let again = load_model(&write_model(&model)).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn determinism_exhaustive_scan() {
        let model = DialogueModel::default_model();
        let t = model.machine.transitions();
        for (i, a) in t.iter().enumerate() {
            for b in &t[i + 1..] {
                assert!(!(a.0 == b.0 && a.1 == b.1), "duplicate {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn farewell_enters_only_the_closing_state() {
        let model = DialogueModel::default_model();
        let farewell = model.inventory.id("VERABSCHIEDUNG").unwrap();
        let entered = model.machine.states_entered_by(farewell);
        assert_eq!(entered, vec![model.machine.state_id("S9").unwrap()]);
    }
}
