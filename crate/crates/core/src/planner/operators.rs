//! Plan-operator definitions and the validated operator library.
//!
//! ```text
//! begin-plan-operator GENERIC-OPERATOR
//!   goal [SCHEDULE-MEETING]
//!   constraints nil
//!   actions nil
//!   subgoals (sequence [GREET-INTRODUCE-TOPIC]
//!                     iterate [NEGOTIATE]
//!                     [FINISH])
//! end-plan-operator
//! ```
//!
//! `;` and `#` start comments. The first operator's goal is the root.

use std::collections::HashMap;
use std::sync::Arc;

use crate::model::{ActId, ActInventory, ActLabel};

use super::PlannerError;

/// Shipped operator library.
pub const DEFAULT_OPERATORS: &str = include_str!("../../data/default.operators");

pub const RETRIEVE_THEME: &str = "retrieve-theme";
pub const RESOLVE_THEME: &str = "resolve-theme";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Element {
    Goal(String),
    /// One or more expansions.
    Iterate(String),
    /// Zero or one expansion.
    Optional(String),
}

impl Element {
    pub fn goal(&self) -> &str {
        match self {
            Element::Goal(g) | Element::Iterate(g) | Element::Optional(g) => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subgoals {
    Primitive(Option<ActLabel>),
    Sequence(Vec<Element>),
    Iterate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    Occurred(ActLabel),
    NotOccurred(ActLabel),
    SpeakerChanged,
    OpenProposal,
    HasTheme,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constraint::Occurred(a) => write!(f, "(occurred {a})"),
            Constraint::NotOccurred(a) => write!(f, "(not-occurred {a})"),
            Constraint::SpeakerChanged => f.write_str("(speaker-changed)"),
            Constraint::OpenProposal => f.write_str("(open-proposal)"),
            Constraint::HasTheme => f.write_str("(has-theme)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOperator {
    pub name: String,
    pub goal: String,
    pub constraints: Vec<Constraint>,
    pub actions: Vec<String>,
    pub subgoals: Subgoals,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Open,
    Close,
    Goal(String),
    Word(String),
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, PlannerError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split([';', '#']).next().unwrap_or("");
        let mut chars = l.char_indices().peekable();
        while let Some((start, c)) = chars.next() {
            match c {
                c if c.is_whitespace() => {}
                '(' => out.push((Tok::Open, line)),
                ')' => out.push((Tok::Close, line)),
                '[' => {
                    let rest = &l[start + 1..];
                    let end = rest.find(']').ok_or_else(|| perr(line, "unterminated `[`"))?;
                    let name = rest[..end].trim();
                    if name.is_empty() || name.contains(char::is_whitespace) {
                        return Err(perr(line, format!("bad goal symbol `[{name}]`")));
                    }
                    out.push((Tok::Goal(name.to_string()), line));
                    for _ in rest[..=end].chars() {
                        chars.next();
                    }
                }
                ']' => return Err(perr(line, "unmatched `]`")),
                _ => {
                    let mut end = l.len();
                    while let Some(&(j, d)) = chars.peek() {
                        if d.is_whitespace() || "()[]".contains(d) {
                            end = j;
                            break;
                        }
                        chars.next();
                    }
                    out.push((Tok::Word(l[start..end].to_string()), line));
                }
            }
        }
    }
    Ok(out)
}

fn perr(line: usize, message: impl Into<String>) -> PlannerError {
    PlannerError::Parse {
        line,
        message: message.into(),
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

const SLOTS: &[&str] = &["goal", "constraints", "actions", "subgoals", "end-plan-operator"];

impl Parser {
    fn line(&self) -> usize {
        self.toks
            .get(self.at)
            .or_else(|| self.toks.last())
            .map_or(0, |t| t.1)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.0)
    }

    fn next(&mut self) -> Result<Tok, PlannerError> {
        let t = self
            .toks
            .get(self.at)
            .map(|t| t.0.clone())
            .ok_or_else(|| perr(self.line(), "unexpected end of input"))?;
        self.at += 1;
        Ok(t)
    }

    fn word(&mut self) -> Result<String, PlannerError> {
        match self.next()? {
            Tok::Word(w) => Ok(w),
            other => Err(perr(self.line(), format!("expected a word, found {other:?}"))),
        }
    }

    fn goal(&mut self) -> Result<String, PlannerError> {
        match self.next()? {
            Tok::Goal(g) => Ok(g),
            other => Err(perr(self.line(), format!("expected [GOAL], found {other:?}"))),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), PlannerError> {
        let line = self.line();
        let t = self.next()?;
        if t != tok {
            return Err(perr(line, format!("expected {tok:?}, found {t:?}")));
        }
        Ok(())
    }

    fn nil_or_list(&mut self) -> Result<bool, PlannerError> {
        match self.peek() {
            Some(Tok::Word(w)) if w == "nil" => {
                self.at += 1;
                Ok(false)
            }
            Some(Tok::Open) => {
                self.at += 1;
                Ok(true)
            }
            _ => Err(perr(self.line(), "expected `nil` or `(`")),
        }
    }

    fn constraints(&mut self) -> Result<Vec<Constraint>, PlannerError> {
        let mut out = Vec::new();
        if !self.nil_or_list()? {
            return Ok(out);
        }
        loop {
            match self.next()? {
                Tok::Close => return Ok(out),
                Tok::Open => {
                    let line = self.line();
                    let name = self.word()?;
                    let c = match name.as_str() {
                        "occurred" => Constraint::Occurred(ActLabel::new(&self.word()?)),
                        "not-occurred" => Constraint::NotOccurred(ActLabel::new(&self.word()?)),
                        "speaker-changed" => Constraint::SpeakerChanged,
                        "open-proposal" => Constraint::OpenProposal,
                        "has-theme" => Constraint::HasTheme,
                        other => return Err(perr(line, format!("unknown constraint `{other}`"))),
                    };
                    self.expect(Tok::Close)?;
                    out.push(c);
                }
                other => return Err(perr(self.line(), format!("expected `(predicate ...)`, found {other:?}"))),
            }
        }
    }

    fn actions(&mut self) -> Result<Vec<String>, PlannerError> {
        let mut out = Vec::new();
        if !self.nil_or_list()? {
            return Ok(out);
        }
        loop {
            match self.next()? {
                Tok::Close => return Ok(out),
                Tok::Word(w) => out.push(w),
                other => return Err(perr(self.line(), format!("expected an action name, found {other:?}"))),
            }
        }
    }

    fn subgoals(&mut self) -> Result<Subgoals, PlannerError> {
        let line = self.line();
        match self.next()? {
            Tok::Word(w) if w == "primitive" => match self.peek() {
                Some(Tok::Word(a)) if !SLOTS.contains(&a.as_str()) => {
                    let a = ActLabel::new(a);
                    self.at += 1;
                    Ok(Subgoals::Primitive(Some(a)))
                }
                _ => Ok(Subgoals::Primitive(None)),
            },
            Tok::Open => {
                let form = self.word()?;
                match form.as_str() {
                    "iterate" => {
                        let g = self.goal()?;
                        self.expect(Tok::Close)?;
                        Ok(Subgoals::Iterate(g))
                    }
                    "sequence" => {
                        let mut elements = Vec::new();
                        loop {
                            match self.next()? {
                                Tok::Close => break,
                                Tok::Goal(g) => elements.push(Element::Goal(g)),
                                Tok::Word(w) if w == "iterate" => elements.push(Element::Iterate(self.goal()?)),
                                Tok::Word(w) if w == "optional" => elements.push(Element::Optional(self.goal()?)),
                                other => {
                                    return Err(perr(self.line(), format!("unexpected {other:?} in sequence")))
                                }
                            }
                        }
                        if elements.is_empty() {
                            return Err(perr(line, "empty sequence"));
                        }
                        Ok(Subgoals::Sequence(elements))
                    }
                    other => Err(perr(line, format!("unknown subgoal form `{other}`"))),
                }
            }
            other => Err(perr(line, format!("expected subgoals, found {other:?}"))),
        }
    }

    fn operator(&mut self) -> Result<PlanOperator, PlannerError> {
        let line = self.line();
        match self.next()? {
            Tok::Word(w) if w == "begin-plan-operator" => {}
            other => return Err(perr(line, format!("expected begin-plan-operator, found {other:?}"))),
        }
        let name = self.word()?;
        let mut goal = None;
        let mut constraints = None;
        let mut actions = None;
        let mut subgoals = None;
        loop {
            let line = self.line();
            let slot = self.word()?;
            let dup = || perr(line, format!("slot `{slot}` given twice in {name}"));
            match slot.as_str() {
                "goal" => {
                    if goal.replace(self.goal()?).is_some() {
                        return Err(dup());
                    }
                }
                "constraints" => {
                    if constraints.replace(self.constraints()?).is_some() {
                        return Err(dup());
                    }
                }
                "actions" => {
                    if actions.replace(self.actions()?).is_some() {
                        return Err(dup());
                    }
                }
                "subgoals" => {
                    if subgoals.replace(self.subgoals()?).is_some() {
                        return Err(dup());
                    }
                }
                "end-plan-operator" => break,
                other => return Err(perr(line, format!("unknown slot `{other}`"))),
            }
        }
        Ok(PlanOperator {
            goal: goal.ok_or_else(|| perr(line, format!("{name} has no goal")))?,
            subgoals: subgoals.ok_or_else(|| perr(line, format!("{name} has no subgoals")))?,
            constraints: constraints.unwrap_or_default(),
            actions: actions.unwrap_or_default(),
            name,
        })
    }
}

/// Parse operator definitions without checking them against each other.
pub fn parse_operators(text: &str) -> Result<Vec<PlanOperator>, PlannerError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
    };
    let mut ops = Vec::new();
    while p.peek().is_some() {
        ops.push(p.operator()?);
    }
    Ok(ops)
}

pub(crate) const INF: u32 = u32::MAX / 4;

/// Sequence element with its goal resolved to an operator index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Elem {
    Goal(usize),
    Iterate(usize),
    Optional(usize),
}

impl Elem {
    pub fn op(self) -> usize {
        match self {
            Elem::Goal(g) | Elem::Iterate(g) | Elem::Optional(g) => g,
        }
    }

    pub fn repeatable(self) -> bool {
        matches!(self, Elem::Iterate(_))
    }
}

#[derive(Debug, Clone)]
pub struct OperatorLibrary {
    operators: Vec<PlanOperator>,
    inventory: Arc<ActInventory>,
    by_goal: HashMap<String, usize>,
    /// Normalized elements; an iterate operator has one `Iterate` element.
    elements: Vec<Vec<Elem>>,
    leaf: Vec<Option<ActId>>,
    min_prims: Vec<u32>,
    /// `reach[op][act]`: fewest mandatory primitives skipped before `act`
    /// can be matched inside an expansion of `op`.
    reach: Vec<Vec<u32>>,
}

impl OperatorLibrary {
    pub fn default_library(inventory: Arc<ActInventory>) -> Self {
        load_operators(DEFAULT_OPERATORS, inventory).expect("shipped operator library is valid")
    }

    pub fn new(operators: Vec<PlanOperator>, inventory: Arc<ActInventory>) -> Result<Self, PlannerError> {
        if operators.is_empty() {
            return Err(PlannerError::EmptyLibrary);
        }
        let mut by_goal = HashMap::new();
        for (i, op) in operators.iter().enumerate() {
            if by_goal.insert(op.goal.clone(), i).is_some() {
                return Err(PlannerError::DuplicateGoal(op.goal.clone()));
            }
        }
        let resolve = |op: &PlanOperator, g: &str| {
            by_goal.get(g).copied().ok_or_else(|| PlannerError::UndefinedGoal {
                goal: g.to_string(),
                operator: op.name.clone(),
            })
        };
        let check_act = |op: &PlanOperator, a: &ActLabel| {
            inventory.id(a.as_str()).ok_or_else(|| PlannerError::UnknownAct {
                operator: op.name.clone(),
                act: a.to_string(),
            })
        };
        let mut elements = Vec::with_capacity(operators.len());
        let mut leaf = Vec::with_capacity(operators.len());
        for op in &operators {
            for c in &op.constraints {
                if let Constraint::Occurred(a) | Constraint::NotOccurred(a) = c {
                    check_act(op, a)?;
                }
            }
            match &op.subgoals {
                Subgoals::Primitive(None) => return Err(PlannerError::MissingAct(op.name.clone())),
                Subgoals::Primitive(Some(a)) => {
                    leaf.push(Some(check_act(op, a)?));
                    elements.push(Vec::new());
                }
                Subgoals::Iterate(g) => {
                    leaf.push(None);
                    elements.push(vec![Elem::Iterate(resolve(op, g)?)]);
                }
                Subgoals::Sequence(es) => {
                    leaf.push(None);
                    let mut v = Vec::with_capacity(es.len());
                    for e in es {
                        let g = resolve(op, e.goal())?;
                        v.push(match e {
                            Element::Goal(_) => Elem::Goal(g),
                            Element::Iterate(_) => Elem::Iterate(g),
                            Element::Optional(_) => Elem::Optional(g),
                        });
                    }
                    elements.push(v);
                }
            }
        }
        check_acyclic(&operators, &elements)?;

        let n = operators.len();
        let mut min_prims = vec![INF; n];
        loop {
            let mut changed = false;
            for i in 0..n {
                let v = if leaf[i].is_some() {
                    1
                } else {
                    elements[i]
                        .iter()
                        .map(|e| elem_cost(*e, &min_prims))
                        .fold(0u32, |a, b| (a + b).min(INF))
                };
                if v < min_prims[i] {
                    min_prims[i] = v;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(i) = (0..n).find(|&i| min_prims[i] >= INF) {
            return Err(PlannerError::CyclicGoal(operators[i].goal.clone()));
        }

        let m = inventory.len();
        let mut reach = vec![vec![INF; m]; n];
        for i in 0..n {
            if let Some(a) = leaf[i] {
                reach[i][a.0] = 0;
            }
        }
        loop {
            let mut changed = false;
            for i in 0..n {
                if leaf[i].is_some() {
                    continue;
                }
                // rows other than `i` are read through `e.op()`
                #[allow(clippy::needless_range_loop)]
                for a in 0..m {
                    let mut prefix = 0u32;
                    let mut best = INF;
                    for e in &elements[i] {
                        best = best.min((prefix + reach[e.op()][a]).min(INF));
                        prefix = (prefix + elem_cost(*e, &min_prims)).min(INF);
                    }
                    if best < reach[i][a] {
                        reach[i][a] = best;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        Ok(OperatorLibrary {
            operators,
            inventory,
            by_goal,
            elements,
            leaf,
            min_prims,
            reach,
        })
    }

    pub fn operators(&self) -> &[PlanOperator] {
        &self.operators
    }

    pub fn inventory(&self) -> &Arc<ActInventory> {
        &self.inventory
    }

    pub fn operator(&self, goal: &str) -> Option<&PlanOperator> {
        self.by_goal.get(goal).map(|&i| &self.operators[i])
    }

    pub fn root(&self) -> &PlanOperator {
        &self.operators[0]
    }

    pub(crate) fn op(&self, i: usize) -> &PlanOperator {
        &self.operators[i]
    }

    pub(crate) fn index(&self, goal: &str) -> Option<usize> {
        self.by_goal.get(goal).copied()
    }

    pub(crate) fn elements(&self, op: usize) -> &[Elem] {
        &self.elements[op]
    }

    pub(crate) fn is_iterate_op(&self, op: usize) -> bool {
        matches!(self.operators[op].subgoals, Subgoals::Iterate(_))
    }

    pub(crate) fn leaf_act(&self, op: usize) -> Option<ActId> {
        self.leaf[op]
    }

    #[cfg(test)]
    pub(crate) fn min_prims(&self, op: usize) -> u32 {
        self.min_prims[op]
    }

    pub(crate) fn elem_cost(&self, e: Elem) -> u32 {
        elem_cost(e, &self.min_prims)
    }

    pub(crate) fn reach(&self, op: usize, act: ActId) -> u32 {
        self.reach[op].get(act.0).copied().unwrap_or(INF)
    }

    /// Whether `act` occurs anywhere below `goal`.
    pub fn covers(&self, goal: &str, act: ActId) -> bool {
        self.index(goal).is_some_and(|i| self.reach(i, act) < INF)
    }
}

fn elem_cost(e: Elem, min_prims: &[u32]) -> u32 {
    match e {
        Elem::Optional(_) => 0,
        Elem::Goal(g) | Elem::Iterate(g) => min_prims[g],
    }
}

/// Cycles are only allowed through `iterate` edges.
fn check_acyclic(ops: &[PlanOperator], elements: &[Vec<Elem>]) -> Result<(), PlannerError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(i: usize, ops: &[PlanOperator], elements: &[Vec<Elem>], marks: &mut [Mark]) -> Result<(), PlannerError> {
        marks[i] = Mark::Active;
        for e in &elements[i] {
            let j = match e {
                Elem::Iterate(_) => continue,
                Elem::Goal(j) | Elem::Optional(j) => *j,
            };
            match marks[j] {
                Mark::Active => return Err(PlannerError::CyclicGoal(ops[j].goal.clone())),
                Mark::New => visit(j, ops, elements, marks)?,
                Mark::Done => {}
            }
        }
        marks[i] = Mark::Done;
        Ok(())
    }
    let mut marks = vec![Mark::New; ops.len()];
    for i in 0..ops.len() {
        if marks[i] == Mark::New {
            visit(i, ops, elements, &mut marks)?;
        }
    }
    Ok(())
}

/// Parse and validate an operator library.
pub fn load_operators(text: &str, inventory: Arc<ActInventory>) -> Result<OperatorLibrary, PlannerError> {
    OperatorLibrary::new(parse_operators(text)?, inventory)
}
