//! Hierarchical plan recognition over the act stream.
//!
//! The recognizer keeps a stack of open sequence frames from the root goal
//! down to the most recent leaf. An incoming act first tries the cheapest
//! continuation that skips nothing mandatory: a later sibling in the innermost
//! frame, then another iteration of the current element, then the same in the
//! enclosing frames. Acts that cannot be placed that way, or that the tracker
//! flagged, go through repair.

mod operators;
mod tree;

use std::sync::Arc;

use thiserror::Error;

use crate::corpus::Turn;
use crate::memory::{DialogueMemory, REFERENCE_PREFIX};
use crate::model::{ActId, ActLabel};
use crate::predictor::LanguageModel;
use crate::tracker::EventKind;

pub use operators::{
    load_operators, parse_operators, Constraint, Element, OperatorLibrary, PlanOperator, Subgoals,
    DEFAULT_OPERATORS, RESOLVE_THEME, RETRIEVE_THEME,
};
pub use tree::{DigressionKind, NodeId, NodeKind, NodeStatus, PlanNode, PlanTree};

use operators::INF;

/// Most mandatory primitives a repair will fill in with virtual leaves; gaps
/// larger than this advance past the skipped structure instead.
pub const INSERT_VIRTUAL_LIMIT: u32 = 2;

/// Goal whose expansions are counted as negotiation rounds.
pub const ROUND_GOAL: &str = "NEGOTIATE";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlannerError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("operator {operator} refers to undefined goal [{goal}]")]
    UndefinedGoal { goal: String, operator: String },
    #[error("goal [{0}] is defined by more than one operator")]
    DuplicateGoal(String),
    #[error("goal [{0}] is part of a cycle that never bottoms out")]
    CyclicGoal(String),
    #[error("operator {operator} uses unknown act {act}")]
    UnknownAct { operator: String, act: String },
    #[error("primitive operator {0} names no act")]
    MissingAct(String),
    #[error("operator library is empty")]
    EmptyLibrary,
    #[error("turn {0} has not been processed")]
    UnprocessedTurn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    MissingAct,
    OutOfPhase,
    UnexpectedAct,
}

impl ErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::MissingAct => "missing-act",
            ErrorKind::OutOfPhase => "out-of-phase",
            ErrorKind::UnexpectedAct => "unexpected-act",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    AttachDigression,
    InsertVirtual,
    AdvancePhase,
}

impl Resolution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resolution::AttachDigression => "attach-digression",
            Resolution::InsertVirtual => "insert-virtual",
            Resolution::AdvancePhase => "advance-phase",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alternative {
    pub error_kind: ErrorKind,
    pub resolution: Resolution,
    /// Predicted probability of the act after the history this reading implies.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairDecision {
    pub turn_id: String,
    pub act: ActLabel,
    pub error_kind: ErrorKind,
    pub resolution: Resolution,
    /// Acts of the virtual leaves added, in order.
    pub inserted: Vec<ActLabel>,
    pub justification: Vec<Alternative>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintFailure {
    pub turn_id: String,
    pub operator: String,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub act: ActLabel,
    pub phase: Option<String>,
    pub round: usize,
    pub repaired: bool,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    node: NodeId,
    op: usize,
    /// Current element.
    pos: usize,
    /// Completed instances of the current element.
    done: u32,
    /// Node holding the instances of an iterated current element.
    container: Option<NodeId>,
}

#[derive(Debug, Clone, Copy)]
struct Target {
    depth: usize,
    elem: usize,
    cost: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fill {
    Virtual,
    Placeholder,
}

#[derive(Debug, Clone)]
struct Cursor {
    tree: PlanTree,
    frames: Vec<Frame>,
    rounds: usize,
    round_goal: Option<usize>,
}

impl Cursor {
    fn new(lib: &OperatorLibrary, round_goal: Option<usize>) -> Self {
        Cursor {
            tree: PlanTree::with_root(&lib.root().goal, 0),
            frames: vec![Frame {
                node: 0,
                op: 0,
                pos: 0,
                done: 0,
                container: lib.is_iterate_op(0).then_some(0),
            }],
            rounds: 0,
            round_goal,
        }
    }

    fn top(&self) -> usize {
        self.frames.len() - 1
    }

    /// Places `act` could go, in order of preference, with the number of
    /// mandatory primitives each would skip.
    fn targets(&self, lib: &OperatorLibrary, act: ActId) -> Vec<Target> {
        let mut out = Vec::new();
        let mut acc = 0u32;
        let top = self.top();
        for d in (0..=top).rev() {
            let f = self.frames[d];
            let elems = lib.elements(f.op);
            if f.pos >= elems.len() {
                break;
            }
            let done = f.done + u32::from(d < top);
            let mut push = |elem: usize, cost: u32| {
                if cost < INF {
                    out.push(Target { depth: d, elem, cost });
                }
            };
            if done == 0 {
                push(f.pos, acc + lib.reach(elems[f.pos].op(), act));
            }
            let mut skip = if done == 0 { lib.elem_cost(elems[f.pos]) } else { 0 };
            for (j, e) in elems.iter().enumerate().skip(f.pos + 1) {
                push(j, acc + skip + lib.reach(e.op(), act));
                skip = (skip + lib.elem_cost(*e)).min(INF);
            }
            if done > 0 && elems[f.pos].repeatable() {
                push(f.pos, acc + lib.reach(elems[f.pos].op(), act));
            }
            acc = (acc + skip).min(INF);
        }
        out
    }

    fn add_goal(&mut self, lib: &OperatorLibrary, op: usize, parent: NodeId) -> NodeId {
        let id = self.tree.add(parent, NodeKind::Goal(lib.op(op).goal.clone()), Some(op));
        if self.round_goal == Some(op) {
            self.rounds += 1;
            self.tree.node_mut(id).round = self.rounds;
        }
        id
    }

    /// Node under which instances of element `j` of frame `d` go.
    fn element_parent(&mut self, lib: &OperatorLibrary, d: usize, j: usize) -> NodeId {
        let f = self.frames[d];
        if lib.is_iterate_op(f.op) {
            return f.node;
        }
        match lib.elements(f.op)[j] {
            operators::Elem::Iterate(g) => {
                if j == f.pos {
                    if let Some(c) = f.container {
                        return c;
                    }
                }
                let c = self
                    .tree
                    .add(f.node, NodeKind::Iterate(lib.op(g).goal.clone()), None);
                if j == f.pos {
                    self.frames[d].container = Some(c);
                }
                c
            }
            _ => f.node,
        }
    }

    fn min_expand(&mut self, lib: &OperatorLibrary, op: usize, parent: NodeId) {
        let id = self.add_goal(lib, op, parent);
        if let Some(a) = lib.leaf_act(op) {
            let n = self.tree.node_mut(id);
            n.act = Some(lib.inventory().label(a).clone());
            n.forced = true;
            return;
        }
        let iterate_op = lib.is_iterate_op(op);
        for e in lib.elements(op).to_vec() {
            if lib.elem_cost(e) == 0 {
                continue;
            }
            let p = match e {
                operators::Elem::Iterate(g) if !iterate_op => {
                    self.tree.add(id, NodeKind::Iterate(lib.op(g).goal.clone()), None)
                }
                _ => id,
            };
            self.min_expand(lib, e.op(), p);
        }
    }

    fn fill_element(&mut self, lib: &OperatorLibrary, d: usize, j: usize, fill: Fill) {
        let e = lib.elements(self.frames[d].op)[j];
        let parent = self.element_parent(lib, d, j);
        match fill {
            Fill::Virtual => self.min_expand(lib, e.op(), parent),
            Fill::Placeholder => {
                let id = self.add_goal(lib, e.op(), parent);
                let n = self.tree.node_mut(id);
                n.forced = true;
                if let Some(a) = lib.leaf_act(e.op()) {
                    n.act = Some(lib.inventory().label(a).clone());
                }
            }
        }
    }

    fn close_top(&mut self, lib: &OperatorLibrary, fill: Fill) {
        let d = self.top();
        let f = self.frames[d];
        let from = if f.done > 0 { f.pos + 1 } else { f.pos };
        for j in from..lib.elements(f.op).len() {
            if lib.elem_cost(lib.elements(f.op)[j]) > 0 {
                self.fill_element(lib, d, j, fill);
            }
        }
    }

    fn apply(&mut self, lib: &OperatorLibrary, t: Target, act: ActId, fill: Fill) -> Option<NodeId> {
        while self.top() > t.depth {
            self.close_top(lib, fill);
            self.frames.pop();
            let d = self.top();
            self.frames[d].done += 1;
        }
        let d = t.depth;
        let f = self.frames[d];
        if t.elem != f.pos {
            let from = if f.done > 0 { f.pos + 1 } else { f.pos };
            for j in from..t.elem {
                if lib.elem_cost(lib.elements(f.op)[j]) > 0 {
                    self.fill_element(lib, d, j, fill);
                }
            }
            let frame = &mut self.frames[d];
            frame.pos = t.elem;
            frame.done = 0;
            frame.container = lib.is_iterate_op(f.op).then_some(f.node);
        }
        let parent = self.element_parent(lib, d, t.elem);
        let op = lib.elements(f.op)[t.elem].op();
        let mut visiting = vec![f.op];
        self.expand(lib, op, parent, act, fill, &mut visiting)
    }

    /// Expand `op` down to a leaf for `act`, filling skipped mandatory
    /// prefixes.
    fn expand(
        &mut self,
        lib: &OperatorLibrary,
        op: usize,
        parent: NodeId,
        act: ActId,
        fill: Fill,
        visiting: &mut Vec<usize>,
    ) -> Option<NodeId> {
        let id = self.add_goal(lib, op, parent);
        if let Some(a) = lib.leaf_act(op) {
            if a != act {
                return None;
            }
            self.tree.node_mut(id).act = Some(lib.inventory().label(a).clone());
            let d = self.top();
            self.frames[d].done += 1;
            return Some(id);
        }
        let elems = lib.elements(op);
        let mut best: Option<(usize, u32)> = None;
        let mut prefix = 0u32;
        for (j, e) in elems.iter().enumerate() {
            if !visiting.contains(&e.op()) {
                let c = prefix + lib.reach(e.op(), act);
                if c < INF && best.is_none_or(|(_, b)| c < b) {
                    best = Some((j, c));
                }
            }
            prefix = (prefix + lib.elem_cost(*e)).min(INF);
        }
        let (j, _) = best?;
        self.frames.push(Frame {
            node: id,
            op,
            pos: 0,
            done: 0,
            container: lib.is_iterate_op(op).then_some(id),
        });
        let d = self.top();
        for (i, e) in elems.iter().enumerate().take(j) {
            if lib.elem_cost(*e) > 0 {
                self.fill_element(lib, d, i, fill);
            }
        }
        if j > 0 {
            self.frames[d].pos = j;
            self.frames[d].container = lib.is_iterate_op(op).then_some(id);
        }
        let parent = self.element_parent(lib, d, j);
        visiting.push(op);
        self.expand(lib, elems[j].op(), parent, act, fill, visiting)
    }

    fn digression_parent(&self, lib: &OperatorLibrary) -> NodeId {
        let f = self.frames[self.top()];
        match (lib.elements(f.op).get(f.pos), f.container) {
            (Some(e), Some(c)) if e.repeatable() => c,
            _ => f.node,
        }
    }
}

#[derive(Debug, Clone)]
struct Processed {
    turn_id: String,
    act: ActId,
    speaker: String,
    leaf: NodeId,
}

/// Plan recognizer for one dialogue.
#[derive(Debug, Clone)]
pub struct Planner {
    library: Arc<OperatorLibrary>,
    cursor: Cursor,
    clarifications: Vec<NodeId>,
    processed: Vec<Processed>,
    repairs: Vec<RepairDecision>,
    constraint_failures: Vec<ConstraintFailure>,
    fired: Vec<(String, String)>,
    insert_limit: u32,
}

impl Planner {
    pub fn new(library: Arc<OperatorLibrary>) -> Self {
        let round_goal = library.index(ROUND_GOAL);
        Planner {
            cursor: Cursor::new(&library, round_goal),
            library,
            clarifications: Vec::new(),
            processed: Vec::new(),
            repairs: Vec::new(),
            constraint_failures: Vec::new(),
            fired: Vec::new(),
            insert_limit: INSERT_VIRTUAL_LIMIT,
        }
    }

    pub fn with_insert_limit(mut self, limit: u32) -> Self {
        self.insert_limit = limit;
        self
    }

    pub fn library(&self) -> &Arc<OperatorLibrary> {
        &self.library
    }

    pub fn tree(&self) -> &PlanTree {
        &self.cursor.tree
    }

    pub fn repairs(&self) -> &[RepairDecision] {
        &self.repairs
    }

    pub fn constraint_failures(&self) -> &[ConstraintFailure] {
        &self.constraint_failures
    }

    /// `(turn_id, action)` for actions without built-in semantics.
    pub fn fired_actions(&self) -> &[(String, String)] {
        &self.fired
    }

    pub fn rounds(&self) -> usize {
        self.cursor.rounds
    }

    pub fn is_complete(&self) -> bool {
        self.clarifications.is_empty() && self.tree().node(self.tree().root()).status == NodeStatus::Satisfied
    }

    /// Consume one turn. `event` is the tracker's terminal event for it.
    /// Returns the repair made, if any.
    pub fn advance(
        &mut self,
        turn: &Turn,
        act: ActId,
        event: EventKind,
        memory: &mut DialogueMemory,
        predictor: Option<&LanguageModel>,
    ) -> Option<RepairDecision> {
        memory.register_turn(turn);
        let lib = self.library.clone();
        let label = lib.inventory().label(act).clone();
        let mut repair = None;

        let leaf = match (event, self.clarifications.last().copied()) {
            (EventKind::ClarificationOpened, _) => {
                let parent = self.clarifications.last().copied().unwrap_or_else(|| self.cursor.digression_parent(&lib));
                let node = self.digression(parent, DigressionKind::Clarification, NodeStatus::Open);
                self.clarifications.push(node);
                self.act_leaf(node, &label, turn, NodeStatus::Satisfied)
            }
            (EventKind::ClarificationClosed, Some(node)) => {
                self.clarifications.pop();
                self.cursor.tree.node_mut(node).status = NodeStatus::Satisfied;
                self.act_leaf(node, &label, turn, NodeStatus::Satisfied)
            }
            (_, Some(node)) => {
                if event.signals_inconsistency() {
                    let decision = RepairDecision {
                        turn_id: turn.turn_id.clone(),
                        act: label.clone(),
                        error_kind: ErrorKind::UnexpectedAct,
                        resolution: Resolution::AttachDigression,
                        inserted: Vec::new(),
                        justification: vec![Alternative {
                            error_kind: ErrorKind::UnexpectedAct,
                            resolution: Resolution::AttachDigression,
                            score: None,
                        }],
                    };
                    repair = Some(decision);
                    self.act_leaf(node, &label, turn, NodeStatus::Repaired)
                } else {
                    self.act_leaf(node, &label, turn, NodeStatus::Satisfied)
                }
            }
            (EventKind::AnywhereAccepted, None) => {
                let parent = self.cursor.digression_parent(&lib);
                let node = self.digression(parent, DigressionKind::Anywhere, NodeStatus::Satisfied);
                self.act_leaf(node, &label, turn, NodeStatus::Satisfied)
            }
            (_, None) => {
                let targets = self.cursor.targets(&lib, act);
                let direct = if event.signals_inconsistency() {
                    None
                } else {
                    targets
                        .iter()
                        .find(|t| t.cost == 0)
                        .and_then(|t| self.cursor.apply(&lib, *t, act, Fill::Virtual))
                };
                match direct {
                    Some(leaf) => {
                        self.bind(leaf, turn, act, memory);
                        leaf
                    }
                    None => {
                        let (leaf, decision) = self.repair(turn, act, &targets, memory, predictor);
                        repair = Some(decision);
                        leaf
                    }
                }
            }
        };
        self.processed.push(Processed {
            turn_id: turn.turn_id.clone(),
            act,
            speaker: turn.speaker.clone(),
            leaf,
        });
        self.cursor.tree.recompute(&lib);
        if let Some(r) = &repair {
            self.repairs.push(r.clone());
        }
        repair
    }

    fn digression(&mut self, parent: NodeId, kind: DigressionKind, status: NodeStatus) -> NodeId {
        let id = self.cursor.tree.add(parent, NodeKind::Digression(kind), None);
        self.cursor.tree.node_mut(id).status = status;
        id
    }

    fn act_leaf(&mut self, parent: NodeId, act: &ActLabel, turn: &Turn, status: NodeStatus) -> NodeId {
        let id = self.cursor.tree.add(parent, NodeKind::Act, None);
        let n = self.cursor.tree.node_mut(id);
        n.act = Some(act.clone());
        n.turn = Some(turn.turn_id.clone());
        n.status = status;
        id
    }

    fn history_labels(&self) -> Vec<ActLabel> {
        self.processed
            .iter()
            .map(|p| self.library.inventory().label(p.act).clone())
            .collect()
    }

    fn score(predictor: &LanguageModel, history: &[ActLabel], act: &ActLabel) -> f64 {
        let inv = predictor.inventory();
        let ids: Option<Vec<ActId>> = history.iter().map(|a| inv.id(a.as_str())).collect();
        match (ids, inv.id(act.as_str())) {
            (Some(h), Some(a)) => predictor.probability_of(&h, a).unwrap_or(0.0),
            _ => 0.0,
        }
    }

    fn out_of_phase(&self, act: ActId) -> bool {
        let tree = &self.cursor.tree;
        let current = self.cursor.frames.get(1).map(|f| f.node);
        let current_goal = current.and_then(|c| tree.node(c).goal());
        let mut phases = Vec::new();
        for &c in &tree.node(tree.root()).children {
            match &tree.node(c).kind {
                NodeKind::Iterate(_) => phases.extend(tree.node(c).children.iter().copied()),
                NodeKind::Goal(_) => phases.push(c),
                _ => {}
            }
        }
        phases.into_iter().any(|p| {
            Some(p) != current
                && tree
                    .node(p)
                    .goal()
                    .is_some_and(|g| Some(g) != current_goal && self.library.covers(g, act))
        })
    }

    fn repair(
        &mut self,
        turn: &Turn,
        act: ActId,
        targets: &[Target],
        memory: &mut DialogueMemory,
        predictor: Option<&LanguageModel>,
    ) -> (NodeId, RepairDecision) {
        let lib = self.library.clone();
        let label = lib.inventory().label(act).clone();
        let history = self.history_labels();

        struct Candidate {
            kind: ErrorKind,
            resolution: Resolution,
            attached: Option<(Cursor, NodeId, Vec<ActLabel>)>,
            implied: Vec<ActLabel>,
        }
        let mut candidates = Vec::new();

        let mut best: Option<Target> = None;
        for t in targets {
            if best.is_none_or(|b| t.cost < b.cost) {
                best = Some(*t);
            }
        }
        if let Some(t) = best {
            let fill = if t.cost <= self.insert_limit {
                Fill::Virtual
            } else {
                Fill::Placeholder
            };
            let mut cursor = self.cursor.clone();
            let before = cursor.tree.len();
            if let Some(leaf) = cursor.apply(&lib, t, act, fill) {
                let inserted: Vec<ActLabel> = (before..cursor.tree.len())
                    .filter(|&i| i != leaf)
                    .map(|i| cursor.tree.node(i))
                    .filter(|n| n.is_virtual())
                    .filter_map(|n| n.act.clone())
                    .collect();
                let resolution = match fill {
                    Fill::Virtual => Resolution::InsertVirtual,
                    Fill::Placeholder => Resolution::AdvancePhase,
                };
                let mut implied = history.clone();
                if fill == Fill::Virtual {
                    implied.extend(inserted.iter().cloned());
                }
                candidates.push(Candidate {
                    kind: ErrorKind::MissingAct,
                    resolution,
                    attached: Some((cursor, leaf, inserted)),
                    implied,
                });
            }
        }
        if self.out_of_phase(act) {
            candidates.push(Candidate {
                kind: ErrorKind::OutOfPhase,
                resolution: Resolution::AttachDigression,
                attached: None,
                implied: history.clone(),
            });
        }
        if candidates.is_empty() {
            candidates.push(Candidate {
                kind: ErrorKind::UnexpectedAct,
                resolution: Resolution::AttachDigression,
                attached: None,
                implied: history,
            });
        }

        let scores: Vec<Option<f64>> = candidates
            .iter()
            .map(|c| match predictor {
                Some(p) if candidates.len() > 1 => Some(Self::score(p, &c.implied, &label)),
                _ => None,
            })
            .collect();
        let mut chosen = 0;
        for (i, s) in scores.iter().enumerate() {
            if let (Some(s), Some(b)) = (s, scores[chosen]) {
                if *s > b {
                    chosen = i;
                }
            }
        }
        let justification = candidates
            .iter()
            .zip(&scores)
            .map(|(c, s)| Alternative {
                error_kind: c.kind,
                resolution: c.resolution,
                score: *s,
            })
            .collect();

        let c = candidates.swap_remove(chosen);
        let mut decision = RepairDecision {
            turn_id: turn.turn_id.clone(),
            act: label.clone(),
            error_kind: c.kind,
            resolution: c.resolution,
            inserted: Vec::new(),
            justification,
        };
        let leaf = match c.attached {
            Some((cursor, leaf, inserted)) => {
                self.cursor = cursor;
                decision.inserted = inserted;
                self.bind(leaf, turn, act, memory);
                leaf
            }
            None => {
                let kind = match c.kind {
                    ErrorKind::OutOfPhase => DigressionKind::OutOfPhase,
                    _ => DigressionKind::Unexpected,
                };
                let parent = self.cursor.digression_parent(&lib);
                let node = self.digression(parent, kind, NodeStatus::Repaired);
                self.act_leaf(node, &label, turn, NodeStatus::Repaired)
            }
        };
        (leaf, decision)
    }

    fn round_of(&self, node: NodeId) -> usize {
        let tree = &self.cursor.tree;
        std::iter::once(tree.node(node))
            .chain(tree.ancestors(node))
            .find(|n| n.round > 0)
            .map_or(0, |n| n.round)
    }

    /// Bind a matched primitive leaf to its turn, check the operator's
    /// constraints and run its actions.
    fn bind(&mut self, leaf: NodeId, turn: &Turn, act: ActId, memory: &mut DialogueMemory) {
        self.cursor.tree.node_mut(leaf).turn = Some(turn.turn_id.clone());
        let Some(op) = self.cursor.tree.node(leaf).op else {
            return;
        };
        let lib = self.library.clone();
        let operator = lib.op(op);
        let inv = lib.inventory();
        for c in &operator.constraints {
            let ok = match c {
                Constraint::Occurred(a) => self.processed.iter().any(|p| inv.label(p.act) == a),
                Constraint::NotOccurred(a) => !self.processed.iter().any(|p| inv.label(p.act) == a),
                Constraint::SpeakerChanged => self.processed.last().is_some_and(|p| p.speaker != turn.speaker),
                Constraint::OpenProposal => memory.thematic().iter().any(|r| r.status.is_open()),
                Constraint::HasTheme => turn.theme.iter().any(|(k, _)| !k.starts_with(REFERENCE_PREFIX)),
            };
            if !ok {
                self.constraint_failures.push(ConstraintFailure {
                    turn_id: turn.turn_id.clone(),
                    operator: operator.name.clone(),
                    constraint: c.clone(),
                });
            }
        }
        let round = self.round_of(leaf);
        memory.set_round(round);
        for action in &operator.actions {
            match action.as_str() {
                RETRIEVE_THEME => memory.retrieve_theme(turn),
                RESOLVE_THEME => memory.resolve_theme(inv.label(act).as_str(), &turn.turn_id),
                other => self.fired.push((turn.turn_id.clone(), other.to_string())),
            }
        }
    }

    /// Pragmatic annotation of a processed turn.
    pub fn annotate(&self, turn_id: &str) -> Result<Annotation, PlannerError> {
        let p = self
            .processed
            .iter()
            .find(|p| p.turn_id == turn_id)
            .ok_or_else(|| PlannerError::UnprocessedTurn(turn_id.to_string()))?;
        let tree = &self.cursor.tree;
        let root = tree.root();
        let mut cur = p.leaf;
        let mut phase = None;
        while let Some(parent) = tree.node(cur).parent {
            let under_root = parent == root
                || (matches!(tree.node(parent).kind, NodeKind::Iterate(_)) && tree.node(parent).parent == Some(root));
            if under_root {
                phase = tree.node(cur).goal().map(str::to_string);
                break;
            }
            cur = parent;
        }
        let leaf = tree.node(p.leaf);
        Ok(Annotation {
            act: self.library.inventory().label(p.act).clone(),
            phase,
            round: self.round_of(p.leaf),
            repaired: leaf.status == NodeStatus::Repaired,
        })
    }

    /// Tree checks plus the leaf/turn correspondence.
    pub fn check(&self) -> Result<(), String> {
        let tree = &self.cursor.tree;
        tree.check(&self.library)?;
        let bound: Vec<NodeId> = tree
            .leaves()
            .into_iter()
            .filter(|&l| tree.node(l).turn.is_some())
            .collect();
        let expected: Vec<NodeId> = self.processed.iter().map(|p| p.leaf).collect();
        if bound != expected {
            return Err("turn-bound leaves do not follow the processed turns".into());
        }
        for p in &self.processed {
            let n = tree.node(p.leaf);
            if n.turn.as_deref() != Some(p.turn_id.as_str()) || n.act.as_ref() != Some(self.library.inventory().label(p.act)) {
                return Err(format!("leaf for turn {} is mislabelled", p.turn_id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model, DialogueModel};
    use crate::tracker::TrackerState;

    struct Run {
        planner: Planner,
        memory: DialogueMemory,
        repairs: Vec<RepairDecision>,
    }

    fn run_model(model: &DialogueModel, acts: &[&str]) -> Run {
        let lib = Arc::new(OperatorLibrary::default_library(model.inventory.clone()));
        let mut planner = Planner::new(lib);
        let mut tracker = TrackerState::start(model.machine.clone(), model.inventory.clone());
        let mut memory = DialogueMemory::new();
        let mut repairs = Vec::new();
        for (i, a) in acts.iter().enumerate() {
            let id = model.inventory.id(a).unwrap();
            let ev = tracker.step(id, None);
            let speaker = if i % 2 == 0 { "A" } else { "B" };
            let turn = Turn::new("T", &(i + 1).to_string(), speaker, a);
            if let Some(r) = planner.advance(&turn, id, ev.kind, &mut memory, None) {
                repairs.push(r);
            }
            planner.check().unwrap();
        }
        Run {
            planner,
            memory,
            repairs,
        }
    }

    fn run(acts: &[&str]) -> Run {
        run_model(&DialogueModel::default_model(), acts)
    }

    const D1: &[&str] = &[
        "BEGRUESSUNG",
        "INIT_TERMINABSPRACHE",
        "VORSCHLAG",
        "AKZEPTANZ",
        "BESTAETIGUNG",
        "VERABSCHIEDUNG",
    ];

    const D2: &[&str] = &[
        "BEGRUESSUNG",
        "INIT_TERMINABSPRACHE",
        "VORSCHLAG",
        "ABLEHNUNG",
        "VORSCHLAG",
        "AKZEPTANZ",
        "BESTAETIGUNG",
        "VERABSCHIEDUNG",
    ];

    #[test]
    fn conformant_dialogue_is_fully_satisfied() {
        let r = run(D1);
        let tree = r.planner.tree();
        assert!(r.repairs.is_empty());
        assert!(r.planner.is_complete());
        assert_eq!(tree.count_status(NodeStatus::Repaired), 0);
        assert_eq!(tree.count_status(NodeStatus::Open), 0);
        assert_eq!(tree.digressions(), 0);
        let acts: Vec<String> = tree.observed_acts().iter().map(|a| a.to_string()).collect();
        assert_eq!(acts, D1);
        let expected = "\
SCHEDULE-MEETING satisfied
  GREET-INTRODUCE-TOPIC satisfied
    GREETINGS satisfied
      GREET BEGRUESSUNG satisfied @1
    INTRODUCE-TOPIC INIT_TERMINABSPRACHE satisfied @2
  iterate [NEGOTIATE] satisfied
    NEGOTIATE satisfied
      iterate [PROPOSAL-ROUND] satisfied
        PROPOSAL-ROUND satisfied
          iterate [OFFER] satisfied
            OFFER VORSCHLAG satisfied @3
      ACCEPT AKZEPTANZ satisfied @4
      CONFIRM BESTAETIGUNG satisfied @5
  FINISH satisfied
    FAREWELL VERABSCHIEDUNG satisfied @6
";
        assert_eq!(tree.dump(), expected);
    }

    #[test]
    fn rejection_and_new_offer_stay_in_one_negotiation() {
        let r = run(D2);
        assert!(r.repairs.is_empty());
        assert_eq!(r.planner.rounds(), 1);
        let tree = r.planner.tree();
        let negotiations: Vec<NodeId> = tree
            .preorder()
            .into_iter()
            .filter(|&i| tree.node(i).goal() == Some("NEGOTIATE"))
            .collect();
        assert_eq!(negotiations.len(), 1);
        let under: Vec<String> = tree
            .leaves()
            .into_iter()
            .filter(|&l| tree.ancestors(l).any(|a| a.goal() == Some("NEGOTIATE")))
            .map(|l| tree.node(l).act.as_ref().unwrap().to_string())
            .collect();
        assert_eq!(under, ["VORSCHLAG", "ABLEHNUNG", "VORSCHLAG", "AKZEPTANZ", "BESTAETIGUNG"]);
    }

    #[test]
    fn annotations() {
        let r = run(D2);
        assert_eq!(
            r.planner.annotate("5").unwrap(),
            Annotation {
                act: ActLabel::new("VORSCHLAG"),
                phase: Some("NEGOTIATE".into()),
                round: 1,
                repaired: false
            }
        );
        assert_eq!(
            r.planner.annotate("1").unwrap(),
            Annotation {
                act: ActLabel::new("BEGRUESSUNG"),
                phase: Some("GREET-INTRODUCE-TOPIC".into()),
                round: 0,
                repaired: false
            }
        );
        assert_eq!(r.planner.annotate("8").unwrap().phase.as_deref(), Some("FINISH"));
        assert_eq!(r.planner.annotate("8").unwrap().round, 0);
        assert_eq!(
            r.planner.annotate("99"),
            Err(PlannerError::UnprocessedTurn("99".into()))
        );
    }

    #[test]
    fn second_negotiation_counts_a_new_round() {
        let r = run(&[
            "INIT_TERMINABSPRACHE",
            "VORSCHLAG",
            "AKZEPTANZ",
            "BESTAETIGUNG",
            "VORSCHLAG",
            "AKZEPTANZ",
        ]);
        assert!(r.repairs.is_empty());
        assert_eq!(r.planner.rounds(), 2);
        assert_eq!(r.planner.annotate("5").unwrap().round, 2);
    }

    #[test]
    fn acceptance_without_offer_inserts_a_virtual_offer() {
        let r = run(&["INIT_TERMINABSPRACHE", "AKZEPTANZ"]);
        assert_eq!(r.repairs.len(), 1);
        let d = &r.repairs[0];
        assert_eq!(d.error_kind, ErrorKind::MissingAct);
        assert_eq!(d.resolution, Resolution::InsertVirtual);
        assert_eq!(d.inserted, vec![ActLabel::new("VORSCHLAG")]);
        let tree = r.planner.tree();
        let virtuals: Vec<&PlanNode> = tree.leaves().into_iter().map(|l| tree.node(l)).filter(|n| n.is_virtual()).collect();
        assert_eq!(virtuals.len(), 1);
        assert_eq!(virtuals[0].status, NodeStatus::Repaired);
        assert_eq!(tree.count_status(NodeStatus::Repaired), 1);
        assert!(!r.planner.annotate("2").unwrap().repaired);
    }

    #[test]
    fn greeting_mid_negotiation_is_out_of_phase() {
        let r = run(&["BEGRUESSUNG", "INIT_TERMINABSPRACHE", "VORSCHLAG", "BEGRUESSUNG", "AKZEPTANZ"]);
        // the tracker falls back to the greeting state, so the acceptance is flagged as well
        assert_eq!(r.repairs.len(), 2);
        assert_eq!(r.repairs[1].error_kind, ErrorKind::MissingAct);
        assert!(r.repairs[1].inserted.is_empty());
        assert_eq!(r.repairs[0].error_kind, ErrorKind::OutOfPhase);
        assert_eq!(r.repairs[0].resolution, Resolution::AttachDigression);
        let a = r.planner.annotate("4").unwrap();
        assert!(a.repaired);
        assert_eq!(a.phase.as_deref(), Some("NEGOTIATE"));
        assert_eq!(r.planner.tree().digressions(), 1);
        assert!(!r.planner.annotate("5").unwrap().repaired);
    }

    #[test]
    fn act_outside_the_library_is_unexpected() {
        let model = load_model(include_str!("../../data/fixtures/extended.model")).unwrap();
        let r = run_model(&model, &["INIT_TERMINABSPRACHE", "VORSCHLAG", "OFF_MODEL", "AKZEPTANZ"]);
        assert_eq!(r.repairs.len(), 1);
        assert_eq!(r.repairs[0].error_kind, ErrorKind::UnexpectedAct);
        let acts: Vec<String> = r.planner.tree().observed_acts().iter().map(|a| a.to_string()).collect();
        assert_eq!(acts, ["INIT_TERMINABSPRACHE", "VORSCHLAG", "AKZEPTANZ"]);
    }

    #[test]
    fn large_gap_advances_the_phase() {
        let r = run(&["BEGRUESSUNG", "BESTAETIGUNG", "VERABSCHIEDUNG"]);
        assert_eq!(r.repairs.len(), 1);
        assert_eq!(r.repairs[0].error_kind, ErrorKind::MissingAct);
        assert_eq!(r.repairs[0].resolution, Resolution::AdvancePhase);
        assert!(r.planner.tree().count_status(NodeStatus::Repaired) >= 3);
        assert_eq!(r.planner.annotate("2").unwrap().phase.as_deref(), Some("NEGOTIATE"));
    }

    #[test]
    fn anywhere_and_clarification_digressions() {
        let model = load_model(include_str!("../../data/fixtures/extended.model")).unwrap();
        let r = run_model(
            &model,
            &[
                "INIT_TERMINABSPRACHE",
                "DELIBERATE",
                "VORSCHLAG",
                "CLARIFY_OPEN",
                "VORSCHLAG",
                "CLARIFY_CLOSE",
                "AKZEPTANZ",
            ],
        );
        assert!(r.repairs.is_empty());
        let tree = r.planner.tree();
        assert_eq!(tree.digressions(), 2);
        assert_eq!(tree.count_status(NodeStatus::Repaired), 0);
        assert!(tree.dump().contains("digression:clarification satisfied"));
        assert!(tree.dump().contains("digression:anywhere satisfied"));
        // the clarified proposal does not open a thematic record
        assert_eq!(r.memory.thematic().len(), 1);
    }

    #[test]
    fn offer_with_theme_creates_a_proposal() {
        let model = DialogueModel::default_model();
        let lib = Arc::new(OperatorLibrary::default_library(model.inventory.clone()));
        let mut planner = Planner::new(lib);
        let mut memory = DialogueMemory::new();
        let init = Turn::new("X", "1", "A", "INIT_TERMINABSPRACHE");
        let offer = Turn::new("X", "2", "B", "VORSCHLAG").with_theme(&[("month", "October")]);
        for t in [&init, &offer] {
            let id = model.inventory.id(t.act.as_str()).unwrap();
            planner.advance(t, id, EventKind::Accepted, &mut memory, None);
        }
        assert_eq!(memory.thematic().len(), 1);
        assert_eq!(memory.thematic()[0].status, crate::memory::ThemeStatus::Proposed);
        assert_eq!(memory.thematic()[0].round, 1);
    }

    #[test]
    fn constraint_failures_are_recorded_not_blocking() {
        // same speaker proposes and accepts
        let model = DialogueModel::default_model();
        let lib = Arc::new(OperatorLibrary::default_library(model.inventory.clone()));
        let mut planner = Planner::new(lib);
        let mut memory = DialogueMemory::new();
        for (i, a) in ["INIT_TERMINABSPRACHE", "VORSCHLAG", "AKZEPTANZ"].iter().enumerate() {
            let t = Turn::new("X", &i.to_string(), "A", a);
            planner.advance(&t, model.inventory.id(a).unwrap(), EventKind::Accepted, &mut memory, None);
        }
        assert_eq!(planner.constraint_failures().len(), 1);
        assert_eq!(planner.constraint_failures()[0].constraint, Constraint::SpeakerChanged);
        assert_eq!(memory.thematic()[0].status, crate::memory::ThemeStatus::Accepted);
    }

    #[test]
    fn inconsistency_on_attachable_act_is_still_a_repair() {
        let model = DialogueModel::default_model();
        let lib = Arc::new(OperatorLibrary::default_library(model.inventory.clone()));
        let mut planner = Planner::new(lib);
        let mut memory = DialogueMemory::new();
        let t = Turn::new("X", "1", "A", "INIT_TERMINABSPRACHE");
        let d = planner
            .advance(&t, model.inventory.id("INIT_TERMINABSPRACHE").unwrap(), EventKind::FallbackApplied, &mut memory, None)
            .unwrap();
        assert_eq!(d.error_kind, ErrorKind::MissingAct);
        assert!(d.inserted.is_empty());
        planner.check().unwrap();
    }

    #[test]
    fn deleting_a_mandatory_turn_repairs_only_that_turn() {
        for (skip, deleted) in D1.iter().enumerate() {
            let acts: Vec<&str> = D1.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, a)| *a).collect();
            let r = run(&acts);
            let tree = r.planner.tree();
            assert_eq!(tree.digressions(), 0, "skip {skip}");
            for id in tree.preorder() {
                let n = tree.node(id);
                if n.status == NodeStatus::Repaired {
                    assert!(n.is_virtual(), "skip {skip}");
                    assert_eq!(n.act.as_ref().unwrap().as_str(), *deleted);
                }
            }
        }
    }
}
