use std::fmt::Write as _;

use crate::model::ActLabel;

use super::operators::{Elem, OperatorLibrary};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Open,
    Satisfied,
    Repaired,
}

impl NodeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeStatus::Open => "open",
            NodeStatus::Satisfied => "satisfied",
            NodeStatus::Repaired => "repaired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DigressionKind {
    Unexpected,
    OutOfPhase,
    Anywhere,
    Clarification,
}

impl DigressionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DigressionKind::Unexpected => "unexpected",
            DigressionKind::OutOfPhase => "out-of-phase",
            DigressionKind::Anywhere => "anywhere",
            DigressionKind::Clarification => "clarification",
        }
    }

    /// Digressions that exist because an act could not be placed.
    pub fn is_repair(&self) -> bool {
        matches!(self, DigressionKind::Unexpected | DigressionKind::OutOfPhase)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    /// Expansion of a plan operator; primitive goals are leaves.
    Goal(String),
    /// Container of the expansions of an `iterate` element.
    Iterate(String),
    Digression(DigressionKind),
    /// Act placed inside a digression.
    Act,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub kind: NodeKind,
    pub status: NodeStatus,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub act: Option<ActLabel>,
    pub turn: Option<String>,
    /// Ordinal of a negotiation-round node, 0 elsewhere.
    pub round: usize,
    pub(crate) op: Option<usize>,
    /// Inserted by repair rather than observed.
    pub(crate) forced: bool,
}

impl PlanNode {
    pub fn is_leaf(&self) -> bool {
        self.act.is_some()
    }

    pub fn is_virtual(&self) -> bool {
        self.is_leaf() && self.turn.is_none()
    }

    pub fn goal(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Goal(g) => Some(g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanTree {
    nodes: Vec<PlanNode>,
}

impl PlanTree {
    pub(crate) fn with_root(goal: &str, op: usize) -> Self {
        PlanTree {
            nodes: vec![PlanNode {
                kind: NodeKind::Goal(goal.to_string()),
                status: NodeStatus::Open,
                parent: None,
                children: Vec::new(),
                act: None,
                turn: None,
                round: 0,
                op: Some(op),
                forced: false,
            }],
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &PlanNode {
        &self.nodes[id]
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut PlanNode {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn add(&mut self, parent: NodeId, kind: NodeKind, op: Option<usize>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(PlanNode {
            kind,
            status: NodeStatus::Open,
            parent: Some(parent),
            children: Vec::new(),
            act: None,
            turn: None,
            round: 0,
            op,
            forced: false,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Nodes in depth-first, left-to-right order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder().into_iter().filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    /// Acts of the leaves that were observed and not repaired, in order.
    pub fn observed_acts(&self) -> Vec<ActLabel> {
        self.leaves()
            .into_iter()
            .map(|i| &self.nodes[i])
            .filter(|n| n.status != NodeStatus::Repaired)
            .filter_map(|n| n.act.clone())
            .collect()
    }

    pub fn count_status(&self, status: NodeStatus) -> usize {
        self.nodes.iter().filter(|n| n.status == status).count()
    }

    pub fn digressions(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Digression(_)))
            .count()
    }

    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = &PlanNode> + '_ {
        std::iter::successors(self.nodes[id].parent, move |&p| self.nodes[p].parent).map(move |p| &self.nodes[p])
    }

    fn fulfilled(&self, id: NodeId) -> bool {
        self.nodes[id].status != NodeStatus::Open
    }

    fn derived_status(&self, id: NodeId, lib: &OperatorLibrary) -> NodeStatus {
        let n = &self.nodes[id];
        if n.forced {
            return NodeStatus::Repaired;
        }
        let any_instance = || {
            n.children
                .iter()
                .any(|&c| !matches!(self.nodes[c].kind, NodeKind::Digression(_)) && self.fulfilled(c))
        };
        match &n.kind {
            NodeKind::Digression(_) | NodeKind::Act => n.status,
            NodeKind::Iterate(_) => {
                if any_instance() {
                    NodeStatus::Satisfied
                } else {
                    NodeStatus::Open
                }
            }
            NodeKind::Goal(_) => {
                if n.is_leaf() {
                    return if n.turn.is_some() {
                        NodeStatus::Satisfied
                    } else {
                        NodeStatus::Open
                    };
                }
                let Some(op) = n.op else {
                    return NodeStatus::Open;
                };
                if lib.is_iterate_op(op) {
                    return if any_instance() {
                        NodeStatus::Satisfied
                    } else {
                        NodeStatus::Open
                    };
                }
                let kids: Vec<&PlanNode> = n
                    .children
                    .iter()
                    .map(|&c| &self.nodes[c])
                    .filter(|c| !matches!(c.kind, NodeKind::Digression(_)))
                    .collect();
                let mut k = 0;
                for e in lib.elements(op) {
                    let goal = lib.op(e.op()).goal.as_str();
                    let present = kids.get(k).is_some_and(|c| match (e, &c.kind) {
                        (Elem::Iterate(_), NodeKind::Iterate(g)) => g == goal,
                        (Elem::Goal(_) | Elem::Optional(_), NodeKind::Goal(g)) => g == goal,
                        _ => false,
                    });
                    if present {
                        if kids[k].status == NodeStatus::Open {
                            return NodeStatus::Open;
                        }
                        k += 1;
                    } else if lib.elem_cost(*e) > 0 {
                        return NodeStatus::Open;
                    }
                }
                NodeStatus::Satisfied
            }
        }
    }

    /// Recompute every derived status, children before parents.
    pub(crate) fn recompute(&mut self, lib: &OperatorLibrary) {
        for id in (0..self.nodes.len()).rev() {
            self.nodes[id].status = self.derived_status(id, lib);
        }
    }

    /// Structural checks: parent links, leaf shape and derived statuses.
    pub fn check(&self, lib: &OperatorLibrary) -> Result<(), String> {
        if self.nodes.is_empty() || self.nodes[0].parent.is_some() {
            return Err("missing root".into());
        }
        for (id, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                if c <= id || self.nodes.get(c).and_then(|c| c.parent) != Some(id) {
                    return Err(format!("node {id} has a bad child link {c}"));
                }
            }
            if n.is_leaf() && !n.children.is_empty() {
                return Err(format!("leaf {id} has children"));
            }
            if n.turn.is_some() && !n.is_leaf() {
                return Err(format!("inner node {id} is bound to a turn"));
            }
            if matches!(n.kind, NodeKind::Act) && !n.is_leaf() {
                return Err(format!("act node {id} has no act"));
            }
            if matches!(n.kind, NodeKind::Goal(_)) && n.op.is_none() {
                return Err(format!("goal node {id} has no operator"));
            }
            if n.is_virtual() && n.status != NodeStatus::Repaired {
                return Err(format!("virtual leaf {id} is not marked repaired"));
            }
            let derived = self.derived_status(id, lib);
            if derived != n.status {
                return Err(format!(
                    "node {id} is {} but derives {}",
                    n.status.as_str(),
                    derived.as_str()
                ));
            }
        }
        if self.preorder().len() != self.nodes.len() {
            return Err("unreachable nodes".into());
        }
        Ok(())
    }

    fn line(&self, id: NodeId) -> String {
        let n = &self.nodes[id];
        let mut s = match &n.kind {
            NodeKind::Goal(g) => g.clone(),
            NodeKind::Iterate(g) => format!("iterate [{g}]"),
            NodeKind::Digression(k) => format!("digression:{}", k.as_str()),
            NodeKind::Act => String::new(),
        };
        if let Some(a) = &n.act {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(a.as_str());
        }
        s.push(' ');
        s.push_str(n.status.as_str());
        if n.is_leaf() {
            match &n.turn {
                Some(t) => {
                    let _ = write!(s, " @{t}");
                }
                None => s.push_str(" (virtual)"),
            }
        }
        s
    }

    /// Indented dump, two spaces per level, one node per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((id, depth)) = stack.pop() {
            let _ = writeln!(out, "{}{}", "  ".repeat(depth), self.line(id));
            for &c in self.nodes[id].children.iter().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }
}
