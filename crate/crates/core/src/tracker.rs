//! Finite-state validation of the act stream.
//!
//! The tracker keeps one current machine state. Acts that the machine does
//! not admit are logged as an inconsistency and a fallback state is chosen;
//! processing never stops. The event log is how later layers learn about
//! inconsistencies.

use std::fmt;
use std::sync::Arc;

use crate::model::{ActClass, ActId, ActInventory, DialogueMachine, ModelError, StateId};
use crate::predictor::LanguageModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Accepted,
    AnywhereAccepted,
    ClarificationOpened,
    ClarificationClosed,
    Inconsistency,
    FallbackApplied,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Accepted => "accepted",
            EventKind::AnywhereAccepted => "anywhere-accepted",
            EventKind::ClarificationOpened => "clarification-opened",
            EventKind::ClarificationClosed => "clarification-closed",
            EventKind::Inconsistency => "inconsistency",
            EventKind::FallbackApplied => "fallback-applied",
        }
    }

    pub fn signals_inconsistency(&self) -> bool {
        matches!(self, EventKind::Inconsistency | EventKind::FallbackApplied)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerEvent {
    pub kind: EventKind,
    pub act: ActId,
    pub from: StateId,
    pub to: StateId,
}

impl TrackerEvent {
    /// `kind<TAB>act<TAB>from<TAB>to`
    pub fn display<'a>(&'a self, inventory: &'a ActInventory, machine: &'a DialogueMachine) -> impl fmt::Display + 'a {
        EventLine {
            event: self,
            inventory,
            machine,
        }
    }
}

struct EventLine<'a> {
    event: &'a TrackerEvent,
    inventory: &'a ActInventory,
    machine: &'a DialogueMachine,
}

impl fmt::Display for EventLine<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.event.kind.as_str(),
            self.inventory.label(self.event.act),
            self.machine.state_name(self.event.from),
            self.machine.state_name(self.event.to)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    machine: Arc<DialogueMachine>,
    inventory: Arc<ActInventory>,
    current: StateId,
    /// Saved states of open clarifications with the act that closes each.
    clarifications: Vec<(StateId, ActId)>,
    history: Vec<ActId>,
    log: Vec<TrackerEvent>,
}

impl TrackerState {
    pub fn start(machine: Arc<DialogueMachine>, inventory: Arc<ActInventory>) -> Self {
        TrackerState {
            current: machine.initial(),
            machine,
            inventory,
            clarifications: Vec::new(),
            history: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn current(&self) -> StateId {
        self.current
    }

    pub fn current_name(&self) -> &str {
        self.machine.state_name(self.current)
    }

    pub fn machine(&self) -> &Arc<DialogueMachine> {
        &self.machine
    }

    pub fn clarification_depth(&self) -> usize {
        self.clarifications.len()
    }

    pub fn history(&self) -> &[ActId] {
        &self.history
    }

    pub fn log(&self) -> &[TrackerEvent] {
        &self.log
    }

    pub fn is_complete(&self) -> bool {
        self.machine.is_final(self.current) && self.clarifications.is_empty()
    }

    pub fn step_label(&mut self, act: &str, predictor: Option<&LanguageModel>) -> Result<TrackerEvent, ModelError> {
        let id = self.inventory.require(act)?;
        Ok(self.step(id, predictor))
    }

    /// Consume one act and return its terminal event. An inconsistency logs
    /// two events (inconsistency, fallback-applied); the second is returned.
    pub fn step(&mut self, act: ActId, predictor: Option<&LanguageModel>) -> TrackerEvent {
        let from = self.current;
        let event = |kind, to| TrackerEvent { kind, act, from, to };
        let result = match self.inventory.class(act) {
            ActClass::ClarifyOpen(closer) => {
                self.clarifications.push((from, *closer));
                Some(event(EventKind::ClarificationOpened, from))
            }
            ActClass::ClarifyClose
                if self.clarifications.last().is_some_and(|(_, c)| *c == act) =>
            {
                let (saved, _) = self.clarifications.pop().expect("checked non-empty");
                self.current = saved;
                Some(event(EventKind::ClarificationClosed, saved))
            }
            _ if self.machine.is_anywhere(act) => Some(event(EventKind::AnywhereAccepted, from)),
            _ => self.machine.next(from, act).map(|to| {
                self.current = to;
                event(EventKind::Accepted, to)
            }),
        };
        let terminal = match result {
            Some(e) => e,
            None => {
                self.log.push(event(EventKind::Inconsistency, from));
                let to = self.fallback(act, predictor);
                self.current = to;
                event(EventKind::FallbackApplied, to)
            }
        };
        self.history.push(act);
        self.log.push(terminal);
        terminal
    }

    /// Pick a state after `act` was found inconsistent in the current state.
    ///
    /// Candidates are the states entered by some transition labelled `act`.
    /// A single candidate is taken as is. With several, each is scored by the
    /// predicted probability mass (given the history plus `act`) of the acts
    /// it can continue with; the best wins, ties go to the earliest defined
    /// state. No candidates, or several without a predictor, keep the
    /// current state.
    pub fn fallback(&self, act: ActId, predictor: Option<&LanguageModel>) -> StateId {
        let candidates = self.machine.states_entered_by(act);
        match candidates.as_slice() {
            [] => return self.current,
            [only] => return *only,
            _ => {}
        }
        let Some(model) = predictor else {
            return self.current;
        };
        let mut history = self.history.clone();
        history.push(act);
        let Ok(dist) = model.distribution(&history) else {
            return self.current;
        };
        let mut best = (candidates[0], f64::NEG_INFINITY);
        for state in candidates {
            let score: f64 = self.machine.outgoing(state).map(|a| dist[a.0]).sum();
            if score > best.1 {
                best = (state, score);
            }
        }
        best.0
    }
}
