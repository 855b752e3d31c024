//! One dialogue run through all three layers.

use std::sync::Arc;

use crate::corpus::Turn;
use crate::memory::DialogueMemory;
use crate::model::{DialogueModel, ModelError};
use crate::planner::{OperatorLibrary, Planner, RepairDecision};
use crate::predictor::LanguageModel;
use crate::tracker::{EventKind, TrackerEvent, TrackerState};

#[derive(Debug, Clone)]
pub struct TurnOutcome {
    /// Events logged for the turn; two when the act was inconsistent.
    pub events: Vec<TrackerEvent>,
    pub repair: Option<RepairDecision>,
}

#[derive(Debug, Clone)]
pub struct Session {
    model: DialogueModel,
    predictor: Option<Arc<LanguageModel>>,
    tracker: TrackerState,
    planner: Planner,
    memory: DialogueMemory,
}

impl Session {
    pub fn new(
        model: &DialogueModel,
        library: Arc<OperatorLibrary>,
        predictor: Option<Arc<LanguageModel>>,
    ) -> Result<Self, ModelError> {
        if let Some(p) = &predictor {
            if p.inventory().acts() != model.inventory.acts() {
                return Err(ModelError::Invalid(
                    "predictor was trained over a different act inventory".into(),
                ));
            }
        }
        if library.inventory().acts() != model.inventory.acts() {
            return Err(ModelError::Invalid(
                "operator library was loaded against a different act inventory".into(),
            ));
        }
        Ok(Session {
            model: model.clone(),
            tracker: TrackerState::start(model.machine.clone(), model.inventory.clone()),
            planner: Planner::new(library),
            memory: DialogueMemory::new(),
            predictor,
        })
    }

    pub fn process(&mut self, turn: &Turn) -> Result<TurnOutcome, ModelError> {
        let act = self.model.inventory.require(turn.act.as_str())?;
        let before = self.tracker.log().len();
        let predictor = self.predictor.as_deref();
        let event = self.tracker.step(act, predictor);
        let repair = self
            .planner
            .advance(turn, act, event.kind, &mut self.memory, predictor);
        Ok(TurnOutcome {
            events: self.tracker.log()[before..].to_vec(),
            repair,
        })
    }

    pub fn model(&self) -> &DialogueModel {
        &self.model
    }

    pub fn tracker(&self) -> &TrackerState {
        &self.tracker
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn memory(&self) -> &DialogueMemory {
        &self.memory
    }

    pub fn inconsistencies(&self) -> usize {
        self.tracker
            .log()
            .iter()
            .filter(|e| e.kind == EventKind::Inconsistency)
            .count()
    }

    pub fn repairs(&self) -> usize {
        self.planner.repairs().len()
    }

    pub fn memory_dump(&self) -> String {
        self.memory.dump(self.planner.tree())
    }

    /// Plan tree and memory invariants.
    pub fn check(&self) -> Result<(), String> {
        self.planner.check()?;
        self.memory.check_invariants()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_corpus;
    use crate::memory::{QueryResult, Selector, ThemeStatus};

    fn session(model: &DialogueModel) -> Session {
        let lib = Arc::new(OperatorLibrary::default_library(model.inventory.clone()));
        Session::new(model, lib, None).unwrap()
    }

    #[test]
    fn tiny_corpus_d2_memory() {
        let model = DialogueModel::default_model();
        let corpus = read_corpus(include_str!("../data/fixtures/tiny.corpus"), &model.inventory).unwrap();
        let mut s = session(&model);
        for t in &corpus.dialogue("D2").unwrap().turns {
            s.process(t).unwrap();
        }
        assert_eq!(s.inconsistencies(), 0);
        assert_eq!(s.repairs(), 0);
        let statuses: Vec<ThemeStatus> = s.memory().thematic().iter().map(|r| r.status).collect();
        assert_eq!(statuses, [ThemeStatus::Rejected, ThemeStatus::Confirmed]);
        match s.memory().query(Selector::LatestAccepted) {
            QueryResult::Record(Some((1, _))) => {}
            other => panic!("{other:?}"),
        }
        s.check().unwrap();
    }

    #[test]
    fn unknown_act_is_an_error() {
        let model = DialogueModel::default_model();
        let mut s = session(&model);
        assert!(s.process(&Turn::new("X", "1", "A", "FROBNICATE")).is_err());
        assert!(s.tracker().history().is_empty());
    }

    #[test]
    fn inconsistent_turn_reports_both_events() {
        let model = DialogueModel::default_model();
        let mut s = session(&model);
        let out = s.process(&Turn::new("X", "1", "A", "AKZEPTANZ")).unwrap();
        let kinds: Vec<EventKind> = out.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [EventKind::Inconsistency, EventKind::FallbackApplied]);
        assert!(out.repair.is_some());
    }
}
