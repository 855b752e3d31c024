//! Three-layer dialogue processing for appointment-scheduling dialogues: an
//! interpolated trigram predictor over speech acts, a finite-state tracker,
//! and a plan recognizer that builds the dialogue memory.

pub mod corpus;
pub mod harness;
pub mod memory;
pub mod model;
pub mod planner;
pub mod predictor;
pub mod session;
pub mod source;
pub mod tracker;

pub use corpus::{read_corpus, write_corpus, Corpus, CorpusError, Dialogue, Turn};
pub use memory::{DialogueMemory, QueryResult, Selector, ThematicRecord, ThemeStatus, TopicKind};
pub use model::{
    load_model, write_model, ActClass, ActId, ActInventory, ActLabel, DialogueMachine, DialogueModel, ModelError,
    StateId,
};
pub use planner::{
    load_operators, Annotation, ErrorKind, OperatorLibrary, PlanTree, Planner, PlannerError, RepairDecision,
    Resolution,
};
pub use predictor::{estimate_weights, InterpolationWeights, LanguageModel, NGramTables, PredictorError, ScoredPrediction};
pub use harness::{EvaluationReport, HarnessError, Replay, SetResult};
pub use session::{Session, TurnOutcome};
pub use source::{SourceError, SyntheticSource};
pub use tracker::{EventKind, TrackerEvent, TrackerState};
