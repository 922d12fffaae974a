use thiserror::Error;

use crate::workflow::WorkflowState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every fault the engine can raise. Display strings are part of the API
/// contract: the HTTP layer and CLI surface them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no responses")]
    NoResponses,
    #[error("duplicate response")]
    DuplicateResponse,
    #[error("responses span more than one item")]
    MixedItems,
    #[error("insufficient quorum: {found} responses, {required} required")]
    InsufficientQuorum { found: usize, required: usize },
    #[error("rationale required for basis {0}")]
    MissingRationale(String),
    #[error("illegal reclassification from {from}")]
    IllegalReclassification { from: String },
    #[error("unsupported adjudication: {basis}")]
    UnsupportedAdjudication { basis: String },
    #[error("incomplete classification: {0}")]
    IncompleteClassification(String),
    #[error("empty coding")]
    EmptyCoding,
    #[error("unknown response: {0}")]
    UnknownResponse(String),
    #[error("incomplete coding: {0}")]
    IncompleteCoding(String),
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),
    #[error("panel too large for exhaustive mode: {size} panelists, ceiling {ceiling}")]
    PanelTooLarge { size: usize, ceiling: usize },
    #[error("invalid rating: {0}")]
    InvalidRating(i64),
    #[error("incomplete alignment: {0}")]
    IncompleteAlignment(String),
    #[error("cutoff unresolvable")]
    CutoffUnresolvable,
    #[error("invalid source record: {0}")]
    InvalidSourceRecord(String),
    #[error("item not finalized")]
    ItemNotFinalized,
    #[error("malformed AI response: {0}")]
    MalformedAiResponse(String),
    #[error("corpus violation: cited {0:?} outside the admitted set")]
    CorpusViolation(Vec<String>),
    #[error("invalid transition: {action} not allowed in state {state}")]
    InvalidTransition { state: WorkflowState, action: String },
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("empty question")]
    EmptyQuestion,
    #[error("unknown item: {0}")]
    UnknownItem(String),
    #[error("unknown panelist: {0}")]
    UnknownPanelist(String),
    #[error("not an AI respondent: {0}")]
    NotAiRespondent(String),
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error("adapter failure: {0}")]
    Adapter(String),
    #[error("replay miss: no recorded exchange for prompt {0}")]
    ReplayMiss(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code for API consumers.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NoResponses => "no_responses",
            Error::DuplicateResponse => "duplicate_response",
            Error::MixedItems => "mixed_items",
            Error::InsufficientQuorum { .. } => "insufficient_quorum",
            Error::MissingRationale(_) => "missing_rationale",
            Error::IllegalReclassification { .. } => "illegal_reclassification",
            Error::UnsupportedAdjudication { .. } => "unsupported_adjudication",
            Error::IncompleteClassification(_) => "incomplete_classification",
            Error::EmptyCoding => "empty_coding",
            Error::UnknownResponse(_) => "unknown_response",
            Error::IncompleteCoding(_) => "incomplete_coding",
            Error::InvalidOrdering(_) => "invalid_ordering",
            Error::PanelTooLarge { .. } => "panel_too_large",
            Error::InvalidRating(_) => "invalid_rating",
            Error::IncompleteAlignment(_) => "incomplete_alignment",
            Error::CutoffUnresolvable => "cutoff_unresolvable",
            Error::InvalidSourceRecord(_) => "invalid_source_record",
            Error::ItemNotFinalized => "item_not_finalized",
            Error::MalformedAiResponse(_) => "malformed_ai_response",
            Error::CorpusViolation(_) => "corpus_violation",
            Error::InvalidTransition { .. } => "invalid_transition",
            Error::MalformedDocument(_) => "malformed_document",
            Error::EmptyQuestion => "empty_question",
            Error::UnknownItem(_) => "unknown_item",
            Error::UnknownPanelist(_) => "unknown_panelist",
            Error::NotAiRespondent(_) => "not_ai_respondent",
            Error::InvalidStudy(_) => "invalid_study",
            Error::Adapter(_) => "adapter_failure",
            Error::ReplayMiss(_) => "replay_miss",
            Error::Io(_) => "io",
            Error::Json(_) => "malformed_document",
            Error::Csv(_) => "malformed_document",
        }
    }
}
