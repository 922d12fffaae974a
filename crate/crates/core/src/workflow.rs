//! Single-round workflow: draft -> items_finalized -> collecting ->
//! clarifying <-> adjudicating -> classified -> reported.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowState {
    #[default]
    Draft,
    ItemsFinalized,
    Collecting,
    Clarifying,
    Adjudicating,
    Classified,
    Reported,
}

impl WorkflowState {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkflowState::Draft => "draft",
            WorkflowState::ItemsFinalized => "items_finalized",
            WorkflowState::Collecting => "collecting",
            WorkflowState::Clarifying => "clarifying",
            WorkflowState::Adjudicating => "adjudicating",
            WorkflowState::Classified => "classified",
            WorkflowState::Reported => "reported",
        }
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowEvent {
    FinalizeItems,
    OpenCollection,
    CloseCollection,
    BeginAdjudication,
    ResumeClarification,
    CompleteClassification,
    EmitReport,
}

impl WorkflowEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkflowEvent::FinalizeItems => "finalize_items",
            WorkflowEvent::OpenCollection => "open_collection",
            WorkflowEvent::CloseCollection => "close_collection",
            WorkflowEvent::BeginAdjudication => "begin_adjudication",
            WorkflowEvent::ResumeClarification => "resume_clarification",
            WorkflowEvent::CompleteClassification => "complete_classification",
            WorkflowEvent::EmitReport => "emit_report",
        }
    }
}

impl fmt::Display for WorkflowEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pure transition table. Guards that need the study (classification
/// completeness) live in the orchestrator.
pub fn transition(state: WorkflowState, event: WorkflowEvent) -> Result<WorkflowState> {
    use WorkflowEvent as E;
    use WorkflowState as S;
    let next = match (state, event) {
        (S::Draft, E::FinalizeItems) => S::ItemsFinalized,
        (S::ItemsFinalized, E::OpenCollection) => S::Collecting,
        (S::Collecting, E::CloseCollection) => S::Clarifying,
        (S::Clarifying, E::BeginAdjudication) => S::Adjudicating,
        (S::Adjudicating, E::ResumeClarification) => S::Clarifying,
        (S::Adjudicating, E::CompleteClassification) => S::Classified,
        (S::Classified, E::EmitReport) | (S::Reported, E::EmitReport) => S::Reported,
        _ => {
            return Err(Error::InvalidTransition {
                state,
                action: event.to_string(),
            })
        }
    };
    Ok(next)
}
