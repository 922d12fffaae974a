//! Consensus engine for hybrid human/AI Delphi studies.

pub mod adapter;
pub mod alignment;
pub mod coding;
pub mod consensus;
pub mod corpus;
pub mod error;
pub mod fraction;
pub mod model;
pub mod report;
pub mod saturation;
pub mod store;
pub mod workflow;

pub use error::{Error, Result};
pub use fraction::Fraction;
pub use model::{
    Item, ItemId, PanelRole, Panelist, PanelistId, ReasoningCategory, ReasoningCodeSet, Response, ResponseKey,
    SectionId, Study, StudyConfig, StudyId, ThematicSection, SCHEMA_VERSION,
};
pub use workflow::{WorkflowEvent, WorkflowState};
pub use store::{AuditEvent, Command, StudyStore};
