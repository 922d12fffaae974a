//! Study structure: sections, items, panel, responses and reasoning codes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adapter::ProvenanceLog;
use crate::alignment::AlignmentRecord;
use crate::coding::CodingRecord;
use crate::consensus::{CompatibilityAnnotation, ConsensusClassification};
use crate::corpus::CorpusSpec;
use crate::workflow::WorkflowState;
use crate::Fraction;

pub const SCHEMA_VERSION: &str = "1";

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(StudyId);
id_type!(SectionId);
id_type!(ItemId);
id_type!(
    /// Panelist identifier, also used for facilitators acting as coders.
    PanelistId
);

/// ISO-8601 UTC text.
pub type Timestamp = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThematicSection {
    pub id: SectionId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Fixed,
    OtherSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemOrigin {
    APriori,
    ParticipantProposed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub section_id: SectionId,
    pub statement: String,
    pub kind: ItemKind,
    pub origin: ItemOrigin,
}

impl Item {
    pub fn fixed(id: impl Into<String>, section: impl Into<String>, statement: impl Into<String>) -> Self {
        Self {
            id: ItemId::new(id),
            section_id: SectionId::new(section),
            statement: statement.into(),
            kind: ItemKind::Fixed,
            origin: ItemOrigin::APriori,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelRole {
    SeniorExpert,
    LessExperienced,
    AiRespondent,
}

impl PanelRole {
    pub const ALL: [PanelRole; 3] = [
        PanelRole::SeniorExpert,
        PanelRole::LessExperienced,
        PanelRole::AiRespondent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PanelRole::SeniorExpert => "senior_expert",
            PanelRole::LessExperienced => "less_experienced",
            PanelRole::AiRespondent => "ai_respondent",
        }
    }
}

impl fmt::Display for PanelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panelist {
    pub id: PanelistId,
    pub role: PanelRole,
    pub label: String,
}

impl Panelist {
    pub fn new(id: impl Into<String>, role: PanelRole) -> Self {
        let id = id.into();
        Self {
            label: id.clone(),
            id: PanelistId(id),
            role,
        }
    }
}

/// The seven justification types used for multi-label coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningCategory {
    ConditionalGeneral,
    ConditionalPopulation,
    ConditionalTemporal,
    EvidenceBased,
    Experiential,
    Pragmatic,
    PrincipleBased,
}

impl ReasoningCategory {
    pub const ALL: [ReasoningCategory; 7] = [
        ReasoningCategory::ConditionalGeneral,
        ReasoningCategory::ConditionalPopulation,
        ReasoningCategory::ConditionalTemporal,
        ReasoningCategory::EvidenceBased,
        ReasoningCategory::Experiential,
        ReasoningCategory::Pragmatic,
        ReasoningCategory::PrincipleBased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningCategory::ConditionalGeneral => "conditional_general",
            ReasoningCategory::ConditionalPopulation => "conditional_population",
            ReasoningCategory::ConditionalTemporal => "conditional_temporal",
            ReasoningCategory::EvidenceBased => "evidence_based",
            ReasoningCategory::Experiential => "experiential",
            ReasoningCategory::Pragmatic => "pragmatic",
            ReasoningCategory::PrincipleBased => "principle_based",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ReasoningCategory::ConditionalGeneral => "Conditional (General)",
            ReasoningCategory::ConditionalPopulation => "Conditional (Population-Based)",
            ReasoningCategory::ConditionalTemporal => "Conditional (Temporal/Phased)",
            ReasoningCategory::EvidenceBased => "Evidence-Based",
            ReasoningCategory::Experiential => "Experiential",
            ReasoningCategory::Pragmatic => "Pragmatic",
            ReasoningCategory::PrincipleBased => "Principle-Based",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ReasoningCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReasoningCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReasoningCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| format!("unknown reasoning category {s:?}"))
    }
}

/// Subset of the seven reasoning categories, stored as a bitmask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReasoningCodeSet(u8);

impl ReasoningCodeSet {
    pub const EMPTY: ReasoningCodeSet = ReasoningCodeSet(0);
    pub const UNIVERSE: ReasoningCodeSet = ReasoningCodeSet(0b111_1111);

    pub fn new() -> Self {
        Self::EMPTY
    }

    pub fn from_bits(bits: u8) -> Self {
        Self(bits & Self::UNIVERSE.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, category: ReasoningCategory) {
        self.0 |= category.bit();
    }

    pub fn with(mut self, category: ReasoningCategory) -> Self {
        self.insert(category);
        self
    }

    pub fn contains(self, category: ReasoningCategory) -> bool {
        self.0 & category.bit() != 0
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ReasoningCategory> {
        ReasoningCategory::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    /// `;`-separated category names, the CSV cell encoding.
    pub fn to_cell(self) -> String {
        self.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(";")
    }

    pub fn parse_cell(cell: &str) -> Result<Self, String> {
        cell.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse::<ReasoningCategory>)
            .collect()
    }
}

impl FromIterator<ReasoningCategory> for ReasoningCodeSet {
    fn from_iter<T: IntoIterator<Item = ReasoningCategory>>(iter: T) -> Self {
        let mut set = Self::EMPTY;
        for c in iter {
            set.insert(c);
        }
        set
    }
}

impl Serialize for ReasoningCodeSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ReasoningCodeSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let cats = Vec::<ReasoningCategory>::deserialize(deserializer)?;
        Ok(cats.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationExchange {
    pub question: String,
    #[serde(default)]
    pub answer: Option<String>,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answered_at: Option<Timestamp>,
}

impl ClarificationExchange {
    pub fn is_open(&self) -> bool {
        self.answer.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub item_id: ItemId,
    pub panelist_id: PanelistId,
    /// Raw Likert value; out-of-range values are kept so validation can name them.
    pub rating: u8,
    pub justification: String,
    #[serde(default)]
    pub codes: ReasoningCodeSet,
    #[serde(default)]
    pub novelty_flag: bool,
    #[serde(default)]
    pub clarification_thread: Vec<ClarificationExchange>,
}

impl Response {
    pub fn new(
        item: impl Into<String>,
        panelist: impl Into<String>,
        rating: u8,
        justification: impl Into<String>,
    ) -> Self {
        Self {
            item_id: ItemId::new(item),
            panelist_id: PanelistId::new(panelist),
            rating,
            justification: justification.into(),
            codes: ReasoningCodeSet::EMPTY,
            novelty_flag: false,
            clarification_thread: Vec::new(),
        }
    }

    pub fn key(&self) -> ResponseKey {
        ResponseKey {
            item_id: self.item_id.clone(),
            panelist_id: self.panelist_id.clone(),
        }
    }

    pub fn is_coded(&self) -> bool {
        !self.codes.is_empty()
    }
}

/// A response is addressed by its (item, panelist) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResponseKey {
    pub item_id: ItemId,
    pub panelist_id: PanelistId,
}

impl ResponseKey {
    pub fn new(item: impl Into<String>, panelist: impl Into<String>) -> Self {
        Self {
            item_id: ItemId::new(item),
            panelist_id: PanelistId::new(panelist),
        }
    }

    /// `item:panelist`, the `response_id` used in CSV exports.
    pub fn to_response_id(&self) -> String {
        format!("{}:{}", self.item_id, self.panelist_id)
    }

    pub fn parse_response_id(id: &str) -> Option<Self> {
        let (item, panelist) = id.split_once(':')?;
        if item.is_empty() || panelist.is_empty() {
            return None;
        }
        Some(Self::new(item, panelist))
    }
}

impl fmt::Display for ResponseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_response_id())
    }
}

/// Tunables with engine defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Minimum responses for an item to be classified.
    pub quorum: usize,
    pub max_ai_respondents: usize,
    /// Jaccard overlap at or above which a band-concordant AI response is fully aligned.
    #[serde(with = "crate::fraction::text")]
    pub alignment_threshold: Fraction,
    /// Roles whose ratings decide consensus tiers.
    pub consensus_roles: BTreeSet<PanelRole>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            quorum: 4,
            max_ai_respondents: 1,
            alignment_threshold: Fraction::new(1, 2),
            consensus_roles: BTreeSet::from([PanelRole::SeniorExpert]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub schema_version: String,
    pub id: StudyId,
    pub title: String,
    pub sections: Vec<ThematicSection>,
    pub items: Vec<Item>,
    pub panel: Vec<Panelist>,
    #[serde(default)]
    pub round_state: WorkflowState,
    #[serde(default)]
    pub corpus: Option<CorpusSpec>,
    #[serde(default)]
    pub config: StudyConfig,
    #[serde(default)]
    pub responses: Vec<Response>,
    /// Facilitator compatibility annotations awaiting or used by classification.
    #[serde(default)]
    pub annotations: BTreeMap<ItemId, CompatibilityAnnotation>,
    #[serde(default)]
    pub classifications: BTreeMap<ItemId, ConsensusClassification>,
    #[serde(default)]
    pub coding_log: Vec<CodingRecord>,
    #[serde(default)]
    pub alignments: BTreeMap<ItemId, AlignmentRecord>,
    /// Exchange logs behind every ingested AI answer.
    #[serde(default)]
    pub ai_provenance: Vec<ProvenanceLog>,
    /// Refused AI exchanges, kept for audit and never ingested.
    #[serde(default)]
    pub quarantine: Vec<ProvenanceLog>,
}

impl Study {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            id: StudyId::new(id),
            title: title.into(),
            sections: Vec::new(),
            items: Vec::new(),
            panel: Vec::new(),
            round_state: WorkflowState::Draft,
            corpus: None,
            config: StudyConfig::default(),
            responses: Vec::new(),
            annotations: BTreeMap::new(),
            classifications: BTreeMap::new(),
            coding_log: Vec::new(),
            alignments: BTreeMap::new(),
            ai_provenance: Vec::new(),
            quarantine: Vec::new(),
        }
    }

    pub fn item(&self, id: &ItemId) -> Option<&Item> {
        self.items.iter().find(|i| &i.id == id)
    }

    pub fn section(&self, id: &SectionId) -> Option<&ThematicSection> {
        self.sections.iter().find(|s| &s.id == id)
    }

    pub fn panelist(&self, id: &PanelistId) -> Option<&Panelist> {
        self.panel.iter().find(|p| &p.id == id)
    }

    pub fn role_of(&self, id: &PanelistId) -> Option<PanelRole> {
        self.panelist(id).map(|p| p.role)
    }

    pub fn members(&self, role: PanelRole) -> impl Iterator<Item = &Panelist> {
        self.panel.iter().filter(move |p| p.role == role)
    }

    pub fn response(&self, key: &ResponseKey) -> Option<&Response> {
        self.responses
            .iter()
            .find(|r| r.item_id == key.item_id && r.panelist_id == key.panelist_id)
    }

    pub fn response_mut(&mut self, key: &ResponseKey) -> Option<&mut Response> {
        self.responses
            .iter_mut()
            .find(|r| r.item_id == key.item_id && r.panelist_id == key.panelist_id)
    }

    pub fn responses_for_item(&self, item: &ItemId) -> impl Iterator<Item = &Response> {
        let item = item.clone();
        self.responses.iter().filter(move |r| r.item_id == item)
    }

    pub fn responses_by_role(&self, role: PanelRole) -> impl Iterator<Item = &Response> {
        self.responses
            .iter()
            .filter(move |r| self.role_of(&r.panelist_id) == Some(role))
    }

    /// Responses that count toward the consensus decision for an item.
    pub fn consensus_responses(&self, item: &ItemId) -> Vec<&Response> {
        self.responses_for_item(item)
            .filter(|r| {
                self.role_of(&r.panelist_id)
                    .is_some_and(|role| self.config.consensus_roles.contains(&role))
            })
            .collect()
    }

    /// Items carrying at least `quorum` consensus-role responses, in questionnaire order.
    pub fn quorate_items(&self) -> Vec<&Item> {
        self.items
            .iter()
            .filter(|i| self.consensus_responses(&i.id).len() >= self.config.quorum)
            .collect()
    }

    pub fn ai_respondent(&self) -> Option<&Panelist> {
        self.members(PanelRole::AiRespondent).next()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateSectionId,
    DuplicateItemId,
    DuplicatePanelistId,
    EmptySectionName,
    OrphanSection,
    FixedItemParticipantProposed,
    TooManyAiRespondents,
    UnknownItem,
    UnknownPanelist,
    DuplicateResponse,
    RatingOutOfRange,
    MissingJustification,
    EmptyQuestion,
}

impl ViolationKind {
    pub fn describe(self) -> &'static str {
        match self {
            ViolationKind::DuplicateSectionId => "duplicate section id",
            ViolationKind::DuplicateItemId => "duplicate item id",
            ViolationKind::DuplicatePanelistId => "duplicate panelist id",
            ViolationKind::EmptySectionName => "empty section name",
            ViolationKind::OrphanSection => "orphan section",
            ViolationKind::FixedItemParticipantProposed => "participant-proposed fixed item",
            ViolationKind::TooManyAiRespondents => "too many AI respondents",
            ViolationKind::UnknownItem => "unknown item",
            ViolationKind::UnknownPanelist => "unknown panelist",
            ViolationKind::DuplicateResponse => "duplicate response",
            ViolationKind::RatingOutOfRange => "rating out of range",
            ViolationKind::MissingJustification => "missing justification",
            ViolationKind::EmptyQuestion => "empty question",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending entity id (section, item, panelist or `item:panelist`).
    pub entity: String,
    pub message: String,
    /// Row reference within an ingested document, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
}

impl Violation {
    pub fn new(kind: ViolationKind, entity: impl Into<String>) -> Self {
        Self {
            kind,
            entity: entity.into(),
            message: kind.describe().to_owned(),
            row: None,
        }
    }

    pub fn at_row(mut self, row: usize) -> Self {
        self.row = Some(row);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn push(&mut self, violation: Violation) {
        if !self.violations.contains(&violation) {
            self.violations.push(violation);
        }
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Lists every structural invariant violation in `study`. Never fails.
pub fn validate_study(study: &Study) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for section in &study.sections {
        if !seen.insert(&section.id) {
            report.push(Violation::new(ViolationKind::DuplicateSectionId, section.id.as_str()));
        }
        if section.name.trim().is_empty() {
            report.push(Violation::new(ViolationKind::EmptySectionName, section.id.as_str()));
        }
    }
    let section_ids = seen;

    let mut item_ids = BTreeSet::new();
    for item in &study.items {
        if !item_ids.insert(&item.id) {
            report.push(Violation::new(ViolationKind::DuplicateItemId, item.id.as_str()));
        }
        if !section_ids.contains(&item.section_id) {
            report.push(Violation::new(ViolationKind::OrphanSection, item.id.as_str()));
        }
        if item.kind == ItemKind::Fixed && item.origin == ItemOrigin::ParticipantProposed {
            report.push(Violation::new(
                ViolationKind::FixedItemParticipantProposed,
                item.id.as_str(),
            ));
        }
    }

    let mut panelist_ids = BTreeSet::new();
    for p in &study.panel {
        if !panelist_ids.insert(&p.id) {
            report.push(Violation::new(ViolationKind::DuplicatePanelistId, p.id.as_str()));
        }
    }
    let ai_count = study.members(PanelRole::AiRespondent).count();
    if ai_count > study.config.max_ai_respondents {
        for p in study.members(PanelRole::AiRespondent).skip(study.config.max_ai_respondents) {
            report.push(Violation::new(ViolationKind::TooManyAiRespondents, p.id.as_str()));
        }
    }

    let mut keys = BTreeSet::new();
    for r in &study.responses {
        let key = r.key();
        let entity = key.to_response_id();
        if !item_ids.contains(&r.item_id) {
            report.push(Violation::new(ViolationKind::UnknownItem, entity.clone()));
        }
        if !panelist_ids.contains(&r.panelist_id) {
            report.push(Violation::new(ViolationKind::UnknownPanelist, entity.clone()));
        }
        if !keys.insert(key) {
            report.push(Violation::new(ViolationKind::DuplicateResponse, entity.clone()));
        }
        if !(1..=5).contains(&r.rating) {
            report.push(Violation::new(ViolationKind::RatingOutOfRange, entity.clone()));
        }
        if r.justification.trim().is_empty() {
            report.push(Violation::new(ViolationKind::MissingJustification, entity.clone()));
        }
        if r.clarification_thread.iter().any(|c| c.question.trim().is_empty()) {
            report.push(Violation::new(ViolationKind::EmptyQuestion, entity));
        }
    }

    report
}
