//! Evidence corpus for the AI respondent: cutoff dates, source admission
//! and item prompts that name only admitted sources.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Item, ItemId, PanelistId, Timestamp};
use crate::workflow::WorkflowState;

/// Months subtracted from the publication date when the convening date is unknown.
pub const PUBLICATION_LAG_MONTHS: u32 = 9;

/// Parses `YYYY-MM-DD` or month-precision `YYYY-MM` (read as the first of the month).
pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let t = text.trim();
    NaiveDate::parse_from_str(t, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDate::parse_from_str(&format!("{t}-01"), "%Y-%m-%d").ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyDesign {
    PanelBased,
    SystematicReview,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub design: StudyDesign,
    #[serde(default)]
    pub convening_date: Option<NaiveDate>,
    #[serde(default)]
    pub publication_date: Option<NaiveDate>,
}

/// Latest admissible evidence date for a study.
///
/// Panel-based studies use the convening date, falling back to nine months
/// before publication. Systematic reviews use the publication date.
pub fn resolve_cutoff(meta: &StudyMeta) -> Result<NaiveDate> {
    match meta.design {
        StudyDesign::PanelBased => match (meta.convening_date, meta.publication_date) {
            (Some(convened), _) => Ok(convened),
            (None, Some(published)) => published
                .checked_sub_months(Months::new(PUBLICATION_LAG_MONTHS))
                .ok_or(Error::CutoffUnresolvable),
            (None, None) => Err(Error::CutoffUnresolvable),
        },
        StudyDesign::SystematicReview => meta
            .publication_date
            .or(meta.convening_date)
            .ok_or(Error::CutoffUnresolvable),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceCategory {
    OpenAccessLiterature,
    PublicGuideline,
    AgencyReport,
    VettedWebsite,
    GreyLiterature,
    CommercialTextbook,
    SocialMedia,
    Forum,
    PersonalBlog,
}

impl SourceCategory {
    /// Categories that need a facilitator vetting approval before admission.
    pub fn needs_vetting(self) -> bool {
        matches!(self, SourceCategory::VettedWebsite | SourceCategory::GreyLiterature)
    }

    fn exclusion(self) -> Option<ExclusionFlag> {
        match self {
            SourceCategory::CommercialTextbook => Some(ExclusionFlag::CommercialTextbook),
            SourceCategory::SocialMedia => Some(ExclusionFlag::SocialMedia),
            SourceCategory::Forum => Some(ExclusionFlag::Forum),
            SourceCategory::PersonalBlog => Some(ExclusionFlag::PersonalBlog),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionFlag {
    Paywalled,
    CommercialTextbook,
    SocialMedia,
    Forum,
    PersonalBlog,
}

impl ExclusionFlag {
    pub const ALL: [ExclusionFlag; 5] = [
        ExclusionFlag::Paywalled,
        ExclusionFlag::CommercialTextbook,
        ExclusionFlag::SocialMedia,
        ExclusionFlag::Forum,
        ExclusionFlag::PersonalBlog,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Public,
    Restricted,
}

/// Evidence level, 1 highest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrustLevel(u8);

impl TrustLevel {
    pub fn new(level: u8) -> Option<Self> {
        (1..=4).contains(&level).then_some(Self(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub title: String,
    pub category: SourceCategory,
    /// Kept as text so a malformed date surfaces as a record error at admission.
    pub publication_date: String,
    pub access: Access,
    pub trust_level: u8,
    #[serde(default)]
    pub vetting_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VettingApproval {
    pub source_id: String,
    pub approved_by: PanelistId,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmittedSource {
    pub title: String,
    pub category: SourceCategory,
    pub trust_level: TrustLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub cutoff_date: NaiveDate,
    pub categories: BTreeSet<SourceCategory>,
    pub exclusions: BTreeSet<ExclusionFlag>,
    #[serde(default)]
    pub vetting: Vec<VettingApproval>,
    /// Admitted sources keyed by id, with their trust levels.
    #[serde(default)]
    pub admitted: BTreeMap<String, AdmittedSource>,
}

impl CorpusSpec {
    /// Open-access literature, public guidelines, agency reports and vetted
    /// websites or grey literature; every exclusion flag set.
    pub fn new(cutoff_date: NaiveDate) -> Self {
        Self {
            cutoff_date,
            categories: BTreeSet::from([
                SourceCategory::OpenAccessLiterature,
                SourceCategory::PublicGuideline,
                SourceCategory::AgencyReport,
                SourceCategory::VettedWebsite,
                SourceCategory::GreyLiterature,
            ]),
            exclusions: ExclusionFlag::ALL.into_iter().collect(),
            vetting: Vec::new(),
            admitted: BTreeMap::new(),
        }
    }

    pub fn is_vetted(&self, source_id: &str) -> bool {
        self.vetting.iter().any(|v| v.source_id == source_id)
    }

    pub fn trust_levels(&self) -> BTreeMap<&str, TrustLevel> {
        self.admitted.iter().map(|(id, s)| (id.as_str(), s.trust_level)).collect()
    }

    /// Decides every source and records the admitted ones. Decisions do not
    /// depend on list order.
    pub fn admit_all(&mut self, sources: &[SourceRecord]) -> Result<Vec<AdmissionDecision>> {
        let mut ids = BTreeSet::new();
        for s in sources {
            if !ids.insert(&s.id) {
                return Err(Error::InvalidSourceRecord(format!("duplicate source id {}", s.id)));
            }
        }
        let decisions = sources
            .iter()
            .map(|s| admit_source(self, s).map(|d| (s, d)))
            .collect::<Result<Vec<_>>>()?;
        for (source, decision) in &decisions {
            match decision {
                Admission::Admitted { trust_level } => {
                    self.admitted.insert(
                        source.id.clone(),
                        AdmittedSource {
                            title: source.title.clone(),
                            category: source.category,
                            trust_level: *trust_level,
                        },
                    );
                }
                Admission::Rejected(_) => {
                    self.admitted.remove(&source.id);
                }
            }
        }
        Ok(decisions
            .into_iter()
            .map(|(s, admission)| AdmissionDecision {
                source_id: s.id.clone(),
                admission,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    PostCutoff,
    ExcludedAccessClass,
    ExcludedCategory,
    CategoryNotAdmitted,
    UnvettedGreyLiterature,
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectionReason::PostCutoff => "post-cutoff",
            RejectionReason::ExcludedAccessClass => "excluded access class",
            RejectionReason::ExcludedCategory => "excluded category",
            RejectionReason::CategoryNotAdmitted => "category not admitted",
            RejectionReason::UnvettedGreyLiterature => "unvetted grey literature",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Admission {
    Admitted { trust_level: TrustLevel },
    Rejected(RejectionReason),
}

impl Admission {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Admission::Admitted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub source_id: String,
    pub admission: Admission,
}

pub fn admit_source(spec: &CorpusSpec, source: &SourceRecord) -> Result<Admission> {
    let published = parse_date(&source.publication_date).ok_or_else(|| {
        Error::InvalidSourceRecord(format!("{}: bad publication date {:?}", source.id, source.publication_date))
    })?;
    let trust_level = TrustLevel::new(source.trust_level)
        .ok_or_else(|| Error::InvalidSourceRecord(format!("{}: trust level must be 1-4", source.id)))?;
    if source.category == SourceCategory::VettedWebsite
        && source.vetting_note.as_deref().is_none_or(|n| n.trim().is_empty())
    {
        return Err(Error::InvalidSourceRecord(format!("{}: vetted website without vetting note", source.id)));
    }

    let decision = if source.category.exclusion().is_some_and(|f| spec.exclusions.contains(&f)) {
        Admission::Rejected(RejectionReason::ExcludedCategory)
    } else if source.access == Access::Restricted {
        Admission::Rejected(RejectionReason::ExcludedAccessClass)
    } else if !spec.categories.contains(&source.category) {
        Admission::Rejected(RejectionReason::CategoryNotAdmitted)
    } else if published > spec.cutoff_date {
        Admission::Rejected(RejectionReason::PostCutoff)
    } else if source.category.needs_vetting() && !spec.is_vetted(&source.id) {
        Admission::Rejected(RejectionReason::UnvettedGreyLiterature)
    } else {
        Admission::Admitted { trust_level }
    };
    Ok(decision)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResponseFormat {
    Likert,
    Binary,
    Prioritisation { options: Vec<String> },
}

impl ResponseFormat {
    fn tag(&self) -> &'static str {
        match self {
            ResponseFormat::Likert => "likert-5",
            ResponseFormat::Binary => "binary",
            ResponseFormat::Prioritisation { .. } => "prioritisation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub item_id: ItemId,
    pub format: ResponseFormat,
    pub admitted_sources: Vec<String>,
    pub cutoff_date: NaiveDate,
    pub text: String,
}

pub const PROMPT_PROTOCOL: &str = "delphi-ai/1";

/// Deterministic prompt for one item. Only admitted sources appear.
pub fn build_prompt(
    item: &Item,
    spec: &CorpusSpec,
    format: &ResponseFormat,
    state: WorkflowState,
) -> Result<PromptDocument> {
    if state == WorkflowState::Draft {
        return Err(Error::ItemNotFinalized);
    }
    let mut t = String::new();
    t.push_str(&format!("PROTOCOL {PROMPT_PROTOCOL}\n"));
    t.push_str(&format!("ITEM {}\n", item.id));
    t.push_str(&format!("STATEMENT: {}\n", item.statement));
    t.push_str(&format!("FORMAT: {}\n\n", format.tag()));
    t.push_str("TASK:\n");
    match format {
        ResponseFormat::Likert => t.push_str(
            "Rate the statement on a 5-point Likert scale \
             (1 = strongly disagree, 2 = disagree, 3 = neutral, 4 = agree, 5 = strongly agree).\n",
        ),
        ResponseFormat::Binary => t.push_str("Answer yes or no: should the statement be endorsed?\n"),
        ResponseFormat::Prioritisation { options } => {
            t.push_str("Rank every option below from highest to lowest priority.\n");
            for o in options {
                t.push_str(&format!("- {o}\n"));
            }
        }
    }
    t.push_str("\nCORPUS CONSTRAINTS:\n");
    t.push_str("- Use only the admitted sources listed below and cite them by id.\n");
    t.push_str(&format!("- Do not use evidence published after {}.\n", spec.cutoff_date));
    t.push_str("- Do not use non-public material: paywalled articles, commercial textbooks, social media, forums, personal blogs.\n");
    t.push_str("- Prefer higher trust levels (1 is highest) and state the strength of the evidence.\n");
    t.push_str("\nADMITTED SOURCES:\n");
    let mut by_level: Vec<(&String, &AdmittedSource)> = spec.admitted.iter().collect();
    by_level.sort_by(|a, b| a.1.trust_level.cmp(&b.1.trust_level).then(a.0.cmp(b.0)));
    if by_level.is_empty() {
        t.push_str("(none)\n");
    }
    for (id, s) in &by_level {
        t.push_str(&format!("- [{id}] level {} :: {}\n", s.trust_level.get(), s.title));
    }
    t.push_str("\nOUTPUT CONTRACT (reply with exactly these fields):\n");
    match format {
        ResponseFormat::Likert => t.push_str("RATING: <integer 1-5>\n"),
        ResponseFormat::Binary => t.push_str("ANSWER: <yes|no>\n"),
        ResponseFormat::Prioritisation { .. } => t.push_str("RANKING: <all options, highest priority first, separated by ';'>\n"),
    }
    t.push_str("JUSTIFICATION: <required written justification>\n");
    t.push_str("SOURCES: <comma-separated ids of cited admitted sources>\n");

    Ok(PromptDocument {
        item_id: item.id.clone(),
        format: format.clone(),
        admitted_sources: by_level.iter().map(|(id, _)| (*id).clone()).collect(),
        cutoff_date: spec.cutoff_date,
        text: t,
    })
}
