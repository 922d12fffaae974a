//! Multi-label reasoning codes: facilitator coding records, per-role
//! profiles, and lexicon suggestions that never commit on their own.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    PanelRole, PanelistId, ReasoningCategory, ReasoningCodeSet, Response, ResponseKey, SectionId, Study, Timestamp,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingRecord {
    pub response: ResponseKey,
    pub codes: ReasoningCodeSet,
    pub coder: PanelistId,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Appends a coding record and makes it the response's current codes.
/// Earlier records for the same response stay in the log.
pub fn record_codes(
    study: &mut Study,
    response: &ResponseKey,
    codes: ReasoningCodeSet,
    coder: &PanelistId,
    timestamp: Timestamp,
    note: Option<String>,
) -> Result<CodingRecord> {
    if codes.is_empty() {
        return Err(Error::EmptyCoding);
    }
    let target = study
        .response_mut(response)
        .ok_or_else(|| Error::UnknownResponse(response.to_response_id()))?;
    target.codes = codes;
    let record = CodingRecord {
        response: response.clone(),
        codes,
        coder: coder.clone(),
        timestamp,
        note,
    };
    study.coding_log.push(record.clone());
    Ok(record)
}

/// Latest record per response, in log order of first appearance.
pub fn latest_codes(log: &[CodingRecord]) -> BTreeMap<ResponseKey, &CodingRecord> {
    let mut latest = BTreeMap::new();
    for r in log {
        latest.insert(r.response.clone(), r);
    }
    latest
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "id")]
pub enum ProfileSubject {
    Role(PanelRole),
    Panelist(PanelistId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningProfile {
    pub subject: ProfileSubject,
    pub responses: u64,
    pub presence: BTreeMap<ReasoningCategory, bool>,
    pub frequency: BTreeMap<ReasoningCategory, u64>,
    /// category -> section -> count; each row sums to `frequency[category]`.
    pub by_section: BTreeMap<ReasoningCategory, BTreeMap<SectionId, u64>>,
}

impl ReasoningProfile {
    fn empty(subject: ProfileSubject) -> Self {
        Self {
            subject,
            responses: 0,
            presence: ReasoningCategory::ALL.into_iter().map(|c| (c, false)).collect(),
            frequency: ReasoningCategory::ALL.into_iter().map(|c| (c, 0)).collect(),
            by_section: ReasoningCategory::ALL.into_iter().map(|c| (c, BTreeMap::new())).collect(),
        }
    }

    pub fn present(&self, c: ReasoningCategory) -> bool {
        self.presence[&c]
    }

    pub fn present_set(&self) -> ReasoningCodeSet {
        self.presence.iter().filter(|(_, p)| **p).map(|(c, _)| *c).collect()
    }

    fn add(&mut self, response: &Response, section: &SectionId) {
        self.responses += 1;
        for c in response.codes.iter() {
            *self.frequency.get_mut(&c).expect("all categories seeded") += 1;
            self.presence.insert(c, true);
            *self
                .by_section
                .get_mut(&c)
                .expect("all categories seeded")
                .entry(section.clone())
                .or_default() += 1;
        }
    }
}

pub fn reasoning_profile(study: &Study, subject: &ProfileSubject) -> Result<ReasoningProfile> {
    let mut profile = ReasoningProfile::empty(subject.clone());
    for r in &study.responses {
        let included = match subject {
            ProfileSubject::Role(role) => study.role_of(&r.panelist_id) == Some(*role),
            ProfileSubject::Panelist(id) => &r.panelist_id == id,
        };
        if !included {
            continue;
        }
        if !r.is_coded() {
            return Err(Error::IncompleteCoding(r.key().to_response_id()));
        }
        let item = study
            .item(&r.item_id)
            .ok_or_else(|| Error::UnknownItem(r.item_id.to_string()))?;
        profile.add(r, &item.section_id);
    }
    Ok(profile)
}

/// Term -> category table used for suggestions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub version: String,
    entries: Vec<(Vec<String>, ReasoningCategory)>,
}

const SHIPPED_LEXICON: &str = include_str!("../data/lexicon.txt");

impl Lexicon {
    pub fn shipped() -> Self {
        Self::parse(SHIPPED_LEXICON).expect("shipped lexicon parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = String::from("unversioned");
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, value) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedDocument(format!("lexicon line {}: missing '='", n + 1)))?;
            let (term, value) = (term.trim(), value.trim());
            if term == "lexicon-version" {
                version = value.to_owned();
                continue;
            }
            let category = value
                .parse::<ReasoningCategory>()
                .map_err(|e| Error::MalformedDocument(format!("lexicon line {}: {e}", n + 1)))?;
            let words = tokenize(term);
            if words.is_empty() {
                return Err(Error::MalformedDocument(format!("lexicon line {}: empty term", n + 1)));
            }
            entries.push((words, category));
        }
        Ok(Self { version, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ranked suggestions. Each matched term adds its word count to its
    /// category; scores are shares of the total weight, so they sum to 1.
    pub fn suggest(&self, justification: &str) -> Vec<Suggestion> {
        let words = tokenize(justification);
        let mut weight: BTreeMap<ReasoningCategory, u64> = BTreeMap::new();
        for (term, category) in &self.entries {
            let hits = words.windows(term.len()).filter(|w| *w == term.as_slice()).count() as u64;
            if hits > 0 {
                *weight.entry(*category).or_default() += hits * term.len() as u64;
            }
        }
        let total: u64 = weight.values().sum();
        let mut out: Vec<Suggestion> = weight
            .into_iter()
            .map(|(category, w)| Suggestion {
                category,
                weight: w,
                score: w as f64 / total as f64,
            })
            .collect();
        out.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.category.cmp(&b.category)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub category: ReasoningCategory,
    pub weight: u64,
    pub score: f64,
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Advisory suggestions from the shipped lexicon. Does not touch any study.
pub fn suggest_codes(justification: &str) -> Result<Vec<Suggestion>> {
    if justification.trim().is_empty() {
        return Err(Error::MalformedDocument("justification is empty".into()));
    }
    Ok(Lexicon::shipped().suggest(justification))
}

/// `response_id,categories,coder,timestamp` rows for the full coding log.
pub fn export_coding_csv(log: &[CodingRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["response_id", "categories", "coder", "timestamp"])?;
    for r in log {
        w.write_record([
            r.response.to_response_id(),
            r.codes.to_cell(),
            r.coder.to_string(),
            r.timestamp.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn import_coding_csv(text: &str) -> Result<Vec<CodingRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_owned();
        let response = ResponseKey::parse_response_id(&field(0))
            .ok_or_else(|| Error::MalformedDocument(format!("coding row {}: bad response_id", n + 1)))?;
        let codes = ReasoningCodeSet::parse_cell(&field(1))
            .map_err(|e| Error::MalformedDocument(format!("coding row {}: {e}", n + 1)))?;
        out.push(CodingRecord {
            response,
            codes,
            coder: PanelistId::new(field(2)),
            timestamp: field(3),
            note: None,
        });
    }
    Ok(out)
}
