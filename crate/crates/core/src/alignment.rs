//! AI-versus-panel alignment per item.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraction::{percent_one_decimal, Fraction};
use crate::model::{ItemId, PanelRole, PanelistId, ReasoningCodeSet, Response, Study, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Negative,
    Neutral,
    Positive,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Negative => "negative",
            Band::Neutral => "neutral",
            Band::Positive => "positive",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn band(rating: u8) -> Result<Band> {
    match rating {
        1 | 2 => Ok(Band::Negative),
        3 => Ok(Band::Neutral),
        4 | 5 => Ok(Band::Positive),
        other => Err(Error::InvalidRating(other.into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelBand {
    Positive,
    Neutral,
    Negative,
    Mixed,
}

impl PanelBand {
    pub fn as_str(self) -> &'static str {
        match self {
            PanelBand::Positive => "positive",
            PanelBand::Neutral => "neutral",
            PanelBand::Negative => "negative",
            PanelBand::Mixed => "mixed",
        }
    }

    fn matches(self, b: Band) -> bool {
        matches!(
            (self, b),
            (PanelBand::Positive, Band::Positive) | (PanelBand::Neutral, Band::Neutral) | (PanelBand::Negative, Band::Negative)
        )
    }
}

impl From<Band> for PanelBand {
    fn from(b: Band) -> Self {
        match b {
            Band::Positive => PanelBand::Positive,
            Band::Neutral => PanelBand::Neutral,
            Band::Negative => PanelBand::Negative,
        }
    }
}

impl fmt::Display for PanelBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelStance {
    pub band: PanelBand,
    #[serde(with = "crate::fraction::text")]
    pub majority_fraction: Fraction,
    pub code_union: ReasoningCodeSet,
}

impl PanelStance {
    /// True when a rating in band `b` agrees with this stance. A neutral
    /// rating is the only concordant answer to a mixed panel.
    pub fn concordant_with(&self, b: Band) -> bool {
        match self.band {
            PanelBand::Mixed => b == Band::Neutral,
            other => other.matches(b),
        }
    }
}

/// Plurality band over the human responses, or `mixed` when no band is a strict plurality.
pub fn panel_stance(responses: &[&Response]) -> Result<PanelStance> {
    if responses.is_empty() {
        return Err(Error::NoResponses);
    }
    let mut counts = [0u64; 3];
    let mut code_union = ReasoningCodeSet::EMPTY;
    for r in responses {
        counts[band(r.rating)? as usize] += 1;
        code_union = code_union.union(r.codes);
    }
    let top = *counts.iter().max().expect("three bands");
    let leaders: Vec<usize> = (0..3).filter(|&i| counts[i] == top).collect();
    let band = if leaders.len() > 1 {
        PanelBand::Mixed
    } else {
        match leaders[0] {
            0 => PanelBand::Negative,
            1 => PanelBand::Neutral,
            _ => PanelBand::Positive,
        }
    };
    Ok(PanelStance {
        band,
        majority_fraction: Fraction::new(top, responses.len() as u64),
        code_union,
    })
}

/// Jaccard index of two code sets; two empty sets count as identical.
pub fn code_overlap(a: ReasoningCodeSet, b: ReasoningCodeSet) -> Fraction {
    let union = a.union(b).len() as u64;
    if union == 0 {
        return Fraction::new(1, 1);
    }
    Fraction::new(a.intersection(b).len() as u64, union)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentCategory {
    FullyAligned,
    PartiallyAligned,
    Divergent,
}

impl AlignmentCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentCategory::FullyAligned => "fully_aligned",
            AlignmentCategory::PartiallyAligned => "partially_aligned",
            AlignmentCategory::Divergent => "divergent",
        }
    }

    pub fn band_concordant(self) -> bool {
        self != AlignmentCategory::Divergent
    }
}

impl fmt::Display for AlignmentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentOverride {
    pub category: AlignmentCategory,
    /// Category produced by the automatic rules before the override.
    pub prior: AlignmentCategory,
    pub rationale: String,
    pub author: PanelistId,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub item_id: ItemId,
    pub category: AlignmentCategory,
    pub ai_rating: u8,
    pub ai_band: Band,
    pub ai_codes: ReasoningCodeSet,
    pub panel: PanelStance,
    #[serde(with = "crate::fraction::text")]
    pub overlap: Fraction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facilitator_override: Option<AlignmentOverride>,
}

impl AlignmentRecord {
    /// Category from the band-and-overlap rules, ignoring any override.
    pub fn automatic_category(&self) -> AlignmentCategory {
        self.facilitator_override
            .as_ref()
            .map_or(self.category, |o| o.prior)
    }
}

pub fn classify_alignment(
    ai: &Response,
    ai_role: PanelRole,
    panel: &PanelStance,
    threshold: Fraction,
) -> Result<AlignmentRecord> {
    if ai_role != PanelRole::AiRespondent {
        return Err(Error::NotAiRespondent(ai.panelist_id.to_string()));
    }
    if !ai.is_coded() {
        return Err(Error::IncompleteCoding(ai.key().to_response_id()));
    }
    let ai_band = band(ai.rating)?;
    let overlap = code_overlap(ai.codes, panel.code_union);
    let category = if !panel.concordant_with(ai_band) {
        AlignmentCategory::Divergent
    } else if overlap >= threshold {
        AlignmentCategory::FullyAligned
    } else {
        AlignmentCategory::PartiallyAligned
    };
    Ok(AlignmentRecord {
        item_id: ai.item_id.clone(),
        category,
        ai_rating: ai.rating,
        ai_band,
        ai_codes: ai.codes,
        panel: panel.clone(),
        overlap,
        facilitator_override: None,
    })
}

pub fn override_alignment(
    record: &AlignmentRecord,
    category: AlignmentCategory,
    rationale: impl Into<String>,
    author: PanelistId,
    timestamp: Timestamp,
) -> Result<AlignmentRecord> {
    let rationale = rationale.into();
    if rationale.trim().is_empty() {
        return Err(Error::MissingRationale(category.to_string()));
    }
    let mut next = record.clone();
    next.facilitator_override = Some(AlignmentOverride {
        category,
        prior: record.automatic_category(),
        rationale,
        author,
        timestamp,
    });
    next.category = category;
    Ok(next)
}

/// Items carrying both an AI response and at least one consensus-panel response.
pub fn dually_rated_items(study: &Study) -> Vec<ItemId> {
    let Some(ai) = study.ai_respondent() else {
        return Vec::new();
    };
    study
        .items
        .iter()
        .filter(|i| {
            study.response(&crate::model::ResponseKey {
                item_id: i.id.clone(),
                panelist_id: ai.id.clone(),
            })
            .is_some()
                && !study.consensus_responses(&i.id).is_empty()
        })
        .map(|i| i.id.clone())
        .collect()
}

/// Automatic alignment records for every dually-rated item not yet classified.
pub fn classify_pending_alignment(study: &Study) -> Result<Vec<AlignmentRecord>> {
    let Some(ai) = study.ai_respondent() else {
        return Ok(Vec::new());
    };
    dually_rated_items(study)
        .into_iter()
        .filter(|id| !study.alignments.contains_key(id))
        .map(|id| {
            let ai_response = study
                .response(&crate::model::ResponseKey {
                    item_id: id.clone(),
                    panelist_id: ai.id.clone(),
                })
                .expect("dually rated");
            let stance = panel_stance(&study.consensus_responses(&id))?;
            classify_alignment(ai_response, ai.role, &stance, study.config.alignment_threshold)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentTally {
    pub fully_aligned: u64,
    pub partially_aligned: u64,
    pub divergent: u64,
}

impl AlignmentTally {
    pub fn total(&self) -> u64 {
        self.fully_aligned + self.partially_aligned + self.divergent
    }

    pub fn concordant(&self) -> u64 {
        self.fully_aligned + self.partially_aligned
    }

    pub fn band_concordance(&self) -> Fraction {
        Fraction::new(self.concordant(), self.total().max(1))
    }

    pub fn concordance_percent(&self) -> String {
        percent_one_decimal(self.concordant(), self.total())
    }

    fn add(&mut self, c: AlignmentCategory) {
        match c {
            AlignmentCategory::FullyAligned => self.fully_aligned += 1,
            AlignmentCategory::PartiallyAligned => self.partially_aligned += 1,
            AlignmentCategory::Divergent => self.divergent += 1,
        }
    }

    pub fn from_categories(cats: impl IntoIterator<Item = AlignmentCategory>) -> Self {
        let mut t = Self::default();
        for c in cats {
            t.add(c);
        }
        t
    }
}

pub fn alignment_summary(study: &Study) -> Result<AlignmentTally> {
    let items = dually_rated_items(study);
    if let Some(missing) = items.iter().find(|id| !study.alignments.contains_key(*id)) {
        return Err(Error::IncompleteAlignment(format!("item {missing} unclassified")));
    }
    Ok(AlignmentTally::from_categories(
        items.iter().map(|id| study.alignments[id].category),
    ))
}

/// `item_id,ai_band,panel_band,overlap,category` rows in questionnaire order.
pub fn alignment_csv(study: &Study) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item_id", "ai_band", "panel_band", "overlap", "category"])?;
    for item in &study.items {
        if let Some(a) = study.alignments.get(&item.id) {
            w.write_record([
                a.item_id.as_str(),
                a.ai_band.as_str(),
                a.panel.band.as_str(),
                &format!("{}/{}", a.overlap.numer(), a.overlap.denom()),
                a.category.as_str(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReasoningCategory::*;

    fn rs(ratings: &[u8]) -> Vec<Response> {
        ratings
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut resp = Response::new("i", format!("e{i}"), r, "j");
                resp.codes = [EvidenceBased, ConditionalGeneral].into_iter().collect();
                resp
            })
            .collect()
    }

    fn stance(ratings: &[u8]) -> PanelStance {
        let v = rs(ratings);
        panel_stance(&v.iter().collect::<Vec<_>>()).unwrap()
    }

    fn ai(rating: u8, codes: &[crate::model::ReasoningCategory]) -> Response {
        let mut r = Response::new("i", "ai", rating, "model text");
        r.codes = codes.iter().copied().collect();
        r
    }

    #[test]
    fn band_definition() {
        assert_eq!(band(5).unwrap(), Band::Positive);
        assert_eq!(band(4).unwrap(), Band::Positive);
        assert_eq!(band(3).unwrap(), Band::Neutral);
        assert_eq!(band(2).unwrap(), Band::Negative);
        assert_eq!(band(1).unwrap(), Band::Negative);
        assert!(matches!(band(0), Err(Error::InvalidRating(0))));
        assert!(matches!(band(6), Err(Error::InvalidRating(6))));
    }

    #[test]
    fn stance_examples() {
        let s = stance(&[5, 4, 4, 5, 4, 4]);
        assert_eq!(s.band, PanelBand::Positive);
        assert_eq!(s.majority_fraction, Fraction::new(1, 1));
        assert_eq!(stance(&[4, 4, 3, 3, 2, 2]).band, PanelBand::Mixed);
        let s = stance(&[4, 4, 4, 3, 2, 2]);
        assert_eq!(s.band, PanelBand::Positive);
        assert_eq!(s.majority_fraction, Fraction::new(3, 6));
        assert!(matches!(panel_stance(&[]), Err(Error::NoResponses)));
    }

    #[test]
    fn neutral_ai_on_mixed_panel_aligns() {
        let r = classify_alignment(
            &ai(3, &[EvidenceBased, ConditionalGeneral]),
            PanelRole::AiRespondent,
            &stance(&[4, 4, 3, 3, 2, 2]),
            Fraction::new(1, 2),
        )
        .unwrap();
        assert_eq!(r.category, AlignmentCategory::FullyAligned);
    }

    #[test]
    fn low_overlap_is_partial() {
        let r = classify_alignment(
            &ai(4, &[PrincipleBased, ConditionalPopulation, EvidenceBased]),
            PanelRole::AiRespondent,
            &stance(&[5, 5, 4, 4, 4, 3]),
            Fraction::new(1, 2),
        )
        .unwrap();
        assert_eq!(r.overlap, Fraction::new(1, 4));
        assert_eq!(r.category, AlignmentCategory::PartiallyAligned);
    }

    #[test]
    fn positive_ai_on_mixed_panel_diverges() {
        let r = classify_alignment(
            &ai(5, &[EvidenceBased]),
            PanelRole::AiRespondent,
            &stance(&[4, 4, 3, 3, 2, 2]),
            Fraction::new(1, 2),
        )
        .unwrap();
        assert_eq!(r.category, AlignmentCategory::Divergent);
    }

    #[test]
    fn preconditions() {
        let st = stance(&[5, 5, 5, 5]);
        assert!(matches!(
            classify_alignment(&ai(5, &[]), PanelRole::AiRespondent, &st, Fraction::new(1, 2)),
            Err(Error::IncompleteCoding(_))
        ));
        assert!(matches!(
            classify_alignment(&ai(5, &[EvidenceBased]), PanelRole::SeniorExpert, &st, Fraction::new(1, 2)),
            Err(Error::NotAiRespondent(_))
        ));
    }

    #[test]
    fn override_records_prior() {
        let st = stance(&[5, 5, 5, 5]);
        let r = classify_alignment(&ai(5, &[EvidenceBased, ConditionalGeneral]), PanelRole::AiRespondent, &st, Fraction::new(1, 2))
            .unwrap();
        assert_eq!(r.category, AlignmentCategory::FullyAligned);
        let o = override_alignment(&r, AlignmentCategory::PartiallyAligned, "less nuanced logic", "fac".into(), "t".into())
            .unwrap();
        assert_eq!(o.category, AlignmentCategory::PartiallyAligned);
        assert_eq!(o.automatic_category(), AlignmentCategory::FullyAligned);
        let o2 = override_alignment(&o, AlignmentCategory::Divergent, "again", "fac".into(), "t".into()).unwrap();
        assert_eq!(o2.facilitator_override.unwrap().prior, AlignmentCategory::FullyAligned);
        assert!(override_alignment(&r, AlignmentCategory::Divergent, "", "fac".into(), "t".into()).is_err());
    }

    #[test]
    fn overlap_properties() {
        let a: ReasoningCodeSet = [Pragmatic, Experiential].into_iter().collect();
        let b: ReasoningCodeSet = [Pragmatic].into_iter().collect();
        assert_eq!(code_overlap(a, b), code_overlap(b, a));
        assert_eq!(code_overlap(a, a), Fraction::new(1, 1));
        assert_eq!(code_overlap(a, b), Fraction::new(1, 2));
    }

    #[test]
    fn study_without_ai_has_empty_tally() {
        let s = Study::new("x", "x");
        let t = alignment_summary(&s).unwrap();
        assert_eq!(t.total(), 0);
    }
}
