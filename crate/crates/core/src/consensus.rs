//! Directional agreement and the four consensus tiers.
//!
//! Thresholds are exact rationals: strong needs at least 3/4 of ratings in
//! one band, operational needs at least 2/3 and less than 3/4. Neutral
//! ratings stay in the denominator and never count toward agreement.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraction::{percent_one_decimal, Fraction};
use crate::model::{Item, ItemId, PanelistId, Response, Study, Timestamp, SCHEMA_VERSION};

pub const STRONG_THRESHOLD: (u64, u64) = (3, 4);
pub const OPERATIONAL_THRESHOLD: (u64, u64) = (2, 3);

pub fn strong_threshold() -> Fraction {
    Fraction::new(STRONG_THRESHOLD.0, STRONG_THRESHOLD.1)
}

pub fn operational_threshold() -> Fraction {
    Fraction::new(OPERATIONAL_THRESHOLD.0, OPERATIONAL_THRESHOLD.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
    Tied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub n_total: u64,
    pub n_positive: u64,
    pub n_negative: u64,
    pub n_neutral: u64,
    pub direction: Direction,
    #[serde(with = "crate::fraction::text")]
    pub fraction: Fraction,
}

impl AgreementSummary {
    pub fn from_ratings(ratings: &[u8]) -> Result<Self> {
        if ratings.is_empty() {
            return Err(Error::NoResponses);
        }
        let (mut pos, mut neg, mut neu) = (0u64, 0u64, 0u64);
        for &r in ratings {
            match r {
                4 | 5 => pos += 1,
                1 | 2 => neg += 1,
                3 => neu += 1,
                other => return Err(Error::InvalidRating(other.into())),
            }
        }
        let total = pos + neg + neu;
        let direction = match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Direction::Positive,
            std::cmp::Ordering::Less => Direction::Negative,
            std::cmp::Ordering::Equal => Direction::Tied,
        };
        Ok(Self {
            n_total: total,
            n_positive: pos,
            n_negative: neg,
            n_neutral: neu,
            direction,
            fraction: Fraction::new(pos.max(neg), total),
        })
    }

    pub fn n_agreeing(&self) -> u64 {
        self.n_positive.max(self.n_negative)
    }

    /// Unreduced `agreeing/total`, e.g. `4/6`.
    pub fn fraction_text(&self) -> String {
        format!("{}/{}", self.n_agreeing(), self.n_total)
    }

    pub fn percent(&self) -> String {
        percent_one_decimal(self.n_agreeing(), self.n_total)
    }
}

/// Counts ratings per band for one item's responses.
pub fn directional_agreement(responses: &[&Response]) -> Result<AgreementSummary> {
    let first = responses.first().ok_or(Error::NoResponses)?;
    let mut seen = BTreeSet::new();
    for r in responses {
        if r.item_id != first.item_id {
            return Err(Error::MixedItems);
        }
        if !seen.insert(&r.panelist_id) {
            return Err(Error::DuplicateResponse);
        }
    }
    let ratings: Vec<u8> = responses.iter().map(|r| r.rating).collect();
    AgreementSummary::from_ratings(&ratings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatibilityBasis {
    Shared,
    ConditionallyReconciled,
    MinorReservations,
    Irreconcilable,
}

impl CompatibilityBasis {
    pub const ALL: [CompatibilityBasis; 4] = [
        CompatibilityBasis::Shared,
        CompatibilityBasis::ConditionallyReconciled,
        CompatibilityBasis::MinorReservations,
        CompatibilityBasis::Irreconcilable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompatibilityBasis::Shared => "shared",
            CompatibilityBasis::ConditionallyReconciled => "conditionally_reconciled",
            CompatibilityBasis::MinorReservations => "minor_reservations",
            CompatibilityBasis::Irreconcilable => "irreconcilable",
        }
    }
}

impl fmt::Display for CompatibilityBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Facilitator judgment on whether the justifications behind an item's
/// ratings are compatible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityAnnotation {
    pub item_id: ItemId,
    pub basis: CompatibilityBasis,
    #[serde(default)]
    pub rationale: String,
    pub author: PanelistId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Timestamp>,
}

impl CompatibilityAnnotation {
    pub fn new(
        item_id: ItemId,
        basis: CompatibilityBasis,
        rationale: impl Into<String>,
        author: PanelistId,
        timestamp: Timestamp,
    ) -> Result<Self> {
        let annotation = Self {
            item_id,
            basis,
            rationale: rationale.into(),
            author,
            timestamp: Some(timestamp),
        };
        annotation.check()?;
        Ok(annotation)
    }

    /// The basis assumed when the facilitator has not annotated an item.
    pub fn default_shared(item_id: ItemId) -> Self {
        Self {
            item_id,
            basis: CompatibilityBasis::Shared,
            rationale: String::new(),
            author: PanelistId::new("engine"),
            timestamp: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.basis != CompatibilityBasis::Shared && self.rationale.trim().is_empty() {
            return Err(Error::MissingRationale(self.basis.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Strong,
    Conditional,
    Operational,
    Divergent,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Strong, Tier::Conditional, Tier::Operational, Tier::Divergent];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Strong => "strong",
            Tier::Conditional => "conditional",
            Tier::Operational => "operational",
            Tier::Divergent => "divergent",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Tier::Strong => "Strong Consensus",
            Tier::Conditional => "Conditional Consensus",
            Tier::Operational => "Operational Consensus",
            Tier::Divergent => "No Consensus / Divergent",
        }
    }

    pub fn is_consensus(self) -> bool {
        self != Tier::Divergent
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A superseded classification and the adjudication that replaced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorClassification {
    pub tier: Tier,
    pub basis: CompatibilityAnnotation,
    pub adjudication: CompatibilityAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusClassification {
    pub item_id: ItemId,
    pub tier: Tier,
    pub agreement: AgreementSummary,
    pub basis: CompatibilityAnnotation,
    #[serde(default)]
    pub history: Vec<PriorClassification>,
}

impl ConsensusClassification {
    /// True when the current tier and every recorded tier follow from the
    /// precedence rules applied to the stored agreement and bases.
    pub fn replays_consistently(&self) -> bool {
        self.history
            .iter()
            .all(|h| decide_tier(&self.agreement, h.basis.basis) == h.tier)
            && decide_tier(&self.agreement, self.basis.basis) == self.tier
    }
}

/// Precedence rules, applied in order:
/// 1. irreconcilable -> divergent
/// 2. fraction >= 3/4 with shared basis -> strong
/// 3. conditionally reconciled -> conditional
/// 4. 2/3 <= fraction < 3/4 with shared or minor-reservation basis -> operational
/// 5. anything else -> divergent
///
/// Tied directions never reach rules 2 or 4.
pub fn decide_tier(agreement: &AgreementSummary, basis: CompatibilityBasis) -> Tier {
    use CompatibilityBasis::*;
    let directional = agreement.direction != Direction::Tied;
    let f = agreement.fraction;
    if basis == Irreconcilable {
        Tier::Divergent
    } else if directional && f >= strong_threshold() && basis == Shared {
        Tier::Strong
    } else if basis == ConditionallyReconciled {
        Tier::Conditional
    } else if directional
        && f >= operational_threshold()
        && f < strong_threshold()
        && matches!(basis, Shared | MinorReservations)
    {
        Tier::Operational
    } else {
        Tier::Divergent
    }
}

pub fn classify_consensus(
    item: &Item,
    responses: &[&Response],
    basis: &CompatibilityAnnotation,
    quorum: usize,
) -> Result<ConsensusClassification> {
    if responses.len() < quorum {
        return Err(Error::InsufficientQuorum {
            found: responses.len(),
            required: quorum,
        });
    }
    if responses.iter().any(|r| r.item_id != item.id) {
        return Err(Error::MixedItems);
    }
    basis.check()?;
    let agreement = directional_agreement(responses)?;
    Ok(ConsensusClassification {
        item_id: item.id.clone(),
        tier: decide_tier(&agreement, basis.basis),
        agreement,
        basis: basis.clone(),
        history: Vec::new(),
    })
}

/// Divergent -> conditional after the facilitator finds the views
/// conditionally reconcilable. Any other move is refused.
pub fn reclassify(
    classification: &ConsensusClassification,
    adjudication: &CompatibilityAnnotation,
) -> Result<ConsensusClassification> {
    if classification.tier != Tier::Divergent {
        return Err(Error::IllegalReclassification {
            from: classification.tier.to_string(),
        });
    }
    if adjudication.basis != CompatibilityBasis::ConditionallyReconciled {
        return Err(Error::UnsupportedAdjudication {
            basis: adjudication.basis.to_string(),
        });
    }
    adjudication.check()?;
    let mut next = classification.clone();
    next.history.push(PriorClassification {
        tier: classification.tier,
        basis: classification.basis.clone(),
        adjudication: adjudication.clone(),
    });
    next.basis = adjudication.clone();
    next.tier = Tier::Conditional;
    Ok(next)
}

/// Classifies every quorate item not yet classified, using the stored
/// annotation or the shared default. Pure: returns the new records.
pub fn classify_pending(study: &Study) -> Result<Vec<ConsensusClassification>> {
    study
        .quorate_items()
        .into_iter()
        .filter(|item| !study.classifications.contains_key(&item.id))
        .map(|item| {
            let basis = study
                .annotations
                .get(&item.id)
                .cloned()
                .unwrap_or_else(|| CompatibilityAnnotation::default_shared(item.id.clone()));
            classify_consensus(item, &study.consensus_responses(&item.id), &basis, study.config.quorum)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierTally {
    pub strong: u64,
    pub conditional: u64,
    pub operational: u64,
    pub divergent: u64,
}

impl TierTally {
    pub fn from_tiers(tiers: impl IntoIterator<Item = Tier>) -> Self {
        let mut t = Self::default();
        for tier in tiers {
            *t.count_mut(tier) += 1;
        }
        t
    }

    fn count_mut(&mut self, tier: Tier) -> &mut u64 {
        match tier {
            Tier::Strong => &mut self.strong,
            Tier::Conditional => &mut self.conditional,
            Tier::Operational => &mut self.operational,
            Tier::Divergent => &mut self.divergent,
        }
    }

    pub fn count(&self, tier: Tier) -> u64 {
        match tier {
            Tier::Strong => self.strong,
            Tier::Conditional => self.conditional,
            Tier::Operational => self.operational,
            Tier::Divergent => self.divergent,
        }
    }

    pub fn classified(&self) -> u64 {
        self.strong + self.conditional + self.operational + self.divergent
    }

    pub fn in_consensus(&self) -> u64 {
        self.strong + self.conditional + self.operational
    }

    pub fn percent(&self, tier: Tier) -> String {
        percent_one_decimal(self.count(tier), self.classified())
    }

    pub fn consensus_rate(&self) -> Fraction {
        Fraction::new(self.in_consensus(), self.classified().max(1))
    }

    pub fn consensus_percent(&self) -> String {
        percent_one_decimal(self.in_consensus(), self.classified())
    }

    pub fn to_document(&self) -> TallyDocument {
        TallyDocument {
            schema_version: SCHEMA_VERSION.to_owned(),
            classified: self.classified(),
            tiers: Tier::ALL
                .into_iter()
                .map(|t| TierCount {
                    tier: t,
                    count: self.count(t),
                    percent: self.percent(t),
                })
                .collect(),
            in_consensus: self.in_consensus(),
            consensus_percent: self.consensus_percent(),
        }
    }
}

/// JSON tally document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyDocument {
    pub schema_version: String,
    pub classified: u64,
    pub tiers: Vec<TierCount>,
    pub in_consensus: u64,
    pub consensus_percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCount {
    pub tier: Tier,
    pub count: u64,
    pub percent: String,
}

pub fn summary_stats(study: &Study) -> Result<TierTally> {
    if let Some(missing) = study
        .quorate_items()
        .into_iter()
        .find(|i| !study.classifications.contains_key(&i.id))
    {
        return Err(Error::IncompleteClassification(format!("item {} unclassified", missing.id)));
    }
    if study.classifications.is_empty() {
        return Err(Error::IncompleteClassification("no classified items".into()));
    }
    Ok(TierTally::from_tiers(study.classifications.values().map(|c| c.tier)))
}

/// `item_id,tier,fraction,basis` rows in questionnaire order.
pub fn tiers_csv(study: &Study) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item_id", "tier", "fraction", "basis"])?;
    for item in &study.items {
        if let Some(c) = study.classifications.get(&item.id) {
            w.write_record([
                c.item_id.as_str(),
                c.tier.as_str(),
                &c.agreement.fraction_text(),
                c.basis.basis.as_str(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
