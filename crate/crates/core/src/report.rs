//! Guidance document, tallies and role comparison.
//!
//! Everything here is a pure function of a study snapshot: the same study
//! renders to byte-identical Markdown, CSV and JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alignment::{alignment_summary, band, panel_stance, AlignmentTally, PanelBand};
use crate::coding::{reasoning_profile, ProfileSubject, ReasoningProfile};
use crate::consensus::{summary_stats, tiers_csv, CompatibilityBasis, TallyDocument, Tier};
use crate::error::{Error, Result};
use crate::fraction::percent_one_decimal;
use crate::model::{ItemId, ItemOrigin, PanelRole, ReasoningCodeSet, SectionId, Study, SCHEMA_VERSION};
use crate::saturation::{permutation_robustness, EvaluationMode};
use crate::workflow::WorkflowState;

pub const REPORT_MD: &str = "report.md";
pub const TIERS_CSV: &str = "tiers.csv";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceEntry {
    pub item_id: ItemId,
    pub statement: String,
    pub tier: Tier,
    pub agreement: String,
    pub agreement_percent: String,
    pub basis: CompatibilityBasis,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub basis_rationale: String,
    /// Rationale of the adjudication that reclassified the item, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudication_note: Option<String>,
    pub reasoning: ReasoningCodeSet,
    pub participant_proposed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierGroup {
    pub tier: Tier,
    pub entries: Vec<GuidanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionGuidance {
    pub section_id: SectionId,
    pub name: String,
    pub groups: Vec<TierGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSummaryDoc {
    pub tally: AlignmentTally,
    pub total: u64,
    pub band_concordance: String,
    pub concordance_percent: String,
    pub overridden: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationSummaryDoc {
    pub panel_size: usize,
    pub saturation_index: Option<usize>,
    pub max_index: usize,
    pub robust: bool,
    pub category_complete: bool,
    pub orderings_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceDocument {
    pub schema_version: String,
    pub study_id: String,
    pub title: String,
    pub tally: TallyDocument,
    pub sections: Vec<SectionGuidance>,
    /// Divergent items, kept out of the section lists.
    pub no_consensus: Vec<GuidanceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentSummaryDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<SaturationSummaryDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_comparison: Option<ComparisonReport>,
    /// Sections that could not be computed, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omitted: Vec<String>,
}

impl GuidanceDocument {
    pub fn entry_count(&self) -> usize {
        self.sections
            .iter()
            .flat_map(|s| &s.groups)
            .map(|g| g.entries.len())
            .sum::<usize>()
            + self.no_consensus.len()
    }

    pub fn count_tier(&self, tier: Tier) -> usize {
        if tier == Tier::Divergent {
            return self.no_consensus.len();
        }
        self.sections
            .iter()
            .flat_map(|s| &s.groups)
            .filter(|g| g.tier == tier)
            .map(|g| g.entries.len())
            .sum()
    }
}

fn entry(study: &Study, item_id: &ItemId) -> GuidanceEntry {
    let c = &study.classifications[item_id];
    let item = study.item(item_id).expect("classified items exist");
    let reasoning = study
        .consensus_responses(item_id)
        .iter()
        .fold(ReasoningCodeSet::EMPTY, |acc, r| acc.union(r.codes));
    GuidanceEntry {
        item_id: item_id.clone(),
        statement: item.statement.clone(),
        tier: c.tier,
        agreement: c.agreement.fraction_text(),
        agreement_percent: c.agreement.percent(),
        basis: c.basis.basis,
        basis_rationale: c.basis.rationale.clone(),
        adjudication_note: c.history.last().map(|h| h.adjudication.rationale.clone()),
        reasoning,
        participant_proposed: item.origin == ItemOrigin::ParticipantProposed,
    }
}

pub fn consensus_report(study: &Study) -> Result<GuidanceDocument> {
    if !matches!(study.round_state, WorkflowState::Classified | WorkflowState::Reported)
        || study.classifications.is_empty()
    {
        return Err(Error::InvalidTransition {
            state: study.round_state,
            action: "consensus_report".into(),
        });
    }
    let tally = summary_stats(study)?;
    let mut omitted = Vec::new();

    let mut sections = Vec::new();
    for section in &study.sections {
        let groups: Vec<TierGroup> = [Tier::Strong, Tier::Conditional, Tier::Operational]
            .into_iter()
            .map(|tier| TierGroup {
                tier,
                entries: study
                    .items
                    .iter()
                    .filter(|i| i.section_id == section.id)
                    .filter(|i| study.classifications.get(&i.id).is_some_and(|c| c.tier == tier))
                    .map(|i| entry(study, &i.id))
                    .collect(),
            })
            .filter(|g| !g.entries.is_empty())
            .collect();
        sections.push(SectionGuidance {
            section_id: section.id.clone(),
            name: section.name.clone(),
            groups,
        });
    }
    let no_consensus = study
        .items
        .iter()
        .filter(|i| study.classifications.get(&i.id).is_some_and(|c| c.tier == Tier::Divergent))
        .map(|i| entry(study, &i.id))
        .collect();

    let alignment = if study.ai_respondent().is_some() {
        match alignment_summary(study) {
            Ok(t) => Some(AlignmentSummaryDoc {
                total: t.total(),
                band_concordance: format!("{}/{}", t.concordant(), t.total()),
                concordance_percent: t.concordance_percent(),
                overridden: study.alignments.values().filter(|a| a.facilitator_override.is_some()).count() as u64,
                tally: t,
            }),
            Err(e) => {
                omitted.push(format!("alignment: {e}"));
                None
            }
        }
    } else {
        None
    };

    let seniors = study.members(PanelRole::SeniorExpert).count();
    let saturation = if seniors == 0 {
        None
    } else {
        match permutation_robustness(study, PanelRole::SeniorExpert, EvaluationMode::for_panel(seniors, 0)) {
            Ok(r) => Some(SaturationSummaryDoc {
                panel_size: r.panel_size,
                saturation_index: r.saturation_index,
                max_index: r.max_index,
                robust: r.robust,
                category_complete: r.category_complete,
                orderings_evaluated: r.per_ordering_indices.len(),
            }),
            Err(e) => {
                omitted.push(format!("saturation: {e}"));
                None
            }
        }
    };

    let role_comparison = match role_comparison(study) {
        Ok(r) => Some(r),
        Err(e) => {
            omitted.push(format!("role comparison: {e}"));
            None
        }
    };

    Ok(GuidanceDocument {
        schema_version: SCHEMA_VERSION.to_owned(),
        study_id: study.id.to_string(),
        title: study.title.clone(),
        tally: tally.to_document(),
        sections,
        no_consensus,
        alignment,
        saturation,
        role_comparison,
        omitted,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSummary {
    pub role: PanelRole,
    pub members: usize,
    pub responses: u64,
    /// Count of ratings 1..=5.
    pub rating_counts: [u64; 5],
    pub neutral_share: String,
    pub mean_rating: String,
    pub rating_sd: String,
    /// Responses whose band matches the senior panel's plurality band on that item.
    pub aligned_with_senior: u64,
    pub compared_with_senior: u64,
    pub senior_alignment_percent: String,
    pub profile: ReasoningProfile,
}

impl RoleSummary {
    pub fn neutral_count(&self) -> u64 {
        self.rating_counts[2]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub roles: Vec<RoleSummary>,
}

impl ComparisonReport {
    pub fn role(&self, role: PanelRole) -> Option<&RoleSummary> {
        self.roles.iter().find(|r| r.role == role)
    }
}

pub fn role_comparison(study: &Study) -> Result<ComparisonReport> {
    let mut senior_band: BTreeMap<&ItemId, PanelBand> = BTreeMap::new();
    for item in &study.items {
        let seniors: Vec<_> = study
            .responses_for_item(&item.id)
            .filter(|r| study.role_of(&r.panelist_id) == Some(PanelRole::SeniorExpert))
            .collect();
        if !seniors.is_empty() {
            senior_band.insert(&item.id, panel_stance(&seniors)?.band);
        }
    }

    let mut roles = Vec::new();
    for role in PanelRole::ALL {
        let members = study.members(role).count();
        let responses: Vec<_> = study.responses_by_role(role).collect();
        if members == 0 || responses.is_empty() {
            continue;
        }
        let profile = reasoning_profile(study, &ProfileSubject::Role(role))?;
        let mut counts = [0u64; 5];
        let (mut aligned, mut compared) = (0u64, 0u64);
        for r in &responses {
            let b = band(r.rating)?;
            counts[(r.rating - 1) as usize] += 1;
            if let Some(stance) = senior_band.get(&r.item_id) {
                compared += 1;
                if *stance == PanelBand::from(b) {
                    aligned += 1;
                }
            }
        }
        let n = responses.len() as u64;
        let sum: u64 = counts.iter().enumerate().map(|(i, c)| (i as u64 + 1) * c).sum();
        let mean = sum as f64 / n as f64;
        let var = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * ((i + 1) as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        roles.push(RoleSummary {
            role,
            members,
            responses: n,
            rating_counts: counts,
            neutral_share: percent_one_decimal(counts[2], n),
            mean_rating: format!("{mean:.2}"),
            rating_sd: format!("{:.2}", var.sqrt()),
            aligned_with_senior: aligned,
            compared_with_senior: compared,
            senior_alignment_percent: percent_one_decimal(aligned, compared),
            profile,
        });
    }
    Ok(ComparisonReport { roles })
}

fn tick(b: bool) -> &'static str {
    if b {
        "Y"
    } else {
        "N"
    }
}

fn write_entry(out: &mut String, e: &GuidanceEntry) {
    let _ = write!(
        out,
        "- **{}** {}\n  agreement {} ({}%); basis: {}",
        e.item_id, e.statement, e.agreement, e.agreement_percent, e.basis
    );
    if !e.basis_rationale.is_empty() {
        let _ = write!(out, " ({})", e.basis_rationale);
    }
    if !e.reasoning.is_empty() {
        let _ = write!(out, "; reasoning: {}", e.reasoning.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", "));
    }
    if e.participant_proposed {
        out.push_str("; participant-proposed");
    }
    out.push('\n');
    if let Some(note) = &e.adjudication_note {
        let _ = writeln!(out, "  adjudication: {note}");
    }
}

pub fn render_markdown(doc: &GuidanceDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Consensus guidance: {}\n", doc.title);
    let _ = writeln!(out, "Study `{}`\n", doc.study_id);

    out.push_str("## Tier summary\n\n| Tier | Items | Share |\n|---|---:|---:|\n");
    for t in &doc.tally.tiers {
        let _ = writeln!(out, "| {} | {} | {}% |", t.tier.label(), t.count, t.percent);
    }
    let _ = writeln!(
        out,
        "| Consensus (strong, conditional or operational) | {} of {} | {}% |\n",
        doc.tally.in_consensus, doc.tally.classified, doc.tally.consensus_percent
    );

    out.push_str("## Principles by section\n\n");
    for s in &doc.sections {
        let _ = writeln!(out, "### {}\n", s.name);
        if s.groups.is_empty() {
            out.push_str("No consensus principles in this section.\n\n");
        }
        for g in &s.groups {
            let _ = writeln!(out, "#### {}\n", g.tier.label());
            for e in &g.entries {
                write_entry(&mut out, e);
            }
            out.push('\n');
        }
    }

    let _ = writeln!(out, "## No consensus ({} items)\n", doc.no_consensus.len());
    if doc.no_consensus.is_empty() {
        out.push_str("None.\n");
    }
    for e in &doc.no_consensus {
        write_entry(&mut out, e);
    }

    if let Some(a) = &doc.alignment {
        out.push_str("\n## AI alignment\n\n");
        let _ = writeln!(
            out,
            "Fully aligned {}, partially aligned {}, divergent {}. Facilitator overrides: {}.",
            a.tally.fully_aligned, a.tally.partially_aligned, a.tally.divergent, a.overridden
        );
        let _ = writeln!(out, "Band concordance {} ({}%).", a.band_concordance, a.concordance_percent);
    }

    if let Some(s) = &doc.saturation {
        out.push_str("\n## Thematic saturation (senior panel)\n\n");
        let index = s.saturation_index.map_or("not reached before the full panel".to_owned(), |k| k.to_string());
        let _ = writeln!(out, "Saturation index: {index} of {}.", s.panel_size);
        let _ = writeln!(
            out,
            "Order robustness: max index {} over {} orderings, robust: {}. All seven categories present: {}.",
            s.max_index,
            s.orderings_evaluated,
            if s.robust { "yes" } else { "no" },
            if s.category_complete { "yes" } else { "no" }
        );
    }

    if let Some(c) = &doc.role_comparison {
        out.push_str("\n## Role comparison\n\n| Role | Members | Responses | Neutral share | Mean (SD) | Aligned with seniors |\n|---|---:|---:|---:|---:|---:|\n");
        for r in &c.roles {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {}% | {} ({}) | {}/{} ({}%) |",
                r.role,
                r.members,
                r.responses,
                r.neutral_share,
                r.mean_rating,
                r.rating_sd,
                r.aligned_with_senior,
                r.compared_with_senior,
                r.senior_alignment_percent
            );
        }
        out.push_str("\n| Reasoning category |");
        for r in &c.roles {
            let _ = write!(out, " {} |", r.role);
        }
        out.push_str("\n|---|");
        for _ in &c.roles {
            out.push_str("---|");
        }
        out.push('\n');
        for cat in crate::model::ReasoningCategory::ALL {
            let _ = write!(out, "| {} |", cat.label());
            for r in &c.roles {
                let _ = write!(out, " {} ({}) |", tick(r.profile.present(cat)), r.profile.frequency[&cat]);
            }
            out.push('\n');
        }
    }

    if !doc.omitted.is_empty() {
        out.push_str("\n## Omitted\n\n");
        for o in &doc.omitted {
            let _ = writeln!(out, "- {o}");
        }
    }
    out
}

/// The three report files, as (file name, contents).
pub fn render_all(study: &Study) -> Result<Vec<(&'static str, String)>> {
    let doc = consensus_report(study)?;
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    Ok(vec![
        (REPORT_MD, render_markdown(&doc)),
        (TIERS_CSV, tiers_csv(study)?),
        (REPORT_JSON, json),
    ])
}
