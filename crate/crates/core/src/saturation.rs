//! Thematic saturation over (reasoning category, section) coverage.
//!
//! A prefix of the panel is saturated once its pair coverage equals what
//! the whole sub-panel produced and nobody later in the ordering carries a
//! novelty flag. Order robustness re-runs the coverage-only criterion over
//! every (or a seeded sample of) panel orderings.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PanelRole, PanelistId, ReasoningCategory, SectionId, Study};

/// Largest panel evaluated over all orderings (8! = 40320).
pub const EXHAUSTIVE_CEILING: usize = 8;
pub const DEFAULT_SAMPLE_COUNT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoveragePair {
    pub category: ReasoningCategory,
    pub section: SectionId,
}

pub type PairSet = BTreeSet<CoveragePair>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageTrajectory {
    pub ordering: Vec<PanelistId>,
    /// `steps[k - 1]` is the union over the first `k` panelists.
    pub steps: Vec<PairSet>,
    pub required: PairSet,
    pub category_complete: bool,
}

impl CoverageTrajectory {
    /// Size of the panel this trajectory walks.
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn categories_at(&self, k: usize) -> BTreeSet<ReasoningCategory> {
        if k == 0 {
            return BTreeSet::new();
        }
        self.steps[k - 1].iter().map(|p| p.category).collect()
    }

    /// Smallest prefix length whose coverage equals `required`, ignoring novelty.
    pub fn coverage_index(&self) -> usize {
        self.steps
            .iter()
            .position(|s| *s == self.required)
            .map_or(self.len(), |p| p + 1)
    }

    pub fn curve(&self) -> Vec<CurvePoint> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| CurvePoint {
                prefix_k: i + 1,
                pairs_covered: s.len(),
                required: self.required.len(),
                categories_covered: self.categories_at(i + 1).len(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub prefix_k: usize,
    pub pairs_covered: usize,
    pub required: usize,
    pub categories_covered: usize,
}

fn pairs_by_member(study: &Study, role: PanelRole) -> Result<BTreeMap<PanelistId, PairSet>> {
    let mut by_member: BTreeMap<PanelistId, PairSet> =
        study.members(role).map(|p| (p.id.clone(), PairSet::new())).collect();
    for r in &study.responses {
        let Some(pairs) = by_member.get_mut(&r.panelist_id) else {
            continue;
        };
        if !r.is_coded() {
            return Err(Error::IncompleteCoding(r.key().to_response_id()));
        }
        let item = study
            .item(&r.item_id)
            .ok_or_else(|| Error::UnknownItem(r.item_id.to_string()))?;
        pairs.extend(r.codes.iter().map(|category| CoveragePair {
            category,
            section: item.section_id.clone(),
        }));
    }
    Ok(by_member)
}

fn check_permutation(study: &Study, role: PanelRole, ordering: &[PanelistId]) -> Result<()> {
    let members: BTreeSet<&PanelistId> = study.members(role).map(|p| &p.id).collect();
    let given: BTreeSet<&PanelistId> = ordering.iter().collect();
    if given.len() != ordering.len() {
        return Err(Error::InvalidOrdering("ordering repeats a panelist".into()));
    }
    if given != members {
        return Err(Error::InvalidOrdering(format!(
            "ordering must be a permutation of the {role} panel ({} members)",
            members.len()
        )));
    }
    Ok(())
}

pub fn cumulative_coverage(study: &Study, role: PanelRole, ordering: &[PanelistId]) -> Result<CoverageTrajectory> {
    check_permutation(study, role, ordering)?;
    let by_member = pairs_by_member(study, role)?;
    let mut acc = PairSet::new();
    let steps: Vec<PairSet> = ordering
        .iter()
        .map(|p| {
            acc.extend(by_member[p].iter().cloned());
            acc.clone()
        })
        .collect();
    let required = acc;
    let categories: BTreeSet<_> = required.iter().map(|p| p.category).collect();
    Ok(CoverageTrajectory {
        ordering: ordering.to_vec(),
        steps,
        required,
        category_complete: categories.len() == ReasoningCategory::ALL.len(),
    })
}

/// Panelists with at least one novelty-flagged response.
pub fn novelty_flags(study: &Study) -> BTreeSet<PanelistId> {
    study
        .responses
        .iter()
        .filter(|r| r.novelty_flag)
        .map(|r| r.panelist_id.clone())
        .collect()
}

/// Smallest `k` with full coverage at `k` and no novelty-flagged panelist
/// after position `k`. `None` when only the full panel qualifies.
pub fn saturation_index(trajectory: &CoverageTrajectory, novelty: &BTreeSet<PanelistId>) -> Option<usize> {
    let n = trajectory.len();
    let last_novel = trajectory
        .ordering
        .iter()
        .rposition(|p| novelty.contains(p))
        .map_or(0, |i| i + 1);
    let k = trajectory.coverage_index().max(last_novel);
    (k < n).then_some(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EvaluationMode {
    Exhaustive,
    Sampled { count: usize, seed: u64 },
}

impl EvaluationMode {
    pub fn sampled(seed: u64) -> Self {
        EvaluationMode::Sampled {
            count: DEFAULT_SAMPLE_COUNT,
            seed,
        }
    }

    /// Exhaustive up to the ceiling, seeded sampling beyond it.
    pub fn for_panel(size: usize, seed: u64) -> Self {
        if size <= EXHAUSTIVE_CEILING {
            EvaluationMode::Exhaustive
        } else {
            Self::sampled(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingIndex {
    pub ordering: Vec<PanelistId>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub role: PanelRole,
    pub panel_size: usize,
    pub canonical_ordering: Vec<PanelistId>,
    pub curve: Vec<CurvePoint>,
    pub category_complete: bool,
    /// Canonical-order index with the novelty criterion.
    pub saturation_index: Option<usize>,
    /// Coverage-only index per evaluated ordering, sorted by ordering.
    pub per_ordering_indices: Vec<OrderingIndex>,
    pub index_histogram: BTreeMap<usize, u64>,
    pub max_index: usize,
    pub robust: bool,
    pub evaluated: EvaluationMode,
}

impl SaturationReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("prefix_k,pairs_covered,required\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{}\n", p.prefix_k, p.pairs_covered, p.required));
        }
        out
    }
}

/// Per-member pair sets packed as bitmasks over the required pairs.
struct PackedPanel {
    masks: Vec<Vec<u64>>,
    full: Vec<u64>,
}

impl PackedPanel {
    fn new(sets: &[&PairSet]) -> Self {
        let universe: BTreeSet<&CoveragePair> = sets.iter().flat_map(|s| s.iter()).collect();
        let index: BTreeMap<&CoveragePair, usize> = universe.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let words = universe.len().div_ceil(64).max(1);
        let masks: Vec<Vec<u64>> = sets
            .iter()
            .map(|s| {
                let mut m = vec![0u64; words];
                for p in s.iter() {
                    let i = index[p];
                    m[i / 64] |= 1 << (i % 64);
                }
                m
            })
            .collect();
        let mut full = vec![0u64; words];
        for m in &masks {
            for (f, w) in full.iter_mut().zip(m) {
                *f |= w;
            }
        }
        Self { masks, full }
    }

    fn coverage_index(&self, order: &[usize]) -> usize {
        let mut acc = vec![0u64; self.full.len()];
        for (k, &member) in order.iter().enumerate() {
            for (a, w) in acc.iter_mut().zip(&self.masks[member]) {
                *a |= w;
            }
            if acc == self.full {
                return k + 1;
            }
        }
        order.len()
    }
}

/// Rearranges `v` into the next lexicographic permutation; false when `v` was the last.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).expect("pivot has a successor");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

pub fn permutation_robustness(study: &Study, role: PanelRole, mode: EvaluationMode) -> Result<SaturationReport> {
    let members: Vec<PanelistId> = study.members(role).map(|p| p.id.clone()).collect();
    let n = members.len();
    if mode == EvaluationMode::Exhaustive && n > EXHAUSTIVE_CEILING {
        return Err(Error::PanelTooLarge {
            size: n,
            ceiling: EXHAUSTIVE_CEILING,
        });
    }
    let canonical = cumulative_coverage(study, role, &members)?;
    let by_member = pairs_by_member(study, role)?;
    let sets: Vec<&PairSet> = members.iter().map(|m| &by_member[m]).collect();
    let packed = PackedPanel::new(&sets);

    let mut indices: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    match mode {
        EvaluationMode::Exhaustive => {
            let mut order: Vec<usize> = (0..n).collect();
            loop {
                indices.insert(order.clone(), packed.coverage_index(&order));
                if !next_permutation(&mut order) {
                    break;
                }
            }
        }
        EvaluationMode::Sampled { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..count {
                order.shuffle(&mut rng);
                indices.insert(order.clone(), packed.coverage_index(&order));
            }
        }
    }

    let mut histogram = BTreeMap::new();
    for &i in indices.values() {
        *histogram.entry(i).or_insert(0u64) += 1;
    }
    let max_index = indices.values().copied().max().unwrap_or(0);
    let per_ordering_indices = indices
        .into_iter()
        .map(|(order, index)| OrderingIndex {
            ordering: order.into_iter().map(|i| members[i].clone()).collect(),
            index,
        })
        .collect();

    Ok(SaturationReport {
        role,
        panel_size: n,
        curve: canonical.curve(),
        category_complete: canonical.category_complete,
        saturation_index: saturation_index(&canonical, &novelty_flags(study)),
        canonical_ordering: members,
        per_ordering_indices,
        index_histogram: histogram,
        max_index,
        robust: n > 0 && max_index < n,
        evaluated: mode,
    })
}
