//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines print in order.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use delphi_core::adapter::MockAdapter;
use delphi_core::alignment::{alignment_summary, AlignmentCategory};
use delphi_core::consensus::{classify_consensus, summary_stats, CompatibilityAnnotation, CompatibilityBasis, Tier};
use delphi_core::corpus::{Admission, CorpusSpec, ResponseFormat};
use delphi_core::model::{Item, PanelRole, ReasoningCategory as C, ReasoningCodeSet, Response, Study};
use delphi_core::report::{consensus_report, render_markdown, role_comparison};
use delphi_core::saturation::{cumulative_coverage, novelty_flags, permutation_robustness, saturation_index, EvaluationMode};
use delphi_core::store::{Command, StudyStore, SystemClock};
use delphi_core::{Error, PanelistId};

type Outcome = Result<String, String>;
/// Name, runtime budget, check.
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn tier_tally() -> Outcome {
    let st = tiered_study("strength", &strength_plan());
    let tally = summary_stats(st.study()).map_err(|e| e.to_string())?;
    let got = (
        tally.classified(),
        tally.percent(Tier::Strong),
        tally.percent(Tier::Conditional),
        tally.percent(Tier::Operational),
    );
    check(got == (159, "37.7".into(), "59.1".into(), "3.1".into()), format!("got {got:?}"))?;
    let mut study = st.study().clone();
    study.round_state = delphi_core::WorkflowState::Reported;
    let doc = consensus_report(&study).map_err(|e| e.to_string())?;
    let counts = (
        doc.count_tier(Tier::Strong),
        doc.count_tier(Tier::Conditional),
        doc.count_tier(Tier::Operational),
    );
    check(counts == (60, 94, 5), format!("document entries {counts:?}"))?;
    Ok(format!("159 classified: {}% / {}% / {}%", got.1, got.2, got.3))
}

fn consensus_rate() -> Outcome {
    let mut st = tiered_study("endurance", &endurance_plan());
    let files = st.emit_report(FAC).map_err(|e| e.to_string())?;
    let tally = summary_stats(st.study()).map_err(|e| e.to_string())?;
    check(
        tally.in_consensus() == 132 && tally.classified() == 143,
        format!("{} of {}", tally.in_consensus(), tally.classified()),
    )?;
    check(tally.consensus_percent() == "92.3", format!("rate {}", tally.consensus_percent()))?;
    let doc = consensus_report(st.study()).map_err(|e| e.to_string())?;
    check(doc.no_consensus.len() == 11, format!("no-consensus section has {}", doc.no_consensus.len()))?;
    let md = &files.iter().find(|(n, _)| *n == "report.md").unwrap().1;
    check(md.contains("## No consensus (11 items)"), "markdown lacks the no-consensus section")?;
    Ok("132/143 = 92.3%, 11 in no-consensus section".into())
}

fn alignment_regression() -> Outcome {
    let st = insomnia_processed();
    let tally = alignment_summary(st.study()).map_err(|e| e.to_string())?;
    check(
        tally.concordant() == 19 && tally.total() == 20 && tally.concordance_percent() == "95.0",
        format!("{}/{} = {}%", tally.concordant(), tally.total(), tally.concordance_percent()),
    )?;
    let not_full: Vec<_> = st
        .study()
        .alignments
        .values()
        .filter(|a| a.automatic_category() != AlignmentCategory::FullyAligned)
        .map(|a| a.item_id.to_string())
        .collect();
    check(not_full.len() == 1, format!("items not fully aligned by rule: {not_full:?}"))?;
    Ok(format!("19/20 = 95.0%, rule-based exception: {}", not_full[0]))
}

/// Written from the tier table, with integer cross-multiplication.
fn oracle_tier(ratings: &[u8], basis: CompatibilityBasis) -> Tier {
    let n = ratings.len() as u64;
    let pos = ratings.iter().filter(|&&r| r >= 4).count() as u64;
    let neg = ratings.iter().filter(|&&r| r <= 2).count() as u64;
    let tied = pos == neg;
    let top = pos.max(neg);
    let at_least = |num: u64, den: u64| top * den >= num * n;
    match basis {
        CompatibilityBasis::Irreconcilable => Tier::Divergent,
        CompatibilityBasis::Shared if !tied && at_least(3, 4) => Tier::Strong,
        CompatibilityBasis::ConditionallyReconciled => Tier::Conditional,
        CompatibilityBasis::Shared | CompatibilityBasis::MinorReservations
            if !tied && at_least(2, 3) && !at_least(3, 4) =>
        {
            Tier::Operational
        }
        _ => Tier::Divergent,
    }
}

fn classifier_oracle() -> Outcome {
    let item = Item::fixed("x", "s", "statement");
    let mut cases = 0u64;
    let mut boundary = BTreeSet::new();
    for code in 0..5u32.pow(6) {
        let ratings: Vec<u8> = (0..6).map(|i| (code / 5u32.pow(i) % 5) as u8 + 1).collect();
        let responses: Vec<Response> = ratings
            .iter()
            .enumerate()
            .map(|(i, &r)| Response::new("x", format!("p{i}"), r, "because"))
            .collect();
        let refs: Vec<&Response> = responses.iter().collect();
        for basis in CompatibilityBasis::ALL {
            let annotation = CompatibilityAnnotation {
                item_id: "x".into(),
                basis,
                rationale: "r".into(),
                author: "f".into(),
                timestamp: None,
            };
            let got = classify_consensus(&item, &refs, &annotation, 4).map_err(|e| e.to_string())?;
            let want = oracle_tier(&ratings, basis);
            if got.tier != want {
                return Err(format!("{ratings:?} {basis}: engine {} oracle {}", got.tier, want));
            }
            let top = got.agreement.n_positive.max(got.agreement.n_negative);
            if top * 4 == 3 * 6 || top * 3 == 2 * 6 {
                boundary.insert(top);
            }
            cases += 1;
        }
    }
    // k/6 never equals 3/4, so exact 3/4 is checked on 4-, 8- and 12-member panels
    let mut exact = 0;
    for ratings in [
        vec![5u8, 5, 4, 1],
        vec![5, 5, 5, 4, 5, 5, 1, 3],
        vec![1, 1, 2, 1, 2, 2, 5, 3],
        vec![5, 5, 5, 4, 4, 4, 4, 4, 1, 1, 3, 3],
        vec![5, 5, 5, 4, 4, 4, 4, 4, 4, 1, 3, 3],
    ] {
        let responses: Vec<Response> = ratings
            .iter()
            .enumerate()
            .map(|(i, &r)| Response::new("x", format!("p{i}"), r, "b"))
            .collect();
        let refs: Vec<&Response> = responses.iter().collect();
        for basis in CompatibilityBasis::ALL {
            let annotation = CompatibilityAnnotation {
                item_id: "x".into(),
                basis,
                rationale: "r".into(),
                author: "f".into(),
                timestamp: None,
            };
            let got = classify_consensus(&item, &refs, &annotation, 4).map_err(|e| e.to_string())?.tier;
            let want = oracle_tier(&ratings, basis);
            if got != want {
                return Err(format!("boundary {ratings:?} {basis}: engine {got} oracle {want}"));
            }
            exact += 1;
        }
    }
    check(boundary.contains(&4), "2/3 boundary vectors not exercised")?;
    Ok(format!("{cases} cases agree incl. 2/3 boundary; {exact} exact-3/4 and 2/3 panel cases agree"))
}

fn saturation_permutation() -> Outcome {
    let st = insomnia_collected(false);
    let r = permutation_robustness(st.study(), PanelRole::SeniorExpert, EvaluationMode::Exhaustive)
        .map_err(|e| e.to_string())?;
    check(r.per_ordering_indices.len() == 720, format!("{} orderings", r.per_ordering_indices.len()))?;
    check(r.max_index <= 5 && r.robust, format!("max {} robust {}", r.max_index, r.robust))?;
    check(r.saturation_index == Some(5), format!("canonical index {:?}", r.saturation_index))?;
    let adv = insomnia_collected(true);
    let a = permutation_robustness(adv.study(), PanelRole::SeniorExpert, EvaluationMode::Exhaustive)
        .map_err(|e| e.to_string())?;
    check(!a.robust, format!("adversarial robust {} max {}", a.robust, a.max_index))?;
    Ok(format!("720 orderings, max index {}, robust; adversarial max {} not robust", r.max_index, a.max_index))
}

const SUB_UNIVERSE: [C; 3] = [C::ConditionalGeneral, C::EvidenceBased, C::Pragmatic];

fn subset(mask: u32) -> ReasoningCodeSet {
    SUB_UNIVERSE
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| *c)
        .collect()
}

/// Smallest covering prefix with no novel contributor after it, by direct
/// set construction over the raw cells. `cells[e][s]` is a 3-bit mask.
fn oracle_saturation(cells: &[Vec<u32>], novel: &[bool]) -> Option<usize> {
    let n = cells.len();
    let pairs = |k: usize| -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for row in &cells[..k] {
            for (s, &m) in row.iter().enumerate() {
                for c in 0..3 {
                    if m & (1 << c) != 0 {
                        out.insert((s, c));
                    }
                }
            }
        }
        out
    };
    let all = pairs(n);
    let k = (1..=n)
        .find(|&k| pairs(k) == all && novel[k..].iter().all(|f| !f))
        .unwrap_or(n);
    (k < n).then_some(k)
}

fn engine_saturation(cells: &[Vec<u32>], novel: &[bool]) -> delphi_core::Result<Option<usize>> {
    let sections = cells[0].len();
    let mut s = Study::new("o", "o");
    s.sections = (0..sections).map(|i| section(&format!("s{i}"), "x")).collect();
    s.items = (0..sections).map(|i| Item::fixed(format!("i{i}"), format!("s{i}"), "x")).collect();
    s.panel = seniors(cells.len());
    for (e, row) in cells.iter().enumerate() {
        for (i, &m) in row.iter().enumerate() {
            let mut r = Response::new(format!("i{i}"), format!("E{}", e + 1), 4, "j");
            r.codes = subset(m);
            r.novelty_flag = novel[e];
            s.responses.push(r);
        }
    }
    let order: Vec<PanelistId> = s.panel.iter().map(|p| p.id.clone()).collect();
    let t = cumulative_coverage(&s, PanelRole::SeniorExpert, &order)?;
    Ok(saturation_index(&t, &novelty_flags(&s)))
}

fn saturation_oracle() -> Outcome {
    let mut cases = 0u64;
    let mut sampled = 0u64;
    let mut rng_state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        rng_state
    };
    for experts in 1..=4usize {
        for sections in 1..=3usize {
            let cells_n = experts * sections;
            let exhaustive = cells_n <= 6;
            let total = if exhaustive { 7u64.pow(cells_n as u32) } else { 40_000 };
            for idx in 0..total {
                let mut code = if exhaustive { idx } else { next() };
                let cells: Vec<Vec<u32>> = (0..experts)
                    .map(|_| {
                        (0..sections)
                            .map(|_| {
                                let m = (code % 7) as u32 + 1;
                                code /= 7;
                                m
                            })
                            .collect()
                    })
                    .collect();
                let novelty_bits = if exhaustive { idx % (1 << experts) } else { next() % (1 << experts) };
                let novel: Vec<bool> = (0..experts).map(|e| novelty_bits & (1 << e) != 0).collect();
                let got = engine_saturation(&cells, &novel).map_err(|e| e.to_string())?;
                let want = oracle_saturation(&cells, &novel);
                if got != want {
                    return Err(format!("{cells:?} novelty {novel:?}: engine {got:?} oracle {want:?}"));
                }
                if exhaustive {
                    cases += 1;
                } else {
                    sampled += 1;
                }
            }
        }
    }
    Ok(format!("{cases} exhaustive panels and {sampled} sampled panels agree"))
}

fn corpus_enforcement() -> Outcome {
    let mut corpus = CorpusSpec::new(delphi_core::corpus::resolve_cutoff(&insomnia_meta()).map_err(|e| e.to_string())?);
    corpus.vetting = vetting();
    let fixture = twelve_sources();
    let sources: Vec<_> = fixture.iter().map(|(s, _)| s.clone()).collect();
    let decisions = corpus.admit_all(&sources).map_err(|e| e.to_string())?;
    let mut mismatches = Vec::new();
    for ((source, want), d) in fixture.iter().zip(&decisions) {
        let got = match &d.admission {
            Admission::Admitted { .. } => None,
            Admission::Rejected(r) => Some(r.to_string()),
        };
        if got.as_deref() != *want {
            mismatches.push(format!("{}: {got:?} vs {want:?}", source.id));
        }
    }
    check(mismatches.is_empty(), mismatches.join("; "))?;
    let admitted = decisions.iter().filter(|d| d.admission.is_admitted()).count();

    let st = insomnia_collected(false);
    let rogue = MockAdapter::new().with_answer("q03", "RATING: 4\nJUSTIFICATION: Screening helps.\nSOURCES: s01, s04");
    let mut fresh = new_store(insomnia_study(false));
    fresh
        .execute(FAC, Command::SetCorpus { corpus: CorpusSpec::new(delphi_core::corpus::resolve_cutoff(&insomnia_meta()).unwrap()) })
        .map_err(|e| e.to_string())?;
    fresh.admit_sources(FAC, sources, vetting()).map_err(|e| e.to_string())?;
    open_collection(&mut fresh);
    let err = fresh.ask_ai(FAC, &rogue, &"q03".into(), &ResponseFormat::Likert).unwrap_err();
    check(matches!(err, Error::CorpusViolation(ref v) if v == &["s04".to_string()]), format!("got {err}"))?;
    check(fresh.study().quarantine.len() == 1, "exchange not quarantined")?;
    check(fresh.study().responses.is_empty(), "quarantined answer was ingested")?;
    let all_admitted = st.study().ai_provenance.iter().all(|p| {
        p.cited_sources
            .iter()
            .all(|c| st.study().corpus.as_ref().unwrap().admitted.contains_key(c))
    });
    check(all_admitted, "an ingested AI answer cites an unadmitted source")?;
    Ok(format!("12 decisions match ({admitted} admitted), s04 citation quarantined"))
}

fn event_sourcing() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let original = insomnia_processed_in(Some(dir.path()));
    let reopened = StudyStore::open(dir.path(), Box::new(SystemClock)).map_err(|e| e.to_string())?;
    check(reopened.study() == original.study(), "replayed study differs")?;
    for (name, text) in reopened.render_reports().map_err(|e| e.to_string())? {
        let on_disk = std::fs::read(dir.path().join(name)).map_err(|e| e.to_string())?;
        check(on_disk == text.as_bytes(), format!("{name} differs after replay"))?;
    }
    Ok(format!("{} events replayed; report.md, tiers.csv, report.json byte-identical", reopened.events().len()))
}

fn role_comparison_regression() -> Outcome {
    let st = less_experienced();
    let c = role_comparison(st.study()).map_err(|e| e.to_string())?;
    let le = c.role(PanelRole::LessExperienced).ok_or("no less-experienced summary")?;
    check(
        le.senior_alignment_percent == "65.0" && le.neutral_share == "38.0",
        format!("alignment {}%, neutral {}%", le.senior_alignment_percent, le.neutral_share),
    )?;
    let mut study = st.study().clone();
    study.round_state = delphi_core::WorkflowState::Reported;
    let md = render_markdown(&consensus_report(&study).map_err(|e| e.to_string())?);
    check(md.contains("| less_experienced | 8 | 200 | 38.0% |"), "role table missing")?;
    Ok(format!(
        "{}/{} aligned = 65.0%, {} of 200 neutral = 38.0%",
        le.aligned_with_senior,
        le.compared_with_senior,
        le.neutral_count()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("tier tally regression", Duration::from_secs(1), tier_tally),
        ("consensus-rate regression", Duration::from_secs(1), consensus_rate),
        ("alignment regression", Duration::from_secs(1), alignment_regression),
        ("classifier oracle equivalence", Duration::from_secs(10), classifier_oracle),
        ("saturation permutation property", Duration::from_secs(5), saturation_permutation),
        ("saturation oracle equivalence", Duration::from_secs(30), saturation_oracle),
        ("corpus enforcement", Duration::from_secs(30), corpus_enforcement),
        ("event-sourcing round trip", Duration::from_secs(30), event_sourcing),
        ("role comparison regression", Duration::from_secs(30), role_comparison_regression),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({:.0?})", elapsed),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({:.0?})", elapsed);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
