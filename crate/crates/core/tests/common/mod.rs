#![allow(dead_code)]

use std::path::Path;

use delphi_core::adapter::MockAdapter;
use delphi_core::alignment::AlignmentCategory;
use delphi_core::consensus::CompatibilityBasis;
use delphi_core::corpus::{resolve_cutoff, Access, CorpusSpec, ResponseFormat, SourceCategory, SourceRecord, StudyDesign, StudyMeta, VettingApproval};
use delphi_core::model::{Item, PanelRole, Panelist, ReasoningCategory as C, ReasoningCodeSet, ResponseKey, Study, ThematicSection};
use delphi_core::store::{Command, ResponseDocument, ResponseRow, SequenceClock, StudyStore};
use delphi_core::WorkflowEvent as E;

pub const FAC: &str = "facilitator";

pub fn codes(cats: &[C]) -> ReasoningCodeSet {
    cats.iter().copied().collect()
}

pub fn section(id: &str, name: &str) -> ThematicSection {
    ThematicSection {
        id: id.into(),
        name: name.into(),
    }
}

pub fn rows(entries: impl IntoIterator<Item = (String, String, i64)>) -> ResponseDocument {
    ResponseDocument {
        schema_version: "1".into(),
        responses: entries
            .into_iter()
            .map(|(item, panelist, rating)| ResponseRow {
                justification: format!("{panelist} on {item}: rated {rating} from practice and the literature"),
                item_id: item,
                panelist_id: panelist,
                rating,
            })
            .collect(),
    }
}

pub fn new_store(study: Study) -> StudyStore {
    new_store_in(None, study)
}

pub fn new_store_in(dir: Option<&Path>, study: Study) -> StudyStore {
    StudyStore::create(dir, study, FAC, Box::new(SequenceClock::default())).unwrap()
}

pub fn open_collection(store: &mut StudyStore) {
    store.transition(FAC, E::FinalizeItems).unwrap();
    store.transition(FAC, E::OpenCollection).unwrap();
}

pub fn seniors(n: usize) -> Vec<Panelist> {
    (1..=n).map(|i| Panelist::new(format!("E{i}"), PanelRole::SeniorExpert)).collect()
}

// Insomnia panel: six senior experts and one AI respondent over twenty items.

pub const INSOMNIA_ITEMS: [(&str, &str); 20] = [
    ("A", "Take structured sleep history"),
    ("A", "Use validated questionnaires (e.g. ISI)"),
    ("A", "Screen high-risk patients"),
    ("A", "Use sleep diaries"),
    ("A", "Consider insomnia in comorbid presentations"),
    ("B", "PCPs can deliver brief CBT-I"),
    ("B", "Refer for full CBT-I if possible"),
    ("C", "Avoid pharmacotherapy as first-line"),
    ("B", "CBT-I should be first-line"),
    ("C", "DORAs appropriate in select cases"),
    ("B", "Sleep hygiene alone is insufficient"),
    ("B", "Use shared decision-making"),
    ("C", "Follow-up is necessary"),
    ("B", "Educate on sleep-wake regulation"),
    ("B", "Advise on caffeine, alcohol, screens"),
    ("B", "Deliver brief advice in routine visits"),
    ("B", "Use sleep restriction with caution"),
    ("C", "Refer complex cases to specialist"),
    ("B", "Use digital CBT-I apps"),
    ("C", "Insomnia should not be dismissed"),
];

/// AI Likert rating per item, as published.
pub const INSOMNIA_AI: [u8; 20] = [5, 5, 4, 5, 5, 4, 5, 4, 5, 3, 5, 5, 5, 5, 5, 4, 4, 5, 4, 5];

/// Items whose human category was moderate rather than strong agreement.
pub const INSOMNIA_MODERATE: [usize; 6] = [3, 6, 8, 16, 17, 19];

pub const INSOMNIA_MIXED: usize = 10;

pub const STRONG_VECTOR: [i64; 6] = [5, 5, 5, 5, 4, 5];
pub const MODERATE_VECTOR: [i64; 6] = [5, 4, 4, 4, 4, 3];
pub const MIXED_VECTOR: [i64; 6] = [4, 4, 4, 4, 3, 2];

pub fn insomnia_item_id(n: usize) -> String {
    format!("q{n:02}")
}

pub fn insomnia_ratings(n: usize) -> [i64; 6] {
    if n == INSOMNIA_MIXED {
        MIXED_VECTOR
    } else if INSOMNIA_MODERATE.contains(&n) {
        MODERATE_VECTOR
    } else {
        STRONG_VECTOR
    }
}

/// Reasoning categories each expert voices per section on the section's
/// detailed item; other items carry the subset drawn from {CG, EB, PB}.
pub fn insomnia_expert_codes(expert: usize, section: &str, adversarial: bool) -> ReasoningCodeSet {
    use C::*;
    let cats: &[C] = match (expert, section) {
        (1, _) => &[ConditionalGeneral, EvidenceBased, PrincipleBased],
        (2, "C") => &[EvidenceBased],
        (2, _) => &[ConditionalPopulation, EvidenceBased, Experiential],
        (3, "A") => &[ConditionalGeneral],
        (3, _) => &[ConditionalGeneral, ConditionalTemporal],
        (4, "A") => &[EvidenceBased],
        (4, "B") => &[EvidenceBased, Pragmatic],
        (4, _) => &[EvidenceBased, Pragmatic, Experiential, ConditionalPopulation],
        (5, "A") => &[ConditionalPopulation, EvidenceBased],
        (5, "B") => &[ConditionalPopulation, ConditionalTemporal, Pragmatic, EvidenceBased],
        (5, _) => &[ConditionalTemporal, Pragmatic, EvidenceBased],
        (6, "C") => &[EvidenceBased, PrincipleBased, Experiential, ConditionalPopulation],
        (6, "A") if adversarial => &[EvidenceBased, PrincipleBased, Experiential, Pragmatic],
        (6, _) => &[EvidenceBased, PrincipleBased, Experiential],
        _ => unreachable!(),
    };
    codes(cats)
}

/// Items carrying each section's full set of reasoning codes.
pub const INSOMNIA_DETAILED: [usize; 3] = [1, 6, 8];

pub fn insomnia_codes(expert: usize, item: usize, adversarial: bool) -> ReasoningCodeSet {
    let section = INSOMNIA_ITEMS[item - 1].0;
    let full = insomnia_expert_codes(expert, section, adversarial);
    if INSOMNIA_DETAILED.contains(&item) {
        full
    } else {
        full.intersection(codes(&[C::ConditionalGeneral, C::EvidenceBased, C::PrincipleBased]))
    }
}

pub fn insomnia_ai_codes(item: usize) -> ReasoningCodeSet {
    if INSOMNIA_DETAILED.contains(&item) {
        codes(&[C::ConditionalGeneral, C::ConditionalPopulation, C::EvidenceBased, C::PrincipleBased])
    } else {
        codes(&[C::ConditionalGeneral, C::EvidenceBased])
    }
}

pub fn insomnia_meta() -> StudyMeta {
    StudyMeta {
        design: StudyDesign::PanelBased,
        convening_date: None,
        publication_date: chrono::NaiveDate::from_ymd_opt(2024, 6, 1),
    }
}

/// Twelve-source mixed corpus with the expected decision for each source:
/// `None` for admission, otherwise the rejection text.
pub fn twelve_sources() -> Vec<(SourceRecord, Option<&'static str>)> {
    fn src(
        id: &str,
        title: &str,
        category: SourceCategory,
        date: &str,
        access: Access,
        trust: u8,
        note: Option<&str>,
    ) -> SourceRecord {
        SourceRecord {
            id: id.into(),
            title: title.into(),
            category,
            publication_date: date.into(),
            access,
            trust_level: trust,
            vetting_note: note.map(str::to_owned),
        }
    }
    use Access::*;
    use SourceCategory::*;
    vec![
        (src("s01", "National insomnia guideline", PublicGuideline, "2022-03-15", Public, 1, None), None),
        (src("s02", "CBT-I randomized trial, open access", OpenAccessLiterature, "2021-05", Public, 2, None), None),
        (
            src("s03", "Digital CBT-I meta-analysis", OpenAccessLiterature, "2023-11-02", Public, 2, None),
            Some("post-cutoff"),
        ),
        (
            src("s04", "Subscription-only pharmacotherapy review", OpenAccessLiterature, "2020-01-10", Restricted, 2, None),
            Some("excluded access class"),
        ),
        (
            src("s05", "Sleep society position statement", GreyLiterature, "2022-09-01", Public, 3, Some("society statement")),
            None,
        ),
        (
            src("s06", "Clinic newsletter on sleep hygiene", GreyLiterature, "2021-02-01", Public, 4, None),
            Some("unvetted grey literature"),
        ),
        (
            src("s07", "Sleep medicine textbook", CommercialTextbook, "2019-01-01", Public, 3, None),
            Some("excluded category"),
        ),
        (src("s08", "Viral post on melatonin", SocialMedia, "2022-01-01", Public, 4, None), Some("excluded category")),
        (src("s09", "Patient forum thread", Forum, "2021-06-01", Public, 4, None), Some("excluded category")),
        (src("s10", "Sleep coach blog", PersonalBlog, "2020-08-01", Public, 4, None), Some("excluded category")),
        (src("s11", "Public health agency sleep report", AgencyReport, "2019-10-01", Public, 2, None), None),
        (
            src("s12", "Hospital patient information site", VettedWebsite, "2021-11-30", Public, 4, Some("checked against guideline")),
            None,
        ),
    ]
}

pub fn vetting() -> Vec<VettingApproval> {
    ["s05", "s12"]
        .into_iter()
        .map(|id| VettingApproval {
            source_id: id.into(),
            approved_by: FAC.into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
        })
        .collect()
}

pub fn insomnia_study(adversarial: bool) -> Study {
    let mut s = Study::new(
        if adversarial { "insomnia-adversarial" } else { "insomnia" },
        "Chronic insomnia in primary care",
    );
    s.sections = vec![
        section("A", "Assessment"),
        section("B", "Behavioural care"),
        section("C", "Medication, follow-up and referral"),
    ];
    s.items = INSOMNIA_ITEMS
        .iter()
        .enumerate()
        .map(|(i, (sec, text))| Item::fixed(insomnia_item_id(i + 1), *sec, *text))
        .collect();
    s.panel = seniors(6);
    s.panel.push(Panelist::new("AI", PanelRole::AiRespondent));
    s
}

pub fn insomnia_mock() -> MockAdapter {
    let mut m = MockAdapter::new();
    for (i, rating) in INSOMNIA_AI.iter().enumerate() {
        m.insert(
            insomnia_item_id(i + 1).into(),
            format!(
                "RATING: {rating}\nJUSTIFICATION: Consistent with guideline recommendations, adjusted for patient context.\nSOURCES: s01, s02"
            ),
        );
    }
    m
}

/// Stops after collection: responses ingested and coded, novelty marked.
pub fn insomnia_collected(adversarial: bool) -> StudyStore {
    insomnia_collected_in(None, adversarial)
}

pub fn insomnia_collected_in(dir: Option<&Path>, adversarial: bool) -> StudyStore {
    let mut st = new_store_in(dir, insomnia_study(adversarial));
    let corpus = CorpusSpec::new(resolve_cutoff(&insomnia_meta()).unwrap());
    st.execute(FAC, Command::SetCorpus { corpus }).unwrap();
    st.admit_sources(FAC, twelve_sources().into_iter().map(|(s, _)| s).collect(), vetting())
        .unwrap();
    open_collection(&mut st);

    let mock = insomnia_mock();
    for n in 1..=20 {
        st.ask_ai(FAC, &mock, &insomnia_item_id(n).into(), &ResponseFormat::Likert).unwrap();
    }
    let doc = rows((1..=20).flat_map(|n| {
        insomnia_ratings(n)
            .into_iter()
            .enumerate()
            .map(move |(e, r)| (insomnia_item_id(n), format!("E{}", e + 1), r))
    }));
    let report = st.ingest_responses(FAC, &doc).unwrap();
    assert!(report.rejects.is_empty(), "{:?}", report.rejects);

    for n in 1..=20 {
        for e in 1..=6 {
            st.record_codes(
                "coder",
                ResponseKey::new(insomnia_item_id(n), format!("E{e}")),
                insomnia_codes(e, n, adversarial),
            )
            .unwrap();
        }
        st.record_codes("coder", ResponseKey::new(insomnia_item_id(n), "AI"), insomnia_ai_codes(n)).unwrap();
    }
    st.execute(
        FAC,
        Command::SetNovelty {
            response: ResponseKey::new(insomnia_item_id(6), "E5"),
            flag: true,
        },
    )
    .unwrap();
    st
}

/// Full pipeline through report emission.
pub fn insomnia_processed() -> StudyStore {
    insomnia_processed_in(None)
}

pub fn insomnia_processed_in(dir: Option<&Path>) -> StudyStore {
    let mut st = insomnia_collected_in(dir, false);
    st.transition(FAC, E::CloseCollection).unwrap();
    let dissent = ResponseKey::new(insomnia_item_id(INSOMNIA_MIXED), "E6");
    st.request_clarification(FAC, dissent.clone(), "Which patients did you have in mind?").unwrap();
    st.record_answer("E6", dissent, 0, "Older adults with falls risk").unwrap();
    st.transition(FAC, E::BeginAdjudication).unwrap();
    st.execute(FAC, Command::Classify).unwrap();
    st.execute(FAC, Command::ClassifyAlignment).unwrap();
    st.execute(
        FAC,
        Command::OverrideAlignment {
            item_id: insomnia_item_id(8).into(),
            category: AlignmentCategory::PartiallyAligned,
            rationale: "AI omits the tapering caveats the panel raised".into(),
        },
    )
    .unwrap();
    st.transition(FAC, E::CompleteClassification).unwrap();
    st.emit_report(FAC).unwrap();
    st
}

/// Rating vector and facilitator basis (with any post-classification
/// adjudication) used to place an item in a target tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Strong,
    ConditionalAnnotated,
    ConditionalAdjudicated,
    Operational,
    DivergentSplit,
    DivergentIrreconcilable,
}

impl Placement {
    fn ratings(self) -> [i64; 6] {
        match self {
            Placement::Strong => STRONG_VECTOR,
            Placement::ConditionalAnnotated => [5, 4, 4, 4, 3, 2],
            Placement::ConditionalAdjudicated | Placement::DivergentSplit => [5, 4, 2, 2, 3, 4],
            Placement::Operational => MIXED_VECTOR,
            Placement::DivergentIrreconcilable => [5, 5, 5, 5, 2, 1],
        }
    }
}

/// Senior-only study placing item `i` per `plan[i]`, processed to classified.
pub fn tiered_study(id: &str, plan: &[Placement]) -> StudyStore {
    let mut s = Study::new(id, format!("{id} guidance"));
    s.sections = vec![section("S1", "Planning"), section("S2", "Execution"), section("S3", "Recovery")];
    s.items = (0..plan.len())
        .map(|i| Item::fixed(format!("p{:03}", i + 1), ["S1", "S2", "S3"][i % 3], format!("Principle {}", i + 1)))
        .collect();
    s.panel = seniors(6);
    let mut st = new_store(s);
    open_collection(&mut st);
    let doc = rows(plan.iter().enumerate().flat_map(|(i, p)| {
        p.ratings()
            .into_iter()
            .enumerate()
            .map(move |(e, r)| (format!("p{:03}", i + 1), format!("E{}", e + 1), r))
    }));
    assert!(st.ingest_responses(FAC, &doc).unwrap().rejects.is_empty());
    st.transition(FAC, E::CloseCollection).unwrap();
    st.transition(FAC, E::BeginAdjudication).unwrap();
    for (i, p) in plan.iter().enumerate() {
        let basis = match p {
            Placement::ConditionalAnnotated => CompatibilityBasis::ConditionallyReconciled,
            Placement::DivergentIrreconcilable => CompatibilityBasis::Irreconcilable,
            _ => continue,
        };
        st.execute(
            FAC,
            Command::Annotate {
                item_id: format!("p{:03}", i + 1).into(),
                basis,
                rationale: "positions depend on athlete level".into(),
            },
        )
        .unwrap();
    }
    st.execute(FAC, Command::Classify).unwrap();
    for (i, p) in plan.iter().enumerate() {
        if *p == Placement::ConditionalAdjudicated {
            st.execute(
                FAC,
                Command::Adjudicate {
                    item_id: format!("p{:03}", i + 1).into(),
                    basis: CompatibilityBasis::ConditionallyReconciled,
                    rationale: "disagreement resolves by training phase".into(),
                },
            )
            .unwrap();
        }
    }
    st.transition(FAC, E::CompleteClassification).unwrap();
    st
}

fn interleave(groups: &[(Placement, usize)]) -> Vec<Placement> {
    let mut left: Vec<(Placement, usize)> = groups.to_vec();
    let mut out = Vec::new();
    while left.iter().any(|(_, n)| *n > 0) {
        for (p, n) in left.iter_mut() {
            if *n > 0 {
                out.push(*p);
                *n -= 1;
            }
        }
    }
    out
}

/// 60 strong, 94 conditional, 5 operational.
pub fn strength_plan() -> Vec<Placement> {
    interleave(&[
        (Placement::Strong, 60),
        (Placement::ConditionalAnnotated, 80),
        (Placement::ConditionalAdjudicated, 14),
        (Placement::Operational, 5),
    ])
}

/// 132 of 143 in consensus; 11 divergent.
pub fn endurance_plan() -> Vec<Placement> {
    interleave(&[
        (Placement::Strong, 70),
        (Placement::ConditionalAnnotated, 40),
        (Placement::ConditionalAdjudicated, 10),
        (Placement::Operational, 12),
        (Placement::DivergentSplit, 6),
        (Placement::DivergentIrreconcilable, 5),
    ])
}

/// 25 items rated by six senior experts and eight less-experienced panelists.
/// Items 1-2 draw a neutral senior plurality; the rest a positive one.
pub fn less_experienced() -> StudyStore {
    let mut s = Study::new("le-compare", "Role comparison");
    s.sections = vec![section("S1", "Training"), section("S2", "Recovery")];
    s.items = (1..=25)
        .map(|i| Item::fixed(format!("r{i:02}"), if i <= 12 { "S1" } else { "S2" }, format!("Principle {i}")))
        .collect();
    s.panel = seniors(6);
    s.panel
        .extend((1..=8).map(|i| Panelist::new(format!("L{i}"), PanelRole::LessExperienced)));
    let mut st = new_store(s);
    open_collection(&mut st);

    // 184 ratings on the positive items: 114 agreeing, 60 neutral, 10 opposing.
    let mut pool: Vec<i64> = Vec::new();
    for i in 0..184 {
        pool.push(match i % 92 {
            0..=56 => [4, 5][i % 2],
            57..=86 => 3,
            _ => [2, 1][i % 2],
        });
    }
    let mut entries = Vec::new();
    for i in 1..=25usize {
        let item = format!("r{i:02}");
        let senior: [i64; 6] = if i <= 2 { [3, 3, 3, 3, 4, 2] } else { [5, 5, 4, 4, 4, 5] };
        for (e, r) in senior.into_iter().enumerate() {
            entries.push((item.clone(), format!("E{}", e + 1), r));
        }
        for l in 0..8usize {
            let r = if i <= 2 { 3 } else { pool[(i - 3) * 8 + l] };
            entries.push((item.clone(), format!("L{}", l + 1), r));
        }
    }
    assert!(st.ingest_responses(FAC, &rows(entries)).unwrap().rejects.is_empty());
    let keys: Vec<_> = st.study().responses.iter().map(|r| r.key()).collect();
    for key in keys {
        let c = if key.panelist_id.as_str().starts_with('E') {
            codes(&[C::EvidenceBased, C::ConditionalPopulation])
        } else {
            codes(&[C::Experiential])
        };
        st.record_codes("coder", key, c).unwrap();
    }
    st.transition(FAC, E::CloseCollection).unwrap();
    st.transition(FAC, E::BeginAdjudication).unwrap();
    st.execute(FAC, Command::Classify).unwrap();
    st.transition(FAC, E::CompleteClassification).unwrap();
    st
}
