//! Event-sourced study store.
//!
//! `events.jsonl` in the study directory is the source of truth; `study.json`
//! is a convenience snapshot. Every mutation goes through [`StudyStore::execute`],
//! which validates the command against a copy of the study and appends exactly
//! one [`AuditEvent`] when it succeeds.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{ai_respond, AiAdapter, AiAnswer, AnswerValue, ProvenanceLog, ProvenanceStatus};
use crate::alignment::{classify_pending_alignment, override_alignment, AlignmentCategory};
use crate::coding::record_codes;
use crate::consensus::{classify_pending, reclassify, CompatibilityAnnotation, CompatibilityBasis};
use crate::corpus::{build_prompt, AdmissionDecision, CorpusSpec, ResponseFormat, SourceRecord, VettingApproval};
use crate::error::{Error, Result};
use crate::model::{
    validate_study, ClarificationExchange, Item, ItemId, ItemKind, ItemOrigin, PanelistId, ReasoningCodeSet, Response,
    ResponseKey, SectionId, Study, Timestamp, ValidationReport, Violation, ViolationKind, SCHEMA_VERSION,
};
use crate::report::render_all;
use crate::workflow::{transition, WorkflowEvent, WorkflowState};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "study.json";

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

/// Deterministic clock: one second per reading from a fixed start.
pub struct SequenceClock {
    start: DateTime<Utc>,
    ticks: AtomicU64,
}

impl SequenceClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            start,
            ticks: AtomicU64::new(0),
        }
    }
}

impl Default for SequenceClock {
    fn default() -> Self {
        Self::new(DateTime::from_timestamp(1_735_689_600, 0).expect("valid epoch"))
    }
}

impl Clock for SequenceClock {
    fn now(&self) -> Timestamp {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        (self.start + Duration::seconds(n as i64)).to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Command {
    CreateStudy {
        study: Box<Study>,
    },
    ProposeItem {
        item_id: ItemId,
        section_id: SectionId,
        statement: String,
    },
    Transition {
        event: WorkflowEvent,
    },
    IngestResponses {
        panelist_id: PanelistId,
        responses: Vec<Response>,
    },
    RecordCodes {
        response: ResponseKey,
        codes: ReasoningCodeSet,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    SetNovelty {
        response: ResponseKey,
        flag: bool,
    },
    Annotate {
        item_id: ItemId,
        basis: CompatibilityBasis,
        #[serde(default)]
        rationale: String,
    },
    Classify,
    Adjudicate {
        item_id: ItemId,
        basis: CompatibilityBasis,
        rationale: String,
    },
    ClassifyAlignment,
    OverrideAlignment {
        item_id: ItemId,
        category: AlignmentCategory,
        rationale: String,
    },
    RequestClarification {
        response: ResponseKey,
        question: String,
    },
    AnswerClarification {
        response: ResponseKey,
        exchange: usize,
        answer: String,
    },
    SetCorpus {
        corpus: CorpusSpec,
    },
    AdmitSources {
        sources: Vec<SourceRecord>,
        #[serde(default)]
        vetting: Vec<VettingApproval>,
    },
    IngestAiAnswer {
        answer: AiAnswer,
    },
    QuarantineAiAnswer {
        provenance: ProvenanceLog,
    },
}

impl Command {
    pub fn action(&self) -> &'static str {
        match self {
            Command::CreateStudy { .. } => "create_study",
            Command::ProposeItem { .. } => "propose_item",
            Command::Transition { .. } => "transition",
            Command::IngestResponses { .. } => "ingest_responses",
            Command::RecordCodes { .. } => "record_codes",
            Command::SetNovelty { .. } => "set_novelty",
            Command::Annotate { .. } => "annotate",
            Command::Classify => "classify",
            Command::Adjudicate { .. } => "adjudicate",
            Command::ClassifyAlignment => "classify_alignment",
            Command::OverrideAlignment { .. } => "override_alignment",
            Command::RequestClarification { .. } => "request_clarification",
            Command::AnswerClarification { .. } => "answer_clarification",
            Command::SetCorpus { .. } => "set_corpus",
            Command::AdmitSources { .. } => "admit_sources",
            Command::IngestAiAnswer { .. } => "ingest_ai_answer",
            Command::QuarantineAiAnswer { .. } => "quarantine_ai_answer",
        }
    }

    fn subject(&self, study_id: &str) -> String {
        match self {
            Command::CreateStudy { study } => study.id.to_string(),
            Command::ProposeItem { item_id, .. }
            | Command::Annotate { item_id, .. }
            | Command::Adjudicate { item_id, .. }
            | Command::OverrideAlignment { item_id, .. } => item_id.to_string(),
            Command::IngestResponses { panelist_id, .. } => panelist_id.to_string(),
            Command::RecordCodes { response, .. }
            | Command::SetNovelty { response, .. }
            | Command::RequestClarification { response, .. }
            | Command::AnswerClarification { response, .. } => response.to_response_id(),
            Command::IngestAiAnswer { answer } => answer.item_id.to_string(),
            Command::QuarantineAiAnswer { provenance } => provenance.item_id.to_string(),
            Command::Transition { .. }
            | Command::Classify
            | Command::ClassifyAlignment
            | Command::SetCorpus { .. }
            | Command::AdmitSources { .. } => study_id.to_owned(),
        }
    }

    /// Hex SHA-256 of the command's JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("commands serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub actor: String,
    pub action: String,
    pub subject: String,
    pub timestamp: Timestamp,
    pub payload_digest: String,
    pub payload: Command,
}

fn require(study: &Study, allowed: &[WorkflowState], action: &str) -> Result<()> {
    if allowed.contains(&study.round_state) {
        Ok(())
    } else {
        Err(Error::InvalidTransition {
            state: study.round_state,
            action: action.to_owned(),
        })
    }
}

fn response_violations(study: &Study, rows: &[(usize, &Response)]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (row, r) in rows {
        let entity = r.key().to_response_id();
        let mut push = |kind| out.push(Violation::new(kind, entity.clone()).at_row(*row));
        if study.item(&r.item_id).is_none() {
            push(ViolationKind::UnknownItem);
        }
        if study.panelist(&r.panelist_id).is_none() {
            push(ViolationKind::UnknownPanelist);
        }
        if !(1..=5).contains(&r.rating) {
            push(ViolationKind::RatingOutOfRange);
        }
        if r.justification.trim().is_empty() {
            push(ViolationKind::MissingJustification);
        }
        if study.response(&r.key()).is_some() || !seen.insert(r.key()) {
            push(ViolationKind::DuplicateResponse);
        }
    }
    out
}

fn check_annotation(study: &Study, item_id: &ItemId) -> Result<()> {
    if study.item(item_id).is_none() {
        return Err(Error::UnknownItem(item_id.to_string()));
    }
    Ok(())
}

/// Applies one event. Pure over (study, event); replay calls it in order.
fn apply(study: Option<Study>, actor: &str, ts: &str, cmd: &Command) -> Result<Study> {
    use WorkflowState as S;
    let mut study = match (study, cmd) {
        (None, Command::CreateStudy { study }) => {
            let report = validate_study(study);
            if !report.is_empty() {
                return Err(Error::InvalidStudy(
                    report.violations.iter().map(|v| format!("{}: {}", v.entity, v.message)).collect::<Vec<_>>().join("; "),
                ));
            }
            if study.round_state != S::Draft || !study.responses.is_empty() || !study.classifications.is_empty() {
                return Err(Error::InvalidStudy("a new study starts in draft with no responses".into()));
            }
            return Ok((**study).clone());
        }
        (Some(_), Command::CreateStudy { .. }) => return Err(Error::InvalidStudy("study already exists".into())),
        (None, _) => return Err(Error::InvalidStudy("no study".into())),
        (Some(s), _) => s,
    };
    let actor_id = PanelistId::new(actor);
    let action = cmd.action();

    match cmd {
        Command::CreateStudy { .. } => unreachable!(),
        Command::ProposeItem {
            item_id,
            section_id,
            statement,
        } => {
            require(&study, &[S::Collecting], action)?;
            if study.item(item_id).is_some() {
                return Err(Error::InvalidStudy(format!("item {item_id} already exists")));
            }
            if !study
                .items
                .iter()
                .any(|i| &i.section_id == section_id && i.kind == ItemKind::OtherSlot)
            {
                return Err(Error::InvalidStudy(format!("section {section_id} has no \"Other\" slot")));
            }
            if statement.trim().is_empty() {
                return Err(Error::InvalidStudy("empty statement".into()));
            }
            study.items.push(Item {
                id: item_id.clone(),
                section_id: section_id.clone(),
                statement: statement.clone(),
                kind: ItemKind::OtherSlot,
                origin: ItemOrigin::ParticipantProposed,
            });
        }
        Command::Transition { event } => {
            let next = transition(study.round_state, *event)?;
            match event {
                WorkflowEvent::CompleteClassification => {
                    let quorate = study.quorate_items();
                    if quorate.is_empty() {
                        return Err(Error::IncompleteClassification("no quorate items".into()));
                    }
                    let missing: Vec<_> = quorate
                        .iter()
                        .filter(|i| !study.classifications.contains_key(&i.id))
                        .map(|i| i.id.to_string())
                        .collect();
                    if !missing.is_empty() {
                        return Err(Error::IncompleteClassification(format!("unclassified: {}", missing.join(", "))));
                    }
                }
                WorkflowEvent::EmitReport => {
                    let mut probe = study.clone();
                    probe.round_state = next;
                    crate::report::consensus_report(&probe)?;
                }
                _ => {}
            }
            study.round_state = next;
        }
        Command::IngestResponses { panelist_id, responses } => {
            require(&study, &[S::Collecting], action)?;
            let rows: Vec<_> = responses.iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
            let mut violations = response_violations(&study, &rows);
            if responses.iter().any(|r| &r.panelist_id != panelist_id) {
                violations.push(Violation::new(ViolationKind::UnknownPanelist, panelist_id.as_str()));
            }
            if let Some(v) = violations.first() {
                return Err(Error::InvalidStudy(format!("{}: {}", v.entity, v.message)));
            }
            for r in responses {
                let mut r = r.clone();
                r.codes = ReasoningCodeSet::EMPTY;
                r.novelty_flag = false;
                r.clarification_thread.clear();
                study.responses.push(r);
            }
        }
        Command::RecordCodes { response, codes, note } => {
            record_codes(&mut study, response, *codes, &actor_id, ts.to_owned(), note.clone())?;
        }
        Command::SetNovelty { response, flag } => {
            study
                .response_mut(response)
                .ok_or_else(|| Error::UnknownResponse(response.to_response_id()))?
                .novelty_flag = *flag;
        }
        Command::Annotate {
            item_id,
            basis,
            rationale,
        } => {
            require(&study, &[S::Collecting, S::Clarifying, S::Adjudicating], action)?;
            check_annotation(&study, item_id)?;
            if let Some(c) = study.classifications.get(item_id) {
                return Err(Error::IllegalReclassification { from: c.tier.to_string() });
            }
            let a = CompatibilityAnnotation::new(item_id.clone(), *basis, rationale.clone(), actor_id, ts.to_owned())?;
            study.annotations.insert(item_id.clone(), a);
        }
        Command::Classify => {
            require(&study, &[S::Clarifying, S::Adjudicating], action)?;
            for c in classify_pending(&study)? {
                study.classifications.insert(c.item_id.clone(), c);
            }
        }
        Command::Adjudicate {
            item_id,
            basis,
            rationale,
        } => {
            require(&study, &[S::Adjudicating], action)?;
            check_annotation(&study, item_id)?;
            let current = study
                .classifications
                .get(item_id)
                .ok_or_else(|| Error::IncompleteClassification(format!("item {item_id} unclassified")))?;
            let a = CompatibilityAnnotation::new(item_id.clone(), *basis, rationale.clone(), actor_id, ts.to_owned())?;
            let next = reclassify(current, &a)?;
            study.annotations.insert(item_id.clone(), a);
            study.classifications.insert(item_id.clone(), next);
        }
        Command::ClassifyAlignment => {
            require(&study, &[S::Clarifying, S::Adjudicating, S::Classified], action)?;
            for r in classify_pending_alignment(&study)? {
                study.alignments.insert(r.item_id.clone(), r);
            }
        }
        Command::OverrideAlignment {
            item_id,
            category,
            rationale,
        } => {
            require(&study, &[S::Clarifying, S::Adjudicating, S::Classified], action)?;
            let record = study
                .alignments
                .get(item_id)
                .ok_or_else(|| Error::IncompleteAlignment(format!("item {item_id} has no alignment record")))?;
            let next = override_alignment(record, *category, rationale.clone(), actor_id, ts.to_owned())?;
            study.alignments.insert(item_id.clone(), next);
        }
        Command::RequestClarification { response, question } => {
            require(&study, &[S::Clarifying, S::Adjudicating], action)?;
            let target = study
                .response_mut(response)
                .ok_or_else(|| Error::UnknownResponse(response.to_response_id()))?;
            if question.trim().is_empty() {
                return Err(Error::EmptyQuestion);
            }
            target.clarification_thread.push(ClarificationExchange {
                question: question.clone(),
                answer: None,
                timestamp: ts.to_owned(),
                answered_at: None,
            });
        }
        Command::AnswerClarification {
            response,
            exchange,
            answer,
        } => {
            require(&study, &[S::Clarifying, S::Adjudicating], action)?;
            let state = study.round_state;
            let target = study
                .response_mut(response)
                .ok_or_else(|| Error::UnknownResponse(response.to_response_id()))?;
            let ex = target
                .clarification_thread
                .get_mut(*exchange)
                .ok_or_else(|| Error::UnknownResponse(format!("{} exchange {exchange}", response.to_response_id())))?;
            if !ex.is_open() {
                return Err(Error::InvalidTransition {
                    state,
                    action: "answer closed clarification".into(),
                });
            }
            ex.answer = Some(answer.clone());
            ex.answered_at = Some(ts.to_owned());
        }
        Command::SetCorpus { corpus } => {
            require(&study, &[S::Draft, S::ItemsFinalized], action)?;
            study.corpus = Some(corpus.clone());
        }
        Command::AdmitSources { sources, vetting } => {
            require(&study, &[S::Draft, S::ItemsFinalized, S::Collecting], action)?;
            let corpus = study
                .corpus
                .as_mut()
                .ok_or_else(|| Error::InvalidStudy("no corpus configured".into()))?;
            corpus.vetting.extend(vetting.iter().cloned());
            corpus.admit_all(sources)?;
        }
        Command::IngestAiAnswer { answer } => {
            require(&study, &[S::Collecting], action)?;
            let ai = study
                .ai_respondent()
                .ok_or_else(|| Error::NotAiRespondent("no AI respondent on the panel".into()))?
                .id
                .clone();
            if answer.provenance.status != ProvenanceStatus::Accepted {
                return Err(Error::MalformedAiResponse("provenance not accepted".into()));
            }
            let admitted = study.corpus.as_ref().map(|c| &c.admitted);
            let outside: Vec<String> = answer
                .cited_sources
                .iter()
                .filter(|s| !admitted.is_some_and(|a| a.contains_key(*s)))
                .cloned()
                .collect();
            if !outside.is_empty() {
                return Err(Error::CorpusViolation(outside));
            }
            if let AnswerValue::Likert(_) = answer.value {
                let r = answer.to_response(&ai)?;
                let v = response_violations(&study, &[(1, &r)]);
                if let Some(v) = v.first() {
                    return Err(Error::InvalidStudy(format!("{}: {}", v.entity, v.message)));
                }
                study.responses.push(r);
            } else if study.item(&answer.item_id).is_none() {
                return Err(Error::UnknownItem(answer.item_id.to_string()));
            }
            study.ai_provenance.push(answer.provenance.clone());
        }
        Command::QuarantineAiAnswer { provenance } => {
            if provenance.status == ProvenanceStatus::Accepted {
                return Err(Error::InvalidStudy("accepted exchanges are not quarantined".into()));
            }
            study.quarantine.push(provenance.clone());
        }
    }
    Ok(study)
}

/// Rebuilds a study from its audit log.
pub fn replay(events: &[AuditEvent]) -> Result<Study> {
    let mut study = None;
    for (i, ev) in events.iter().enumerate() {
        if ev.seq != i as u64 + 1 {
            return Err(Error::MalformedDocument(format!("event {} out of sequence", ev.seq)));
        }
        if ev.payload_digest != ev.payload.digest() || ev.action != ev.payload.action() {
            return Err(Error::MalformedDocument(format!("event {} fails its digest", ev.seq)));
        }
        study = Some(apply(study, &ev.actor, &ev.timestamp, &ev.payload)?);
    }
    study.ok_or_else(|| Error::MalformedDocument("empty audit log".into()))
}

pub fn read_events(path: &Path) -> Result<Vec<AuditEvent>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedDocument(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Response rows as submitted: one document may carry several panelists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub item_id: String,
    pub panelist_id: String,
    pub rating: i64,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseDocument {
    pub schema_version: String,
    pub responses: Vec<ResponseRow>,
}

impl ResponseDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::MalformedDocument(e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::MalformedDocument(format!("unsupported schema_version {}", doc.schema_version)));
        }
        Ok(doc)
    }

    /// `item_id,panelist_id,rating,justification` with a header row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let responses = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ResponseRow>, _>>()
            .map_err(|e| Error::MalformedDocument(e.to_string()))?;
        Ok(Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            responses,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::MalformedDocument(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema_version: String,
    pub accepted_panelists: Vec<PanelistId>,
    pub rejected_panelists: Vec<PanelistId>,
    pub rows_stored: usize,
    pub rejects: ValidationReport,
}

/// Row number, the parsed response, and the raw rating when out of range.
type ParsedRow = (usize, Response, Option<i64>);

pub struct StudyStore {
    dir: Option<PathBuf>,
    study: Study,
    events: Vec<AuditEvent>,
    clock: Box<dyn Clock>,
}

impl std::fmt::Debug for StudyStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudyStore")
            .field("dir", &self.dir)
            .field("study", &self.study.id)
            .field("events", &self.events.len())
            .finish()
    }
}

impl StudyStore {
    /// Starts a study. With a directory, the directory must not already hold one.
    pub fn create(dir: Option<&Path>, study: Study, actor: &str, clock: Box<dyn Clock>) -> Result<Self> {
        if let Some(d) = dir {
            if d.join(EVENTS_FILE).exists() {
                return Err(Error::InvalidStudy(format!("{} already holds a study", d.display())));
            }
            fs::create_dir_all(d)?;
        }
        let cmd = Command::CreateStudy { study: Box::new(study) };
        let ts = clock.now();
        let created = apply(None, actor, &ts, &cmd)?;
        let mut store = Self {
            dir: dir.map(Path::to_path_buf),
            study: created,
            events: Vec::new(),
            clock,
        };
        store.append(actor, ts, cmd)?;
        store.save_snapshot()?;
        Ok(store)
    }

    /// Loads a study by replaying its audit log.
    pub fn open(dir: &Path, clock: Box<dyn Clock>) -> Result<Self> {
        let path = dir.join(EVENTS_FILE);
        if !path.exists() {
            return Err(Error::InvalidStudy(format!("no study at {}", dir.display())));
        }
        let events = read_events(&path)?;
        let study = replay(&events)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            study,
            events,
            clock,
        })
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn append(&mut self, actor: &str, timestamp: Timestamp, cmd: Command) -> Result<()> {
        let event = AuditEvent {
            seq: self.events.len() as u64 + 1,
            actor: actor.to_owned(),
            action: cmd.action().to_owned(),
            subject: cmd.subject(self.study.id.as_str()),
            timestamp,
            payload_digest: cmd.digest(),
            payload: cmd,
        };
        if let Some(dir) = &self.dir {
            let mut line = serde_json::to_string(&event)?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS_FILE))?;
            f.write_all(line.as_bytes())?;
        }
        self.events.push(event);
        Ok(())
    }

    /// Validates and applies one command; on success logs exactly one event.
    pub fn execute(&mut self, actor: &str, cmd: Command) -> Result<&AuditEvent> {
        let ts = self.clock.now();
        let next = apply(Some(self.study.clone()), actor, &ts, &cmd)?;
        self.append(actor, ts, cmd)?;
        self.study = next;
        Ok(self.events.last().expect("just appended"))
    }

    pub fn save_snapshot(&self) -> Result<()> {
        if let Some(dir) = &self.dir {
            let mut text = serde_json::to_string_pretty(&self.study)?;
            text.push('\n');
            fs::write(dir.join(SNAPSHOT_FILE), text)?;
        }
        Ok(())
    }

    pub fn transition(&mut self, actor: &str, event: WorkflowEvent) -> Result<WorkflowState> {
        self.execute(actor, Command::Transition { event })?;
        Ok(self.study.round_state)
    }

    /// Stores each panelist's rows only if all of them pass; rejects carry
    /// 1-based row numbers within the document.
    pub fn ingest_responses(&mut self, actor: &str, doc: &ResponseDocument) -> Result<IngestReport> {
        require(&self.study, &[WorkflowState::Collecting], "ingest_responses")?;
        let mut groups: BTreeMap<&str, Vec<ParsedRow>> = BTreeMap::new();
        let mut order = Vec::new();
        for (i, row) in doc.responses.iter().enumerate() {
            let rating = u8::try_from(row.rating).ok().filter(|r| (1..=5).contains(r));
            let r = Response::new(
                row.item_id.as_str(),
                row.panelist_id.as_str(),
                rating.unwrap_or(0),
                row.justification.as_str(),
            );
            if !groups.contains_key(row.panelist_id.as_str()) {
                order.push(row.panelist_id.as_str());
            }
            groups
                .entry(row.panelist_id.as_str())
                .or_default()
                .push((i + 1, r, rating.is_none().then_some(row.rating)));
        }

        let mut report = IngestReport {
            schema_version: SCHEMA_VERSION.to_owned(),
            accepted_panelists: Vec::new(),
            rejected_panelists: Vec::new(),
            rows_stored: 0,
            rejects: ValidationReport::default(),
        };
        for panelist in order {
            let rows = &groups[panelist];
            let refs: Vec<_> = rows.iter().map(|(n, r, _)| (*n, r)).collect();
            let mut violations = response_violations(&self.study, &refs);
            for v in &mut violations {
                if v.kind == ViolationKind::RatingOutOfRange {
                    if let Some((_, _, Some(raw))) = rows.iter().find(|(n, _, _)| Some(*n) == v.row) {
                        v.message = format!("{} ({raw})", v.message);
                    }
                }
            }
            let id = PanelistId::new(panelist);
            if violations.is_empty() {
                let responses: Vec<Response> = rows.iter().map(|(_, r, _)| r.clone()).collect();
                report.rows_stored += responses.len();
                self.execute(
                    actor,
                    Command::IngestResponses {
                        panelist_id: id.clone(),
                        responses,
                    },
                )?;
                report.accepted_panelists.push(id);
            } else {
                for v in violations {
                    report.rejects.push(v);
                }
                report.rejected_panelists.push(id);
            }
        }
        Ok(report)
    }

    /// A workflow step with its side effects: entering adjudication from
    /// clarification first classifies every pending item, and emitting the
    /// report writes the output files.
    pub fn advance(&mut self, actor: &str, event: WorkflowEvent) -> Result<WorkflowState> {
        match event {
            WorkflowEvent::EmitReport => {
                self.emit_report(actor)?;
                return Ok(self.study.round_state);
            }
            WorkflowEvent::BeginAdjudication if self.study.round_state == WorkflowState::Clarifying => {
                self.classify_all(actor)?;
            }
            _ => {}
        }
        self.transition(actor, event)
    }

    /// What `ingest_responses` would report, without touching the store.
    pub fn check_responses(&self, doc: &ResponseDocument) -> Result<IngestReport> {
        let mut scratch = StudyStore {
            dir: None,
            study: self.study.clone(),
            events: self.events.clone(),
            clock: Box::new(SequenceClock::default()),
        };
        scratch.ingest_responses("dry-run", doc)
    }

    /// Classifies every pending quorate item and dually-rated item.
    /// Returns the number of events written (zero when nothing was pending).
    pub fn classify_all(&mut self, actor: &str) -> Result<usize> {
        let mut written = 0;
        if !classify_pending(&self.study)?.is_empty() {
            self.execute(actor, Command::Classify)?;
            written += 1;
        }
        if !classify_pending_alignment(&self.study)?.is_empty() {
            self.execute(actor, Command::ClassifyAlignment)?;
            written += 1;
        }
        Ok(written)
    }

    /// Routes a facilitator basis decision: an annotation while the item is
    /// unclassified outside adjudication, an adjudication otherwise.
    pub fn decide(&mut self, actor: &str, item_id: ItemId, basis: CompatibilityBasis, rationale: &str) -> Result<&AuditEvent> {
        let classified = self.study.classifications.contains_key(&item_id);
        let rationale = rationale.to_owned();
        let cmd = if classified || self.study.round_state == WorkflowState::Adjudicating {
            Command::Adjudicate {
                item_id,
                basis,
                rationale,
            }
        } else {
            Command::Annotate {
                item_id,
                basis,
                rationale,
            }
        };
        self.execute(actor, cmd)
    }

    pub fn record_codes(&mut self, coder: &str, response: ResponseKey, codes: ReasoningCodeSet) -> Result<()> {
        self.execute(coder, Command::RecordCodes { response, codes, note: None })?;
        Ok(())
    }

    pub fn request_clarification(
        &mut self,
        actor: &str,
        response: ResponseKey,
        question: &str,
    ) -> Result<ClarificationExchange> {
        self.execute(
            actor,
            Command::RequestClarification {
                response: response.clone(),
                question: question.to_owned(),
            },
        )?;
        Ok(self.study.response(&response).and_then(|r| r.clarification_thread.last()).cloned().expect("just added"))
    }

    pub fn record_answer(&mut self, actor: &str, response: ResponseKey, exchange: usize, answer: &str) -> Result<()> {
        self.execute(
            actor,
            Command::AnswerClarification {
                response,
                exchange,
                answer: answer.to_owned(),
            },
        )?;
        Ok(())
    }

    pub fn admit_sources(
        &mut self,
        actor: &str,
        sources: Vec<SourceRecord>,
        vetting: Vec<VettingApproval>,
    ) -> Result<Vec<AdmissionDecision>> {
        let mut probe = self
            .study
            .corpus
            .clone()
            .ok_or_else(|| Error::InvalidStudy("no corpus configured".into()))?;
        probe.vetting.extend(vetting.iter().cloned());
        let decisions = probe.admit_all(&sources)?;
        self.execute(actor, Command::AdmitSources { sources, vetting })?;
        Ok(decisions)
    }

    /// Prompts the AI respondent on one item. Accepted answers are ingested;
    /// refused exchanges are quarantined and the refusal returned.
    pub fn ask_ai(&mut self, actor: &str, adapter: &dyn AiAdapter, item: &ItemId, format: &ResponseFormat) -> Result<AiAnswer> {
        let corpus = self
            .study
            .corpus
            .as_ref()
            .ok_or_else(|| Error::InvalidStudy("no corpus configured".into()))?;
        let item = self.study.item(item).ok_or_else(|| Error::UnknownItem(item.to_string()))?;
        let prompt = build_prompt(item, corpus, format, self.study.round_state)?;
        match ai_respond(adapter, &prompt) {
            Ok(answer) => {
                self.execute(actor, Command::IngestAiAnswer { answer: answer.clone() })?;
                Ok(answer)
            }
            Err(rejection) => {
                if let Some(provenance) = rejection.provenance {
                    self.execute(actor, Command::QuarantineAiAnswer { provenance: *provenance })?;
                }
                Err(rejection.error)
            }
        }
    }

    /// Rendered report files as (name, contents), without writing them.
    pub fn render_reports(&self) -> Result<Vec<(&'static str, String)>> {
        render_all(&self.study)
    }

    /// Moves to reported and writes `report.md`, `tiers.csv`, `report.json`.
    pub fn emit_report(&mut self, actor: &str) -> Result<Vec<(&'static str, String)>> {
        self.transition(actor, WorkflowEvent::EmitReport)?;
        let files = self.render_reports()?;
        if let Some(dir) = &self.dir {
            for (name, text) in &files {
                fs::write(dir.join(name), text)?;
            }
        }
        self.save_snapshot()?;
        Ok(files)
    }
}
