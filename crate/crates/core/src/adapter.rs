//! Adapter boundary around the AI respondent.
//!
//! The engine talks to a model through a single request/response text
//! exchange with a protocol version. Every exchange yields a provenance log;
//! replies that cite sources outside the admitted corpus are quarantined and
//! never become responses.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{PromptDocument, ResponseFormat};
use crate::error::{Error, Result};
use crate::model::{ItemId, PanelistId, Response};

pub const ADAPTER_PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub protocol_version: String,
    pub item_id: ItemId,
    pub prompt: String,
}

impl AdapterRequest {
    pub fn from_prompt(prompt: &PromptDocument) -> Self {
        Self {
            protocol_version: ADAPTER_PROTOCOL_VERSION.to_owned(),
            item_id: prompt.item_id.clone(),
            prompt: prompt.text.clone(),
        }
    }

    /// SHA-256 of the prompt text; the replay lookup key.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.prompt.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterReply {
    pub protocol_version: String,
    pub text: String,
}

impl AdapterReply {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            protocol_version: ADAPTER_PROTOCOL_VERSION.to_owned(),
            text: text.into(),
        }
    }
}

pub trait AiAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &AdapterRequest) -> Result<AdapterReply>;
}

/// Canned replies keyed by item id. Unknown items get a fixed refusal that
/// fails parsing.
#[derive(Debug, Clone, Default)]
pub struct MockAdapter {
    answers: BTreeMap<ItemId, String>,
}

impl MockAdapter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_answer(mut self, item: impl Into<String>, text: impl Into<String>) -> Self {
        self.answers.insert(ItemId::new(item), text.into());
        self
    }

    pub fn insert(&mut self, item: ItemId, text: impl Into<String>) {
        self.answers.insert(item, text.into());
    }
}

impl AiAdapter for MockAdapter {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &AdapterRequest) -> Result<AdapterReply> {
        let text = self
            .answers
            .get(&request.item_id)
            .cloned()
            .unwrap_or_else(|| "NO ANSWER AVAILABLE".to_owned());
        Ok(AdapterReply::new(text))
    }
}

/// One recorded exchange, stored verbatim as a JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub protocol_version: String,
    pub adapter: String,
    pub fingerprint: String,
    pub item_id: ItemId,
    pub request: String,
    pub reply: String,
}

pub enum ReplayMode {
    Record(Box<dyn AiAdapter>),
    Replay,
}

/// Records exchanges from an inner adapter to a transcript file, or replays
/// them by prompt fingerprint without calling any model.
pub struct RecordReplayAdapter {
    path: PathBuf,
    mode: ReplayMode,
    recorded: Mutex<BTreeMap<String, TranscriptEntry>>,
}

impl RecordReplayAdapter {
    pub fn record(path: impl Into<PathBuf>, inner: Box<dyn AiAdapter>) -> Result<Self> {
        let path = path.into();
        let recorded = load_transcript(&path)?;
        Ok(Self {
            path,
            mode: ReplayMode::Record(inner),
            recorded: Mutex::new(recorded),
        })
    }

    pub fn replay(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let recorded = load_transcript(&path)?;
        Ok(Self {
            path,
            mode: ReplayMode::Replay,
            recorded: Mutex::new(recorded),
        })
    }

    pub fn transcript_len(&self) -> usize {
        self.recorded.lock().expect("transcript lock").len()
    }
}

fn load_transcript(path: &Path) -> Result<BTreeMap<String, TranscriptEntry>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let mut out = BTreeMap::new();
    for (n, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry = serde_json::from_str(line)
            .map_err(|e| Error::MalformedDocument(format!("transcript line {}: {e}", n + 1)))?;
        out.insert(entry.fingerprint.clone(), entry);
    }
    Ok(out)
}

impl AiAdapter for RecordReplayAdapter {
    fn name(&self) -> &str {
        match &self.mode {
            ReplayMode::Record(_) => "record",
            ReplayMode::Replay => "replay",
        }
    }

    fn complete(&self, request: &AdapterRequest) -> Result<AdapterReply> {
        let fp = request.fingerprint();
        match &self.mode {
            ReplayMode::Replay => {
                let recorded = self.recorded.lock().expect("transcript lock");
                let entry = recorded.get(&fp).ok_or_else(|| Error::ReplayMiss(fp.clone()))?;
                Ok(AdapterReply {
                    protocol_version: entry.protocol_version.clone(),
                    text: entry.reply.clone(),
                })
            }
            ReplayMode::Record(inner) => {
                let reply = inner.complete(request)?;
                let entry = TranscriptEntry {
                    protocol_version: reply.protocol_version.clone(),
                    adapter: inner.name().to_owned(),
                    fingerprint: fp.clone(),
                    item_id: request.item_id.clone(),
                    request: request.prompt.clone(),
                    reply: reply.text.clone(),
                };
                let mut recorded = self.recorded.lock().expect("transcript lock");
                if let Some(parent) = self.path.parent() {
                    fs::create_dir_all(parent)?;
                }
                let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
                writeln!(file, "{}", serde_json::to_string(&entry)?)?;
                recorded.insert(fp, entry);
                Ok(reply)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum ProvenanceStatus {
    Accepted,
    Malformed(String),
    Quarantined(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceLog {
    pub adapter: String,
    pub protocol_version: String,
    pub item_id: ItemId,
    pub prompt_fingerprint: String,
    pub request: String,
    pub reply: String,
    pub cited_sources: Vec<String>,
    pub status: ProvenanceStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum AnswerValue {
    Likert(u8),
    Binary(bool),
    Ranking(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AiAnswer {
    pub item_id: ItemId,
    pub value: AnswerValue,
    pub justification: String,
    pub cited_sources: Vec<String>,
    pub provenance: ProvenanceLog,
}

impl AiAnswer {
    pub fn to_response(&self, ai: &PanelistId) -> Result<Response> {
        match self.value {
            AnswerValue::Likert(rating) => Ok(Response::new(
                self.item_id.as_str(),
                ai.as_str(),
                rating,
                self.justification.clone(),
            )),
            _ => Err(Error::MalformedAiResponse("only Likert answers become panel responses".into())),
        }
    }
}

/// A refused exchange and the log that documents it.
#[derive(Debug)]
pub struct AiRejection {
    pub error: Error,
    pub provenance: Option<Box<ProvenanceLog>>,
}

impl fmt::Display for AiRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for AiRejection {}

impl From<AiRejection> for Error {
    fn from(r: AiRejection) -> Self {
        r.error
    }
}

struct ParsedReply {
    value: AnswerValue,
    justification: String,
    cited: Vec<String>,
}

fn parse_reply(text: &str, format: &ResponseFormat) -> std::result::Result<ParsedReply, String> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let key = line.split_once(':').and_then(|(k, v)| {
            let k = k.trim().to_ascii_uppercase();
            ["RATING", "ANSWER", "RANKING", "JUSTIFICATION", "SOURCES"]
                .contains(&k.as_str())
                .then(|| (k, v.trim().to_owned()))
        });
        match key {
            Some((k, v)) => {
                if fields.insert(k.clone(), v).is_some() {
                    return Err(format!("field {k} repeated"));
                }
                current = Some(k);
            }
            None => {
                // continuation lines extend the justification only
                if let Some(k) = current.as_deref().filter(|k| *k == "JUSTIFICATION") {
                    let entry = fields.get_mut(k).expect("current field exists");
                    if !line.trim().is_empty() {
                        entry.push('\n');
                        entry.push_str(line.trim());
                    }
                }
            }
        }
    }
    let justification = fields.get("JUSTIFICATION").cloned().unwrap_or_default();
    if justification.trim().is_empty() {
        return Err("missing justification".into());
    }
    let value = match format {
        ResponseFormat::Likert => {
            let raw = fields.get("RATING").ok_or("missing RATING")?;
            let rating: u8 = raw.parse().map_err(|_| format!("rating {raw:?} is not an integer"))?;
            if !(1..=5).contains(&rating) {
                return Err(format!("rating {rating} outside 1-5"));
            }
            AnswerValue::Likert(rating)
        }
        ResponseFormat::Binary => match fields.get("ANSWER").map(|a| a.to_ascii_lowercase()).as_deref() {
            Some("yes") => AnswerValue::Binary(true),
            Some("no") => AnswerValue::Binary(false),
            other => return Err(format!("answer {other:?} is not yes/no")),
        },
        ResponseFormat::Prioritisation { options } => {
            let raw = fields.get("RANKING").ok_or("missing RANKING")?;
            let ranking: Vec<String> = raw.split(';').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
            let mut sorted_given = ranking.clone();
            sorted_given.sort();
            let mut sorted_options = options.clone();
            sorted_options.sort();
            if sorted_given != sorted_options {
                return Err("ranking must list every option exactly once".into());
            }
            AnswerValue::Ranking(ranking)
        }
    };
    let cited = fields
        .get("SOURCES")
        .map(|s| {
            s.split(',')
                .map(|x| x.trim().trim_matches(|c| c == '[' || c == ']').to_owned())
                .filter(|x| !x.is_empty())
                .collect()
        })
        .unwrap_or_default();
    Ok(ParsedReply {
        value,
        justification,
        cited,
    })
}

/// Sends one prompt through the adapter and validates the reply against the
/// output contract and the admitted source list.
pub fn ai_respond(adapter: &dyn AiAdapter, prompt: &PromptDocument) -> std::result::Result<AiAnswer, AiRejection> {
    let request = AdapterRequest::from_prompt(prompt);
    let reply = adapter.complete(&request).map_err(|error| AiRejection {
        error,
        provenance: None,
    })?;
    let mut log = ProvenanceLog {
        adapter: adapter.name().to_owned(),
        protocol_version: reply.protocol_version.clone(),
        item_id: prompt.item_id.clone(),
        prompt_fingerprint: request.fingerprint(),
        request: request.prompt.clone(),
        reply: reply.text.clone(),
        cited_sources: Vec::new(),
        status: ProvenanceStatus::Accepted,
    };
    if reply.protocol_version != ADAPTER_PROTOCOL_VERSION {
        let why = format!("protocol version {} unsupported", reply.protocol_version);
        log.status = ProvenanceStatus::Malformed(why.clone());
        return Err(AiRejection {
            error: Error::MalformedAiResponse(why),
            provenance: Some(Box::new(log)),
        });
    }
    let parsed = match parse_reply(&reply.text, &prompt.format) {
        Ok(p) => p,
        Err(why) => {
            log.status = ProvenanceStatus::Malformed(why.clone());
            return Err(AiRejection {
                error: Error::MalformedAiResponse(why),
                provenance: Some(Box::new(log)),
            });
        }
    };
    log.cited_sources = parsed.cited.clone();
    let outside: Vec<String> = parsed
        .cited
        .iter()
        .filter(|c| !prompt.admitted_sources.contains(c))
        .cloned()
        .collect();
    if !outside.is_empty() {
        log.status = ProvenanceStatus::Quarantined(format!("cited outside corpus: {}", outside.join(", ")));
        return Err(AiRejection {
            error: Error::CorpusViolation(outside),
            provenance: Some(Box::new(log)),
        });
    }
    Ok(AiAnswer {
        item_id: prompt.item_id.clone(),
        value: parsed.value,
        justification: parsed.justification,
        cited_sources: parsed.cited,
        provenance: log,
    })
}
