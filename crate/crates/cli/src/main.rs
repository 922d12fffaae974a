//! `study`: drive a Delphi study directory from the shell.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use delphi_core::alignment::{alignment_csv, classify_pending_alignment, AlignmentCategory, AlignmentTally};
use delphi_core::coding::import_coding_csv;
use delphi_core::consensus::{tiers_csv, CompatibilityBasis, TierTally};
use delphi_core::corpus::{CorpusSpec, SourceRecord, VettingApproval};
use delphi_core::model::{validate_study, ResponseKey, ValidationReport};
use delphi_core::report::{render_all, REPORT_JSON, REPORT_MD, TIERS_CSV};
use delphi_core::saturation::{permutation_robustness, EvaluationMode};
use delphi_core::store::{Command, ResponseDocument, SystemClock};
use delphi_core::{Error, ItemId, PanelRole, Study, StudyStore, WorkflowEvent, WorkflowState, SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "study", version, about = "Run a single-round Delphi consensus study")]
struct Cli {
    /// Study directory holding the audit log and outputs.
    #[arg(long, global = true, default_value = ".")]
    study: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Name recorded on audit events.
    #[arg(long, global = true, default_value = "facilitator")]
    actor: String,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a study from a definition file (sections, items, panel).
    New { definition: PathBuf },
    /// Check the study design, and optionally a response file, without writing.
    Validate {
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Ingest a response document (.json or .csv).
    Ingest { file: PathBuf },
    /// Import reasoning codes from a coding CSV.
    Code { file: PathBuf },
    /// Set the corpus specification.
    Corpus { file: PathBuf },
    /// Screen sources against the corpus; file holds `sources` and optional `vetting`.
    Admit { file: PathBuf },
    /// Apply a workflow event, e.g. close_collection.
    Transition {
        #[arg(value_parser = snake::<WorkflowEvent>)]
        event: WorkflowEvent,
    },
    /// Open or answer a clarification exchange on one response.
    Clarify {
        #[arg(long)]
        item: String,
        #[arg(long)]
        panelist: String,
        #[arg(long, conflicts_with_all = ["exchange", "answer"])]
        question: Option<String>,
        #[arg(long, requires = "answer")]
        exchange: Option<usize>,
        #[arg(long, requires = "exchange")]
        answer: Option<String>,
    },
    /// Classify pending items and show the tiers.
    Classify,
    /// Saturation curve and permutation robustness for one role.
    Saturation {
        #[arg(long, value_parser = snake::<PanelRole>, default_value = "senior_expert")]
        role: PanelRole,
        #[arg(long, value_parser = ["exhaustive", "sampled"])]
        mode: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify AI alignment, or override one item with --item/--category.
    Align {
        #[arg(long, requires_all = ["category", "rationale"])]
        item: Option<String>,
        #[arg(long, value_parser = snake::<AlignmentCategory>)]
        category: Option<AlignmentCategory>,
        #[arg(long)]
        rationale: Option<String>,
    },
    /// Record a compatibility basis for an item.
    Adjudicate {
        #[arg(long)]
        item: String,
        #[arg(long, value_parser = snake::<CompatibilityBasis>)]
        basis: CompatibilityBasis,
        #[arg(long, default_value = "")]
        rationale: String,
    },
    /// Emit the report files, or print them once emitted.
    Report,
    /// Serve the HTTP API over a directory of studies.
    Serve {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

/// Parses a snake_case value through the type's serde names.
fn snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_owned())).map_err(|_| format!("unrecognised value `{s}`"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedDocument(format!("{}: {e}", path.display())).into())
}

fn open(dir: &Path) -> anyhow::Result<StudyStore> {
    Ok(StudyStore::open(dir, Box::new(SystemClock))?)
}

/// One command result, renderable in each format it supports.
struct Output {
    json: Value,
    csv: Option<String>,
    md: Option<String>,
}

impl Output {
    fn json(json: Value) -> Self {
        Self {
            json,
            csv: None,
            md: None,
        }
    }

    fn render(mut self, format: Format) -> anyhow::Result<String> {
        match format {
            Format::Json => {
                if let Value::Object(map) = &mut self.json {
                    map.entry("schema_version").or_insert_with(|| SCHEMA_VERSION.into());
                }
                Ok(format!("{}\n", serde_json::to_string_pretty(&self.json)?))
            }
            Format::Csv => self.csv.context("this command has no csv output"),
            Format::Md => self.md.context("this command has no md output"),
        }
    }
}

fn violations_csv(report: &ValidationReport) -> String {
    let mut out = String::from("kind,entity,row,message\n");
    for v in &report.violations {
        let kind = serde_json::to_value(v.kind).ok().and_then(|k| k.as_str().map(str::to_owned)).unwrap_or_default();
        let row = v.row.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!("{kind},{},{row},\"{}\"\n", v.entity, v.message.replace('"', "\"\"")));
    }
    out
}

fn violations_md(title: &str, report: &ValidationReport) -> String {
    let mut out = format!("## {title}\n\n");
    if report.is_empty() {
        out.push_str("No problems found.\n");
    }
    for v in &report.violations {
        match v.row {
            Some(r) => out.push_str(&format!("- row {r}, {}: {}\n", v.entity, v.message)),
            None => out.push_str(&format!("- {}: {}\n", v.entity, v.message)),
        }
    }
    out
}

fn tiers_md(study: &Study) -> String {
    let tally = TierTally::from_tiers(study.classifications.values().map(|c| c.tier));
    let doc = tally.to_document();
    let mut out = String::from("| Item | Tier | Agreement | Basis |\n|---|---|---|---|\n");
    for item in &study.items {
        if let Some(c) = study.classifications.get(&item.id) {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                item.id,
                c.tier.label(),
                c.agreement.fraction_text(),
                c.basis.basis.as_str()
            ));
        }
    }
    out.push_str(&format!("\n{} classified, {} in consensus.\n", doc.classified, tally.in_consensus()));
    out
}

fn run(cli: Cli) -> anyhow::Result<(Output, bool)> {
    let dir = cli.study.as_path();
    let actor = cli.actor.as_str();
    let out = match cli.command {
        Cmd::New { definition } => {
            let study: Study = read_json(&definition)?;
            let store = StudyStore::create(Some(dir), study, actor, Box::new(SystemClock))?;
            store.save_snapshot()?;
            let s = store.study();
            Output::json(json!({
                "study_id": s.id,
                "state": s.round_state,
                "items": s.items.len(),
                "panel": s.panel.len(),
            }))
        }
        Cmd::Validate { responses } => {
            let store = open(dir)?;
            let design = validate_study(store.study());
            let mut ok = design.is_empty();
            let mut json = json!({ "study": design });
            let mut csv = violations_csv(&design);
            let mut md = violations_md("Study design", &design);
            if let Some(path) = responses {
                let doc = ResponseDocument::read(&path)?;
                let report = store.check_responses(&doc)?;
                ok &= report.rejects.is_empty();
                csv.push_str(violations_csv(&report.rejects).split_once('\n').map_or("", |(_, rest)| rest));
                md.push('\n');
                md.push_str(&violations_md("Responses", &report.rejects));
                json["responses"] = serde_json::to_value(&report)?;
            }
            json["valid"] = ok.into();
            return Ok((
                Output {
                    json,
                    csv: Some(csv),
                    md: Some(md),
                },
                ok,
            ));
        }
        Cmd::Ingest { file } => {
            let mut store = open(dir)?;
            let doc = ResponseDocument::read(&file)?;
            let report = store.ingest_responses(actor, &doc)?;
            store.save_snapshot()?;
            let ok = report.rejects.is_empty();
            let md = format!(
                "Stored {} rows from {} panelists.\n\n{}",
                report.rows_stored,
                report.accepted_panelists.len(),
                violations_md("Rejects", &report.rejects)
            );
            let csv = violations_csv(&report.rejects);
            return Ok((
                Output {
                    json: serde_json::to_value(&report)?,
                    csv: Some(csv),
                    md: Some(md),
                },
                ok,
            ));
        }
        Cmd::Code { file } => {
            let mut store = open(dir)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let records = import_coding_csv(&text)?;
            for r in &records {
                store.execute(
                    r.coder.as_str(),
                    Command::RecordCodes {
                        response: r.response.clone(),
                        codes: r.codes,
                        note: r.note.clone(),
                    },
                )?;
            }
            store.save_snapshot()?;
            Output::json(json!({ "recorded": records.len() }))
        }
        Cmd::Corpus { file } => {
            let corpus: CorpusSpec = read_json(&file)?;
            let mut store = open(dir)?;
            store.execute(actor, Command::SetCorpus { corpus })?;
            store.save_snapshot()?;
            Output::json(json!({ "corpus": store.study().corpus }))
        }
        Cmd::Admit { file } => {
            #[derive(serde::Deserialize)]
            struct Batch {
                sources: Vec<SourceRecord>,
                #[serde(default)]
                vetting: Vec<VettingApproval>,
            }
            let batch: Batch = read_json(&file)?;
            let mut store = open(dir)?;
            let decisions = store.admit_sources(actor, batch.sources, batch.vetting)?;
            store.save_snapshot()?;
            Output::json(json!({ "decisions": decisions }))
        }
        Cmd::Transition { event } => {
            let mut store = open(dir)?;
            let state = store.advance(actor, event)?;
            store.save_snapshot()?;
            Output::json(json!({ "state": state }))
        }
        Cmd::Clarify {
            item,
            panelist,
            question,
            exchange,
            answer,
        } => {
            let mut store = open(dir)?;
            let key = ResponseKey::new(item, panelist);
            match (question, exchange, answer) {
                (Some(q), None, None) => {
                    store.request_clarification(actor, key.clone(), &q)?;
                }
                (None, Some(n), Some(a)) => store.record_answer(actor, key.clone(), n, &a)?,
                _ => bail!("give --question, or --exchange with --answer"),
            }
            store.save_snapshot()?;
            let thread = &store.study().response(&key).expect("exchange recorded").clarification_thread;
            Output::json(json!({ "response_id": key.to_response_id(), "thread": thread }))
        }
        Cmd::Classify => {
            let mut store = open(dir)?;
            let state = store.study().round_state;
            if !matches!(state, WorkflowState::Classified | WorkflowState::Reported) {
                store.classify_all(actor)?;
                store.save_snapshot()?;
            }
            let s = store.study();
            let tally = TierTally::from_tiers(s.classifications.values().map(|c| c.tier));
            let classifications: Vec<_> = s.items.iter().filter_map(|i| s.classifications.get(&i.id)).collect();
            Output {
                json: json!({ "tally": tally.to_document(), "classifications": classifications }),
                csv: Some(tiers_csv(s)?),
                md: Some(tiers_md(s)),
            }
        }
        Cmd::Saturation { role, mode, seed } => {
            let store = open(dir)?;
            let size = store.study().members(role).count();
            let mode = match mode.as_deref() {
                Some("exhaustive") => EvaluationMode::Exhaustive,
                Some(_) => EvaluationMode::sampled(seed),
                None => EvaluationMode::for_panel(size, seed),
            };
            let r = permutation_robustness(store.study(), role, mode)?;
            let index = r.saturation_index.map_or("not reached".to_owned(), |k| k.to_string());
            let md = format!(
                "Panel of {}: saturation index {index}, worst ordering {}, {}.\n",
                r.panel_size,
                r.max_index,
                if r.robust { "robust to ordering" } else { "not robust to ordering" }
            );
            Output {
                csv: Some(r.curve_csv()),
                md: Some(md),
                json: json!({ "report": r }),
            }
        }
        Cmd::Align {
            item,
            category,
            rationale,
        } => {
            let mut store = open(dir)?;
            if let (Some(item), Some(category), Some(rationale)) = (item, category, rationale) {
                store.execute(
                    actor,
                    Command::OverrideAlignment {
                        item_id: ItemId::new(item),
                        category,
                        rationale,
                    },
                )?;
                store.save_snapshot()?;
            } else if !classify_pending_alignment(store.study())?.is_empty() {
                store.execute(actor, Command::ClassifyAlignment)?;
                store.save_snapshot()?;
            }
            let s = store.study();
            let records: Vec<_> = s.items.iter().filter_map(|i| s.alignments.get(&i.id)).collect();
            let tally = AlignmentTally::from_categories(records.iter().map(|r| r.category));
            let md = format!(
                "Band concordance {}/{} ({}%): {} fully aligned, {} partially aligned, {} divergent.\n",
                tally.concordant(),
                tally.total(),
                tally.concordance_percent(),
                tally.fully_aligned,
                tally.partially_aligned,
                tally.divergent
            );
            Output {
                csv: Some(alignment_csv(s)?),
                md: Some(md),
                json: json!({ "tally": tally, "records": records }),
            }
        }
        Cmd::Adjudicate { item, basis, rationale } => {
            let mut store = open(dir)?;
            let item_id = ItemId::new(item);
            store.decide(actor, item_id.clone(), basis, &rationale)?;
            store.save_snapshot()?;
            let s = store.study();
            Output::json(json!({
                "annotation": s.annotations.get(&item_id),
                "classification": s.classifications.get(&item_id),
            }))
        }
        Cmd::Report => {
            let mut store = open(dir)?;
            if store.study().round_state == WorkflowState::Classified {
                store.advance(actor, WorkflowEvent::EmitReport)?;
            }
            if store.study().round_state != WorkflowState::Reported {
                return Err(Error::InvalidTransition {
                    state: store.study().round_state,
                    action: "report".into(),
                }
                .into());
            }
            let files = render_all(store.study())?;
            let pick = |name: &str| files.iter().find(|(n, _)| *n == name).map(|(_, t)| t.clone());
            let json: Value = serde_json::from_str(&pick(REPORT_JSON).expect("json report"))?;
            Output {
                json,
                csv: pick(TIERS_CSV),
                md: pick(REPORT_MD),
            }
        }
        Cmd::Serve { root, addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("serving {} on http://{addr}", root.display());
            rt.block_on(delphi_server::serve(root, &addr))?;
            Output::json(json!({}))
        }
    };
    Ok((out, true))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = cli.format;
    match run(cli).and_then(|(out, ok)| Ok((out.render(format)?, ok))) {
        Ok((text, ok)) => {
            print!("{text}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            match e.downcast_ref::<Error>() {
                Some(core) => eprintln!("error[{}]: {core}", core.code()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
