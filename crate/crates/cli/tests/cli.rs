use std::path::Path;
use std::process::{Command, Output};

use delphi_core::model::{Item, PanelRole, Panelist, ThematicSection};
use delphi_core::store::{read_events, replay, EVENTS_FILE, SNAPSHOT_FILE};
use delphi_core::Study;
use serde_json::Value;

const RATINGS: [(&str, [u8; 5]); 4] = [
    ("q1", [5, 5, 5, 5, 5]),
    ("q2", [5, 5, 5, 4, 4]),
    ("q3", [5, 5, 2, 1, 5]),
    ("q4", [5, 5, 4, 2, 5]),
];
const PANEL: [&str; 5] = ["E1", "E2", "E3", "E4", "AI"];

fn definition() -> Study {
    let mut s = Study::new("pilot", "Pilot panel");
    s.sections = vec![
        ThematicSection {
            id: "A".into(),
            name: "Assessment".into(),
        },
        ThematicSection {
            id: "B".into(),
            name: "Management".into(),
        },
    ];
    s.items = vec![
        Item::fixed("q1", "A", "Take a structured history"),
        Item::fixed("q2", "A", "Use a validated questionnaire"),
        Item::fixed("q3", "B", "Prescribe early"),
        Item::fixed("q4", "B", "Review at four weeks"),
    ];
    s.panel = ["E1", "E2", "E3", "E4"]
        .iter()
        .map(|p| Panelist::new(*p, PanelRole::SeniorExpert))
        .collect();
    s.panel.push(Panelist::new("AI", PanelRole::AiRespondent));
    s
}

fn responses_csv() -> String {
    let mut out = String::from("item_id,panelist_id,rating,justification\n");
    for (item, ratings) in RATINGS {
        for (p, r) in PANEL.iter().zip(ratings) {
            out.push_str(&format!("{item},{p},{r},\"{p} rates {item} {r} from practice\"\n"));
        }
    }
    out
}

fn coding_csv() -> String {
    let mut out = String::from("response_id,categories,coder,timestamp\n");
    for (item, _) in RATINGS {
        for p in PANEL {
            let cats = if p == "AI" { "evidence_based" } else { "evidence_based;principle_based" };
            out.push_str(&format!("{item}:{p},{cats},coder,2025-01-01T00:00:00Z\n"));
        }
    }
    out
}

fn study(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_study"))
        .arg("--study")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

/// Runs a command expected to succeed and returns stdout.
fn ok(dir: &Path, args: &[&str]) -> String {
    let out = study(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    serde_json::from_str(&ok(dir, args)).unwrap()
}

fn setup(root: &Path) -> std::path::PathBuf {
    let dir = root.join("pilot");
    let def = root.join("definition.json");
    std::fs::write(&def, serde_json::to_string(&definition()).unwrap()).unwrap();
    let created = ok_json(&dir, &["new", def.to_str().unwrap()]);
    assert_eq!(created["schema_version"], "1");
    assert_eq!(created["state"], "draft");
    dir
}

#[test]
fn whole_round_from_the_shell() {
    let root = tempfile::tempdir().unwrap();
    let dir = setup(root.path());
    assert_eq!(ok_json(&dir, &["validate"])["valid"], true);

    ok(&dir, &["transition", "finalize_items"]);
    assert_eq!(ok_json(&dir, &["transition", "open_collection"])["state"], "collecting");

    let responses = root.path().join("responses.csv");
    std::fs::write(&responses, responses_csv()).unwrap();
    let report = ok_json(&dir, &["ingest", responses.to_str().unwrap()]);
    assert_eq!(report["rows_stored"], 20);

    let coding = root.path().join("coding.csv");
    std::fs::write(&coding, coding_csv()).unwrap();
    assert_eq!(ok_json(&dir, &["code", coding.to_str().unwrap()])["recorded"], 20);

    ok(&dir, &["transition", "close_collection"]);
    let thread = ok_json(&dir, &["clarify", "--item", "q3", "--panelist", "E4", "--question", "When would you agree?"]);
    assert_eq!(thread["response_id"], "q3:E4");
    let thread = ok_json(
        &dir,
        &["clarify", "--item", "q3", "--panelist", "E4", "--exchange", "0", "--answer", "After a failed trial."],
    );
    assert_eq!(thread["thread"][0]["answer"], "After a failed trial.");

    let annotated = ok_json(
        &dir,
        &["adjudicate", "--item", "q4", "--basis", "conditionally_reconciled", "--rationale", "Holds for simple cases"],
    );
    assert_eq!(annotated["annotation"]["basis"], "conditionally_reconciled");
    assert!(annotated["classification"].is_null());

    let tiers = ok(&dir, &["--format", "csv", "classify"]);
    assert_eq!(
        tiers,
        "item_id,tier,fraction,basis\n\
         q1,strong,4/4,shared\n\
         q2,strong,4/4,shared\n\
         q3,divergent,2/4,shared\n\
         q4,conditional,3/4,conditionally_reconciled\n"
    );

    ok(&dir, &["transition", "begin_adjudication"]);
    let adjudicated = ok_json(
        &dir,
        &["adjudicate", "--item", "q3", "--basis", "conditionally_reconciled", "--rationale", "Depends on severity"],
    );
    assert_eq!(adjudicated["classification"]["tier"], "conditional");

    let out = study(&dir, &["adjudicate", "--item", "q1", "--basis", "irreconcilable", "--rationale", "no"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[illegal_reclassification]"));

    let align = ok(&dir, &["--format", "csv", "align"]);
    assert!(align.starts_with("item_id,ai_band,panel_band,overlap,category\n"), "{align}");
    assert!(align.contains("q3,positive,mixed,1/2,divergent\n"), "{align}");
    let overridden = ok_json(
        &dir,
        &["align", "--item", "q2", "--category", "partially_aligned", "--rationale", "Omits the principle"],
    );
    assert_eq!(overridden["tally"]["partially_aligned"], 1);
    assert!(ok(&dir, &["--format", "md", "align"]).starts_with("Band concordance 3/4 (75.0%)"));

    let curve = ok(&dir, &["--format", "csv", "saturation"]);
    assert!(curve.starts_with("prefix_k,pairs_covered,required\n1,"), "{curve}");
    assert_eq!(ok_json(&dir, &["saturation"])["report"]["robust"], true);

    let early = study(&dir, &["report"]);
    assert_eq!(early.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&early.stderr).contains("invalid_transition"));

    ok(&dir, &["transition", "complete_classification"]);
    let md = ok(&dir, &["--format", "md", "report"]);
    assert!(md.starts_with("# Consensus guidance: Pilot panel"), "{md}");
    for f in ["report.md", "tiers.csv", "report.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(dir.join("report.md")).unwrap(), md);
    // a second report reads the same snapshot
    assert_eq!(ok(&dir, &["--format", "md", "report"]), md);
    let json = ok_json(&dir, &["report"]);
    assert_eq!(json["tally"]["classified"], 4);

    // the snapshot is the replayed log
    let events = read_events(&dir.join(EVENTS_FILE)).unwrap();
    let snapshot: Study = serde_json::from_str(&std::fs::read_to_string(dir.join(SNAPSHOT_FILE)).unwrap()).unwrap();
    assert_eq!(replay(&events).unwrap(), snapshot);
}

#[test]
fn validation_names_rows_and_writes_nothing() {
    let root = tempfile::tempdir().unwrap();
    let dir = setup(root.path());
    ok(&dir, &["transition", "finalize_items"]);
    ok(&dir, &["transition", "open_collection"]);
    let before = std::fs::read_to_string(dir.join(EVENTS_FILE)).unwrap();

    let bad = root.path().join("bad.csv");
    std::fs::write(
        &bad,
        "item_id,panelist_id,rating,justification\nq1,E1,5,fine\nq2,E1,7,too high\nq3,E2,4,\nq1,E3,4,fine\n",
    )
    .unwrap();
    let out = study(&dir, &["--format", "csv", "validate", "--responses", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("kind,entity,row,message\n"), "{text}");
    assert!(text.contains("rating_out_of_range,q2:E1,2,"), "{text}");
    assert!(text.contains("(7)"), "{text}");
    assert!(text.contains("missing_justification,q3:E2,3,"), "{text}");
    assert_eq!(std::fs::read_to_string(dir.join(EVENTS_FILE)).unwrap(), before);

    // ingestion keeps the clean panelist only
    let out = study(&dir, &["ingest", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["accepted_panelists"], serde_json::json!(["E3"]));
    assert_eq!(report["rejected_panelists"], serde_json::json!(["E1", "E2"]));
    assert_eq!(report["rows_stored"], 1);
}

#[test]
fn refusals_are_reported_with_codes() {
    let root = tempfile::tempdir().unwrap();
    let dir = setup(root.path());

    let out = study(&dir, &["transition", "close_collection"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[invalid_transition]"), "{err}");
    assert!(err.contains("draft"), "{err}");

    let out = study(&dir, &["transition", "leap_ahead"]);
    assert!(!out.status.success());

    let out = study(&dir, &["--format", "csv", "transition", "finalize_items"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no csv output"));

    let def = root.path().join("definition.json");
    let out = study(&dir, &["new", def.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let missing = root.path().join("nowhere");
    assert_eq!(study(&missing, &["validate"]).status.code(), Some(1));
}
