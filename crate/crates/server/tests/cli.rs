mod common;

use std::path::PathBuf;
use std::process::Command;

use convey::cli::{run, EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_USAGE};
use convey_core::engine::{replay, Selection};
use convey_core::flow::Status;
use convey_core::store::{FileStore, ResponseRecord, Store};

fn corpus(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn convey(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("convey").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn validate_reports_success_and_errors() {
    let (code, out, _) = convey(&["validate", &corpus("mobile_banking.survey")]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("8 questions"), "{out}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.survey");
    std::fs::write(&bad, "{text} hi\n{weird} y\n{odd} z\n").unwrap();
    let (code, _, err) = convey(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, EXIT_INVALID);
    assert_eq!(err.lines().count(), 2, "{err}");
    assert!(err.contains("bad.survey:2:"));

    let (code, _, _) = convey(&["validate", "/no/such/file.survey"]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn simulate_prints_the_engine_transcript() {
    let (code, out, err) = convey(&[
        "simulate",
        &corpus("mobile_banking.survey"),
        "--answers",
        "ok,1,1,5,1,1,1,1",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let mut g = convey_core::dsl::parse_script(common::MOBILE).unwrap();
    g.status = Status::Published;
    let mut sel = vec![Selection::Option("n5".into())];
    sel.extend([1, 1, 5, 1, 1, 1, 1].map(Selection::Value));
    let (_, t) = replay(&g, "x", &sel).unwrap();
    assert_eq!(out, t.to_string());
    assert!(out.contains("You should think about changing provider"));
}

#[test]
fn simulate_rejects_wrong_answer_lists() {
    let file = corpus("mobile_banking.survey");
    assert_eq!(
        convey(&["simulate", &file, "--answers", "ok,1,1"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        convey(&["simulate", &file, "--answers", "ok,1,1,5,1,1,1,1,4"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        convey(&["simulate", &file, "--answers", "ok,7,1,5,1,1,1,1"]).0,
        EXIT_USAGE
    );
    let (code, _, err) = convey(&["simulate", &file]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("too few answers"));

    let (code, out, _) = convey(&[
        "simulate",
        &corpus("motivation_informal.survey"),
        "--answers",
        &["#1"; 21].join(","),
    ]);
    assert_eq!(code, EXIT_USAGE, "{out}");
}

#[test]
fn bad_arguments_exit_3() {
    assert_eq!(convey(&[]).0, EXIT_USAGE);
    assert_eq!(convey(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(
        convey(&["stats", "x.csv", "--metric", "cubic"]).0,
        EXIT_USAGE
    );
    assert_eq!(convey(&["--help"]).0, EXIT_OK);
}

fn populated_store(dir: &std::path::Path, sessions: usize) {
    let store = FileStore::open(dir).unwrap();
    let mut g = convey_core::dsl::parse_script_with(
        common::MOBILE,
        &convey_core::dsl::ParseOptions {
            id: "mb".into(),
            ..Default::default()
        },
    )
    .unwrap();
    store.save_survey(&g).unwrap();
    g = store.publish("mb").unwrap();
    for i in 0..sessions {
        let mut sel = vec![Selection::Option("n5".into())];
        sel.extend((0..7).map(|q| Selection::Value([1, 3, 5][(i + q) % 3])));
        let (s, _) = replay(&g, &format!("s{i}"), &sel).unwrap();
        store.save_session(&s).unwrap();
        let recs: Vec<_> = s
            .answers
            .iter()
            .map(|a| ResponseRecord::from_event(&s, a))
            .collect();
        store.append_records(&recs).unwrap();
    }
}

#[test]
fn export_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    populated_store(dir.path(), 6);
    let data = dir.path().to_str().unwrap();

    let (code, csv, err) = convey(&["export", "mb", "--data-dir", data]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(csv.lines().count(), 1 + 6 * 8);
    assert_eq!(
        convey(&["export", "missing", "--data-dir", data]).0,
        EXIT_INVALID
    );
    assert_eq!(
        convey(&["export", "mb", "--data-dir", "/no/such/dir"]).0,
        EXIT_IO
    );

    let file = dir.path().join("mb.csv");
    std::fs::write(&file, &csv).unwrap();
    let (code, out, err) = convey(&["stats", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("completed  6"), "{out}");
    assert!(out.contains("cronbach_alpha"));

    let (code, out, _) = convey(&[
        "stats",
        file.to_str().unwrap(),
        "--json",
        "--metric",
        "ordinal",
        "--orientation",
        "items",
        "--bootstrap",
        "200",
    ]);
    assert_eq!(code, EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["started"], 6);
    let kripp = report["tests"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["name"] == "krippendorff_alpha (ordinal)")
        .expect("krippendorff result");
    assert!(kripp["p_value"].is_number());
}

#[test]
fn stats_on_empty_csv() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("empty.csv");
    std::fs::write(
        &file,
        "session_id,question_id,latent_variable,question_text,answer_value,answer_text,timestamp\r\n",
    )
    .unwrap();
    let (code, _, err) = convey(&["stats", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("no records"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_convey");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(
        status(&["validate", &corpus("mobile_banking.survey")]),
        Some(EXIT_OK)
    );
    assert_eq!(
        status(&[
            "simulate",
            &corpus("mobile_banking.survey"),
            "--answers",
            "ok"
        ]),
        Some(EXIT_USAGE)
    );
    assert_eq!(status(&["serve", "--port", "not-a-port"]), Some(EXIT_USAGE));
}
