use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use r2audit_service::api::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn r2audit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2audit"))
        .args(args)
        .output()
        .expect("run r2audit")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .trim()
        .to_string()
}

fn json_out(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.extend(["--format", "json"]);
    serde_json::from_str(&stdout(&r2audit(&all))).unwrap()
}

fn data_file() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/2016_presidential.csv")
}

#[test]
fn kmin_prints_the_threshold() {
    let bravo = r2audit(&[
        "kmin",
        "--rule",
        "eor-bravo",
        "--p",
        "0.75",
        "--alpha",
        "0.1",
        "--n",
        "50",
    ]);
    assert_eq!(stdout(&bravo), "34");
    let minerva = r2audit(&[
        "kmin", "--rule", "minerva", "--p", "0.75", "--alpha", "0.1", "--rounds", "50",
    ]);
    assert_eq!(stdout(&minerva), "31");
    let margin = r2audit(&[
        "kmin", "--rule", "minerva", "--margin", "0.5", "--alpha", "0.1", "--rounds", "50",
    ]);
    assert_eq!(stdout(&margin), "31");
}

#[test]
fn kmin_over_a_schedule_gives_a_row_per_round() {
    let v = json_out(&[
        "kmin",
        "--rule",
        "athena",
        "--p",
        "0.7",
        "--rounds",
        "40,80,120",
    ]);
    assert_eq!(v["schema_version"], 1);
    let rounds = v["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 3);
    let risk: f64 = rounds.iter().map(|r| r["risk"].as_f64().unwrap()).sum();
    assert!(risk <= 0.1);
    let csv = stdout(&r2audit(&[
        "kmin",
        "--rule",
        "athena",
        "--p",
        "0.7",
        "--rounds",
        "40,80,120",
        "--format",
        "csv",
    ]));
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("round,n,kmin,stop_prob,risk"));
}

#[test]
fn ratio_reports_sigma_and_tail_ratio() {
    let v = json_out(&[
        "ratio", "--rule", "minerva", "--p", "0.75", "--n", "50", "--k", "32",
    ]);
    assert!((v["sigma"].as_f64().unwrap() - 1.6458).abs() < 1e-4);
    assert!((v["tail_ratio"].as_f64().unwrap() - 29.9272).abs() < 1e-4);
    assert_eq!(v["kmin"], 31);
}

#[test]
fn athena_first_round_is_about_half_of_end_of_round_bravo() {
    let size = |rule: &str| {
        json_out(&[
            "round-size",
            "--rule",
            rule,
            "--margin",
            "0.1677",
            "--target",
            "0.9",
        ])["relevant_round_size"]
            .as_f64()
            .unwrap()
    };
    let ratio = size("athena") / size("eor-bravo");
    assert!((ratio - 0.5).abs() <= 0.02, "ratio {ratio}");
}

#[test]
fn round_size_scales_by_the_contest() {
    let file = data_file();
    let v = json_out(&[
        "round-size",
        "--rule",
        "athena",
        "--contest",
        file.to_str().unwrap(),
        "--state",
        "Alaska",
    ]);
    assert_eq!(v["scaled_draws"], 295);
}

#[test]
fn usage_errors_exit_2_and_data_errors_exit_3() {
    let bad_rule = r2audit(&["kmin", "--rule", "bogus", "--p", "0.7", "--n", "10"]);
    assert_eq!(bad_rule.status.code(), Some(2));
    let no_round = r2audit(&["kmin", "--p", "0.7"]);
    assert_eq!(no_round.status.code(), Some(2));
    let bad_p = r2audit(&["kmin", "--p", "0.4", "--n", "10"]);
    assert_eq!(bad_p.status.code(), Some(2));
    let missing = r2audit(&[
        "round-size",
        "--contest",
        "/no/such/file.csv",
        "--state",
        "X",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("file.csv"));

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "state,trump,clinton,total_ballots\nX,10,20,5\n").unwrap();
    let bad = r2audit(&["round-size", "--contest", csv.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));
    assert_eq!(r2audit(&["--help"]).status.code(), Some(0));
}

#[test]
fn audit_journal_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("county.jsonl");
    let j = journal.to_str().unwrap();
    let created = json_out(&[
        "audit", "new", "--p", "0.75", "--rule", "minerva", "--rounds", "50,100", "--out", j,
    ]);
    assert_eq!(created["version"], 0);
    assert_eq!(created["id"], "county");

    let mismatch = r2audit(&[
        "audit",
        "round",
        "--session",
        j,
        "--draws",
        "60",
        "--winner",
        "36",
        "--loser",
        "24",
    ]);
    assert_eq!(mismatch.status.code(), Some(1));

    let r = json_out(&[
        "audit",
        "round",
        "--session",
        j,
        "--draws",
        "50",
        "--winner",
        "28",
        "--loser",
        "22",
    ]);
    assert_eq!(r["evaluation"]["decision"], "undetermined");
    let r = json_out(&[
        "audit",
        "round",
        "--session",
        j,
        "--draws",
        "50",
        "--winner",
        "36",
        "--loser",
        "14",
    ]);
    assert_eq!(r["evaluation"]["decision"], "correct");
    assert_eq!(r["version"], 2);

    let status = json_out(&["audit", "status", "--session", j]);
    assert_eq!(status["status"], "stopped_correct");
    assert_eq!(status["rounds"].as_array().unwrap().len(), 2);
    let report = json_out(&["audit", "report", "--session", j]);
    assert_eq!(report["per_round_bound_holds"], true);
    assert_eq!(report["cum_risk"], status["cum_risk"]);

    let text = std::fs::read_to_string(&journal).unwrap();
    std::fs::write(
        &journal,
        text.replacen("\"winner_relevant\":36", "\"winner_relevant\":37", 1),
    )
    .unwrap();
    let tampered = r2audit(&["audit", "status", "--session", j]);
    assert_eq!(tampered.status.code(), Some(3));
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let o = r2audit(&[
        "table",
        "bravo-percentiles",
        "--margins",
        "0.4,0.2",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(stdout(&o), "");
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.4,12,22,38,60,131,"));
}

#[test]
fn simulation_is_reproducible() {
    let file = data_file();
    let args = [
        "simulate",
        "--contest",
        file.to_str().unwrap(),
        "--state",
        "Alaska",
        "--rule",
        "minerva",
        "--rounds",
        "295",
        "--trials",
        "2000",
        "--seed",
        "7",
    ];
    let a = json_out(&args);
    assert_eq!(a, json_out(&args));
    let rate = a["stop_rate"].as_f64().unwrap();
    assert!((rate - 0.91).abs() < 0.03, "rate {rate}");
}

async fn api(app: &axum::Router, method: &str, uri: &str, body: Value) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let bytes = app
        .clone()
        .oneshot(req)
        .await
        .unwrap()
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes();
    serde_json::from_slice(&bytes).unwrap()
}

#[tokio::test]
async fn api_and_cli_agree() {
    let app = router(Arc::new(AppState::default()));
    let contest = api(
        &app,
        "POST",
        "/contests",
        json!({"name": "county", "tallies": {"ada": 5800, "bo": 4200}, "total_ballots": 11000}),
    )
    .await;
    let created = api(
        &app,
        "POST",
        "/audits",
        json!({"contest_id": contest["id"], "rule": "athena", "alpha": 0.1, "schedule": {"kind": "explicit", "sizes": [200, 400]}}),
    )
    .await;
    let id = created["id"].as_str().unwrap();
    let plan = app
        .clone()
        .oneshot(
            Request::get(format!("/audits/{id}/next-round?target=0.8"))
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    let plan: Value =
        serde_json::from_slice(&plan.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let round = api(
        &app,
        "POST",
        &format!("/audits/{id}/rounds"),
        json!({"draws": 220, "winner": 110, "loser": 90, "irrelevant": 20}),
    )
    .await;

    let dir = tempfile::tempdir().unwrap();
    let contest_file = dir.path().join("county.json");
    std::fs::write(&contest_file, contest["contest"].to_string()).unwrap();
    let c = contest_file.to_str().unwrap();
    let cli_plan = json_out(&[
        "round-size",
        "--rule",
        "athena",
        "--contest",
        c,
        "--target",
        "0.8",
    ]);
    assert_eq!(cli_plan, {
        let mut p = plan["plan"].clone();
        p["schema_version"] = json!(1);
        p
    });

    let journal = dir.path().join("a.jsonl");
    let j = journal.to_str().unwrap();
    json_out(&[
        "audit",
        "new",
        "--contest",
        c,
        "--rule",
        "athena",
        "--rounds",
        "200,400",
        "--out",
        j,
    ]);
    let cli_round = json_out(&[
        "audit",
        "round",
        "--session",
        j,
        "--draws",
        "220",
        "--winner",
        "110",
        "--loser",
        "90",
        "--irrelevant",
        "20",
    ]);
    assert_eq!(cli_round["evaluation"], round["evaluation"]);
    let status = json_out(&["audit", "status", "--session", j]);
    assert_eq!(status["cum_risk"], round["audit"]["cum_risk"]);
    assert_eq!(status["risk_report"], round["audit"]["risk_report"]);
}
