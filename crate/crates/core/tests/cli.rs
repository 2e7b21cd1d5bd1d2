use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsa_distill::jsonl::{read_jsonl, write_jsonl};
use fsa_distill::llm_client::{GenRequest, GenResult, GenStatus};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn bin(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fsa-distill"));
    c.current_dir(dir);
    for (k, _) in std::env::vars() {
        if k.starts_with("FSA_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn mini() -> String {
    fixtures().join("mini_tsa").display().to_string()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(tmp.path(), &["sample"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["evaluate", "--dataset", "nope", "--preds", "x"]).status.code(), Some(2));

    let bad = tmp.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    std::fs::write(bad.join("test.jsonl"), "{\"sentence_id\": \"a\"}\n").unwrap();
    let out = run(tmp.path(), &["stats", "tsa_rest14", "--data-dir", "bad"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test.jsonl:1"));
}

#[test]
fn evaluate_mixed_prediction_lines_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("run1.jsonl"),
        [
            r#"{"sentence_id":"te1","pairs":[{"first":"Sushi","polarity":"positive"},{"first":"staff","polarity":"negative"}]}"#,
            r#"{"sentence_id":"te2","completion":"[(\"service\", \"negative\"), (\"dessert\", \"positive\"), (\"view\", \"positive\")]"}"#,
            r#"{"sentence_id":"te4","pairs":[{"first":"NULL","polarity":"positive"}]}"#,
        ]
        .join("\n")
            + "\n",
    )
    .unwrap();
    std::fs::write(
        d.join("run2.jsonl"),
        [
            r#"{"sentence_id":"te1","pairs":[{"first":"sushi","polarity":"positive"},{"first":"staff","polarity":"positive"}]}"#,
            r#"{"sentence_id":"te2","pairs":[{"first":"Service","polarity":"negative"},{"first":"dessert","polarity":"positive"}]}"#,
            r#"{"sentence_id":"te3","pairs":[{"first":"burger","polarity":"neutral"}]}"#,
        ]
        .join("\n")
            + "\n",
    )
    .unwrap();
    let stdout = ok(
        d,
        &["evaluate", "--dataset", "tsa_rest14", "--data-dir", &mini(), "--no-hard", "--preds", "run1.jsonl", "--preds", "run2.jsonl", "-o", "f1.json"],
    );
    assert!(stdout.contains("mean of 2"));
    let report = json(&d.join("f1.json"));
    let run1 = &report["runs"][0]["reports"];
    // tp 3, fp 2, fn 2 over all; NULL prediction on te4 is set aside.
    assert_eq!(run1[0]["score"]["tp"], 3);
    assert_eq!(run1[0]["score"]["fp"], 2);
    assert_eq!(run1[0]["score"]["fn"], 2);
    assert!((run1[0]["score"]["f1"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(run1[0]["excluded_null_pred"], 1);
    assert_eq!(run1[0]["excluded_null_gold"], 1);
    assert!((run1[1]["score"]["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((run1[2]["score"]["f1"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    let all = &report["aggregate"]["all"];
    assert!((all["mean"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!((all["stddev"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert!(d.join("f1.json.manifest.json").exists());
}

#[test]
fn zeroshot_requests_parse_and_score() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["requests", "--dataset", "tsa_rest14", "--data-dir", &mini(), "--no-hard", "--mode", "zeroshot", "--teacher", "gpt35", "-o", "zs.jsonl"],
    );
    let requests: Vec<GenRequest> = read_jsonl(&d.join("zs.jsonl")).unwrap();
    assert_eq!(requests.len(), 5, "NULL target gets no zero-shot instance");
    assert!(requests[0].prompt.contains("Opinion target: sushi"));

    let results: Vec<GenResult> = requests
        .iter()
        .map(|r| GenResult {
            request_id: r.request_id.clone(),
            status: GenStatus::Ok,
            text: Some(if r.instance.as_deref() == Some("Service") { "Label: Negative." } else { "positive" }.into()),
            attempts: 1,
            cached: false,
            error: None,
            review_id: r.review_id.clone(),
            prompt_kind: r.prompt_kind,
            instance: r.instance.clone(),
            teacher_tag: r.teacher_tag.clone(),
        })
        .collect();
    write_jsonl(&d.join("zs-results.jsonl"), &results).unwrap();
    ok(d, &["parse", "--results", "zs-results.jsonl", "-o", "zs-preds.jsonl"]);
    ok(
        d,
        &["zeroshot-eval", "--dataset", "tsa_rest14", "--data-dir", &mini(), "--no-hard", "--preds", "zs-preds.jsonl", "-o", "acc.json"],
    );
    let acc = json(&d.join("acc.json"));
    let reports = &acc["runs"][0]["reports"];
    assert_eq!(reports[0]["correct"], 4);
    assert_eq!(reports[0]["total"], 5);
    assert!((reports[1]["accuracy"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn icl_requests_carry_demos_from_train() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["requests", "--dataset", "tsa_rest14", "--data-dir", &mini(), "--no-hard", "--mode", "icl", "--demos", "2", "--seed", "3", "--teacher", "gpt35", "-o", "icl.jsonl"],
    );
    let requests: Vec<GenRequest> = read_jsonl(&d.join("icl.jsonl")).unwrap();
    assert_eq!(requests.len(), 4);
    assert_eq!(requests[0].request_id, "icl_tsa:te1");
    let p = &requests[0].prompt;
    assert_eq!(p.matches("Sentence: ").count(), 3);
    assert!(p.contains("Label: [(\""));
    assert!(p.trim_end().ends_with("Sentence: The sushi was fresh and the staff friendly.\nLabel:"));
    // Same seed, same demonstrations.
    ok(
        d,
        &["requests", "--dataset", "tsa_rest14", "--data-dir", &mini(), "--no-hard", "--mode", "icl", "--demos", "2", "--seed", "3", "--teacher", "gpt35", "-o", "icl2.jsonl"],
    );
    assert_eq!(
        std::fs::read(d.join("icl.jsonl")).unwrap(),
        std::fs::read(d.join("icl2.jsonl")).unwrap()
    );
}

#[test]
fn convert_xml_then_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let xml = fixtures().join("mini_rest14.xml");
    ok(d, &["convert", "--dataset", "tsa_rest14", "--test", xml.to_str().unwrap(), "-o", "rest14"]);
    let stdout = ok(d, &["stats", "tsa_rest14", "--data-dir", "rest14", "-o", "stats.json"]);
    assert!(stdout.starts_with("TSA-Rest14\n"));
    assert!(stdout.contains("discrepancy: tsa_rest14 test #Sent: computed 2, published 800"));
    let st = json(&d.join("stats.json"));
    assert_eq!(st["stats"]["test"]["targets"], 2);
    assert_eq!(st["stats"]["test"]["multiple"], 1);
    assert!(d.join("rest14/run.manifest.json").exists());
}

#[test]
fn report_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut lines = Vec::new();
    for (t, n) in [("type1", 218), ("type2", 45), ("type3", 263)] {
        for i in 0..n {
            lines.push(format!("{{\"prediction_id\":\"{t}-{i}\",\"type\":\"{t}\"}}"));
        }
    }
    std::fs::write(d.join("labels.jsonl"), lines.join("\n") + "\n").unwrap();
    let table = ok(d, &["error-report", "--labels", "labels.jsonl", "--total", "1459", "--setting", "ICL", "-o", "err.json"]);
    assert!(table.contains("14.94") && table.contains("3.08") && table.contains("18.03"), "{table}");
    assert_eq!(json(&d.join("err.json"))["percentages"], serde_json::json!(["14.94", "3.08", "18.03"]));

    let rec = |item: &str, ann: &str, s: [f64; 6]| {
        serde_json::json!({
            "item_id": item, "model": "gpt35", "domain": "laptop", "annotator_id": ann,
            "scores": {"ta_precision": s[0], "ta_recall": s[1], "senti_accuracy": s[2],
                       "reas_persuasiveness": s[3], "reas_exhaustiveness": s[4], "reas_hallucination": s[5]}
        })
        .to_string()
    };
    std::fs::write(
        d.join("he.jsonl"),
        [
            rec("1", "a", [2.0, 2.0, 1.0, 0.0, 2.0, 2.0]),
            rec("1", "b", [1.0, 2.0, 1.0, 1.0, 2.0, 2.0]),
            rec("2", "a", [2.0, 1.0, 2.0, 2.0, 1.0, 2.0]),
            rec("2", "b", [2.0, 1.0, 2.0, 2.0, 1.0, 1.0]),
        ]
        .join("\n")
            + "\n",
    )
    .unwrap();
    ok(d, &["humaneval-aggregate", "--records", "he.jsonl", "-o", "he.json"]);
    let rows = json(&d.join("he.json"));
    assert_eq!(rows[0]["means"]["ta_precision"], 1.75);
    assert_eq!(rows[0]["means"]["reas_persuasiveness"], 1.25);
    assert_eq!(rows[0]["items"], 2);
}

#[test]
fn config_file_env_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::copy(fixtures().join("reviews_100.jsonl"), d.join("reviews.jsonl")).unwrap();
    std::fs::write(
        d.join("pipeline.toml"),
        "scheme = \"R12421\"\nn = 10\nseed = 1\n\n[paths]\nreviews = \"reviews.jsonl\"\n",
    )
    .unwrap();
    let sample = |extra: &[&str], env: Option<&str>, out: &str| {
        let mut c = bin(d);
        c.args(["--config", "pipeline.toml", "sample", "-o", out]).args(extra);
        if let Some(seed) = env {
            c.env("FSA_SEED", seed);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(d.join(out)).unwrap()
    };
    let from_file = sample(&[], None, "a.jsonl");
    let from_env = sample(&[], Some("2"), "b.jsonl");
    let flag_over_env = sample(&["--seed", "1"], Some("2"), "c.jsonl");
    let explicit2 = sample(&["--seed", "2"], None, "d.jsonl");
    assert_eq!(from_file, flag_over_env);
    assert_eq!(from_env, explicit2);
    assert_ne!(from_file, from_env);

    std::fs::write(d.join("typo.toml"), "sede = 3\n").unwrap();
    let o = bin(d).args(["--config", "typo.toml", "sample", "-o", "x.jsonl"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_may_not_overwrite_input() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::copy(fixtures().join("reviews_100.jsonl"), d.join("reviews.jsonl")).unwrap();
    let o = run(d, &["sample", "--reviews", "reviews.jsonl", "--scheme", "R11111", "-n", "5", "--seed", "1", "-o", "reviews.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_jsonl::<Value>(&d.join("reviews.jsonl")).unwrap().len(), 100);
}
