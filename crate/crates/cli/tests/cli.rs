use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sitebt::actionseq::parse;
use sitebt::btcompile::{compile, plan_stats};
use sitebt::eval::EVAL_REPORT_SCHEMA;
use sitebt::scenario::{bundled_scenario, catalog};
use tempfile::TempDir;

const FIGURE: &str = include_str!("../../core/data/load_soil_onto_dump_truck.aseq");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn core_data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn sitebt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sitebt"))
        .current_dir(dir)
        .args(args)
        .env_remove("SITEBT_LLM_TOKEN")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// plan --scenario N, compile, and return the XML directory.
fn artifacts(tmp: &Path, scenario: u32) -> PathBuf {
    let seq = tmp.join(format!("s{scenario}.aseq"));
    let out = sitebt(tmp, &["plan", "--scenario", &scenario.to_string(), "-o", p(&seq)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let xml = tmp.join(format!("s{scenario}"));
    let out = sitebt(tmp, &["compile", p(&seq), "--scenario", &scenario.to_string(), "-o", p(&xml)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    xml
}

#[test]
fn rules_plan_for_scenario_4_is_one_dump() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(tmp.path(), &["plan", "--scenario", "4", "--planner", "rules", "-o", "four.aseq"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let seq = parse(&fs::read_to_string(tmp.path().join("four.aseq")).unwrap()).unwrap();
    assert_eq!(seq.statements.len(), 1);
    assert_eq!(seq.statements[0].to_line().split(" #").next().unwrap(), "1. dump_soil(dump_truck)");
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("validation: ok"), "{summary}");
    assert!(summary.contains("nrf 0"), "{summary}");
}

#[test]
fn replayed_model_answer_gives_the_figure_example() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(
        tmp.path(),
        &[
            "plan",
            "Load the soil onto a dump truck.",
            "--planner",
            "llm",
            "--hitl",
            "off",
            "--replay",
            p(&fixture("figure_reply.json")),
            "--transcripts",
            "t.json",
            "-o",
            "fig.aseq",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(tmp.path().join("fig.aseq")).unwrap(), FIGURE);
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("flags: 2 generated, nrf 0"), "{summary}");

    // the saved transcripts replay to the same file
    let again = sitebt(
        tmp.path(),
        &["plan", "x", "--planner", "llm", "--hitl", "off", "--replay", "t.json", "-o", "again.aseq"],
    );
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    assert_eq!(fs::read_to_string(tmp.path().join("again.aseq")).unwrap(), FIGURE);
}

#[test]
fn malformed_model_answer_is_a_planner_error() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(
        tmp.path(),
        &[
            "plan",
            "--scenario",
            "4",
            "--planner",
            "llm",
            "--hitl",
            "off",
            "--replay",
            p(&fixture("malformed_reply.json")),
            "-o",
            "bad.aseq",
        ],
    );
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("line 1"), "{err}");
    assert!(!tmp.path().join("bad.aseq").exists());
}

#[test]
fn scripted_feedback_buys_exactly_one_more_answer() {
    let tmp = TempDir::new().unwrap();
    let hitl = format!("scripted:{}", p(&fixture("feedback.txt")));
    let out = sitebt(
        tmp.path(),
        &[
            "plan",
            "Load the soil onto a dump truck.",
            "--planner",
            "llm",
            "--hitl",
            &hitl,
            "--replay",
            p(&fixture("two_replies.json")),
            "--transcripts",
            "t.json",
            "-o",
            "fig.aseq",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(tmp.path().join("fig.aseq")).unwrap(), FIGURE);
    let t: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("t.json")).unwrap()).unwrap();
    let t = t.as_array().unwrap();
    assert_eq!(t.len(), 2);
    assert!(t[1].to_string().contains("also move the truck to the loading site"));
    assert_eq!(t[1]["usage"]["attempt"], 2);
}

#[test]
fn interactive_review_reads_one_line_from_stdin() {
    use std::io::Write;
    use std::process::Stdio;
    let tmp = TempDir::new().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_sitebt"))
        .current_dir(tmp.path())
        .args(["plan", "Load.", "--planner", "llm", "--replay", p(&fixture("two_replies.json")), "-o", "o.aseq"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"please add the truck\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let err = stderr(&out);
    assert_eq!(err.matches("--- proposed action sequence ---").count(), 1, "{err}");
    assert!(err.contains("1. initial_pose(excavator)"));
    assert_eq!(fs::read_to_string(tmp.path().join("o.aseq")).unwrap(), FIGURE);
}

#[test]
fn llm_without_config_or_replay_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(tmp.path(), &["plan", "--scenario", "4", "--planner", "llm", "--hitl", "off"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_token_is_a_planner_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("llm.json");
    fs::write(
        &cfg,
        r#"{"base_url": "http://llm.invalid/v1", "model": "m", "auth_env": "SITEBT_TEST_ABSENT_TOKEN",
            "max_tokens": 100, "timeout_secs": 1.0}"#,
    )
    .unwrap();
    let out = sitebt(
        tmp.path(),
        &["plan", "--scenario", "4", "--planner", "llm", "--hitl", "off", "--llm-config", p(&cfg)],
    );
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("SITEBT_TEST_ABSENT_TOKEN"));
}

#[test]
fn compile_figure_writes_one_tree_per_machine_and_stats() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(
        tmp.path(),
        &["compile", p(&core_data("load_soil_onto_dump_truck.aseq")), "--scenario", "6", "-o", "fig"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = tmp.path().join("fig");
    assert_eq!(files_in(&dir), ["dump_truck.xml", "excavator.xml", "stats.json"]);

    let plan = compile(&parse(FIGURE).unwrap(), &bundled_scenario(6).unwrap().param_db()).unwrap();
    let stats: Value = serde_json::from_str(&fs::read_to_string(dir.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats, serde_json::to_value(plan_stats(&plan)).unwrap());
    assert_eq!(stats["nn_total"], 25);
    for (machine, xml) in &plan.xml {
        assert_eq!(&fs::read_to_string(dir.join(format!("{machine}.xml"))).unwrap(), xml);
    }
}

#[test]
fn compile_with_an_exported_params_file() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(tmp.path(), &["params", "--scenario", "6"]);
    assert_eq!(code(&out), 0);
    fs::write(tmp.path().join("db.json"), &out.stdout).unwrap();
    let out = sitebt(
        tmp.path(),
        &["compile", p(&core_data("load_soil_onto_dump_truck.aseq")), "--params", "db.json", "-o", "fig"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(files_in(&tmp.path().join("fig")).len(), 3);
}

#[test]
fn invalid_sequence_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    // excavators cannot dump
    fs::write(tmp.path().join("bad.aseq"), "1. initial_pose(excavator)\n2. dump_soil(excavator)\n").unwrap();
    let out = sitebt(tmp.path(), &["compile", "bad.aseq", "--scenario", "6", "-o", "out"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("statement 2"), "{}", stderr(&out));
    assert_eq!(files_in(tmp.path()), ["bad.aseq"]);

    // an existing output directory is left as it was
    fs::create_dir(tmp.path().join("out")).unwrap();
    fs::write(tmp.path().join("out/keep.txt"), "x").unwrap();
    let out = sitebt(tmp.path(), &["compile", "bad.aseq", "--scenario", "6", "-o", "out"]);
    assert_eq!(code(&out), 2);
    assert_eq!(files_in(&tmp.path().join("out")), ["keep.txt"]);
    assert_eq!(files_in(tmp.path()), ["bad.aseq", "out"]);

    // so does a sequence that does not parse
    fs::write(tmp.path().join("junk.aseq"), "1. dump_soil(\n").unwrap();
    let out = sitebt(tmp.path(), &["compile", "junk.aseq", "--scenario", "6", "-o", "junk"]);
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("junk").exists());
}

#[test]
fn scenario_6_runs_to_success() {
    let tmp = TempDir::new().unwrap();
    let xml = artifacts(tmp.path(), 6);
    let out = sitebt(
        tmp.path(),
        &["run", p(&xml), "--scenario", "6", "--report", "r.json", "--timeline", "t.csv", "--events", "e.jsonl"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["success"], true);
    assert_eq!(report["violations"], Value::Array(vec![]));

    let csv = fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    let ticks = report["ticks_used"].as_u64().unwrap() as usize;
    assert!(csv.lines().count() > ticks, "one row per tick plus a header");
    let events = fs::read_to_string(tmp.path().join("e.jsonl")).unwrap();
    assert_eq!(events.lines().count(), report["event_log"].as_array().unwrap().len());
    for line in events.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

#[test]
fn mutual_wait_fixture_is_a_deadlock() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(tmp.path(), &["compile", p(&core_data("mutual_wait.aseq")), "--scenario", "6", "-o", "mw"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = sitebt(tmp.path(), &["run", "mw", "--scenario", "6", "--report", "r.json"]);
    assert_eq!(code(&out), 1);
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["success"], false);
    let kinds: Vec<&str> = report["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["Deadlock"]);
    assert!(report["violations"][0]["tick"].as_u64().unwrap() < 50);
}

#[test]
fn deterministic_reports_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let xml = artifacts(tmp.path(), 9);
    for name in ["a.json", "b.json"] {
        let out = sitebt(tmp.path(), &["run", p(&xml), "--scenario", "9", "--report", name]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = fs::read(tmp.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b.json")).unwrap());

    let out = sitebt(tmp.path(), &["run", p(&xml), "--scenario", "9", "--mode", "concurrent", "--report", "c.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn run_input_errors() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(code(&sitebt(tmp.path(), &["run", "empty", "--scenario", "6"])), 2);
    fs::create_dir(tmp.path().join("broken")).unwrap();
    fs::write(tmp.path().join("broken/excavator.xml"), "<root><Sequence>").unwrap();
    assert_eq!(code(&sitebt(tmp.path(), &["run", "broken", "--scenario", "6"])), 2);
    let xml = artifacts(tmp.path(), 6);
    // scenario 9 has no machine called dump_truck
    assert_eq!(code(&sitebt(tmp.path(), &["run", p(&xml), "--scenario", "9"])), 2);
    assert_eq!(code(&sitebt(tmp.path(), &["run", p(&xml)])), 2);
    assert_eq!(code(&sitebt(tmp.path(), &["run", p(&xml), "--scenario", "99"])), 2);
}

#[test]
fn every_catalog_scenario_survives_plan_compile_run() {
    let tmp = TempDir::new().unwrap();
    for s in catalog() {
        let xml = artifacts(tmp.path(), s.id);
        let out = sitebt(tmp.path(), &["run", p(&xml), "--scenario", &s.id.to_string(), "--report", "r.json"]);
        assert_eq!(code(&out), 0, "scenario {}: {}", s.id, stderr(&out));
    }
}

fn check_schema(report: &Value) {
    let schema: Value = serde_json::from_str(EVAL_REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn eval_over_the_bundled_catalog() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(tmp.path(), &["eval", "--report", "eval.json", "--workers", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("eval.json")).unwrap()).unwrap();
    check_schema(&report);
    assert_eq!(report["single"]["scenarios"], 15);
    assert_eq!(report["coordinated"]["scenarios"], 15);
    assert_eq!(report["single"]["sr"], 1.0);
    assert_eq!(report["coordinated"]["sr"], 1.0);
    assert_eq!(report["overall"]["mean_nrf"], 0.0);

    let table = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[0], ["category", "n", "SR", "NRF", "NN", "TU", "GT"]);
    assert_eq!(&rows[1][..3], ["single", "15", "1.00"]);
    assert_eq!(&rows[2][..3], ["coordinated", "15", "1.00"]);
    assert_eq!(&rows[3][..3], ["all", "30", "1.00"]);
    assert_eq!(rows.len(), 4, "no failed scenarios listed");
}

#[test]
fn eval_of_an_empty_catalog() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("cat")).unwrap();
    let out = sitebt(tmp.path(), &["eval", "cat", "--report", "eval.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("eval.json")).unwrap()).unwrap();
    check_schema(&report);
    assert_eq!(report["results"], Value::Array(vec![]));
    assert_eq!(report["overall"]["scenarios"], 0);
    assert_eq!(report["overall"]["total_gt"], 0.0);
}

#[test]
fn eval_with_replayed_answers_and_scripted_feedback() {
    let tmp = TempDir::new().unwrap();
    let cat = tmp.path().join("cat");
    fs::create_dir(&cat).unwrap();
    for id in [4, 5, 6] {
        fs::write(cat.join(format!("scenario_{id:02}.json")), bundled_scenario(id).unwrap().to_json()).unwrap();
    }
    let hitl = format!("scripted:{}", p(&fixture("feedback")));
    let out = sitebt(
        tmp.path(),
        &["eval", "cat", "--planner", "llm", "--replay", p(&fixture("replies")), "--hitl", &hitl, "--report", "e.json"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("e.json")).unwrap()).unwrap();
    check_schema(&report);
    let r = report["results"].as_array().unwrap();
    assert_eq!(r.len(), 3);
    // 4: accepted first answer; 5: fixed after one round of feedback;
    // 6: no replay file, recorded as a planner failure
    assert_eq!(r[0]["success"], true);
    assert_eq!(r[1]["success"], true);
    assert!(r[1]["tu"].as_u64().unwrap() > r[0]["tu"].as_u64().unwrap());
    assert_eq!(r[2]["success"], false);
    assert!(r[2]["error"].as_str().unwrap().starts_with("planner:"));
    assert_eq!(report["planner"], "llm");
    assert!(String::from_utf8_lossy(&out.stdout).contains("scenario  6 failed: planner:"));
}

#[test]
fn eval_refuses_interactive_review() {
    let tmp = TempDir::new().unwrap();
    let out = sitebt(
        tmp.path(),
        &["eval", "--planner", "llm", "--replay", p(&fixture("replies")), "--hitl", "interactive"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn inspect_prints_each_file_kind() {
    let tmp = TempDir::new().unwrap();
    let xml = artifacts(tmp.path(), 6);

    let out = sitebt(tmp.path(), &["inspect", p(&core_data("load_soil_onto_dump_truck.aseq"))]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("excavator (2 statements)"), "{text}");
    assert!(text.contains("dump_truck (1 statements)"), "{text}");
    assert!(text.contains("nrf 0"));

    let out = sitebt(tmp.path(), &["inspect", p(&xml.join("excavator.xml"))]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("RetryUntilSuccessful forever"), "{text}");
    assert!(text.trim_end().ends_with("19 nodes"), "{text}");

    let scen = tmp.path().join("s9.json");
    fs::write(&scen, bundled_scenario(9).unwrap().to_json()).unwrap();
    let out = sitebt(tmp.path(), &["inspect", p(&scen)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("dump_truck_2 DumpTruck"));

    fs::write(tmp.path().join("x.bin"), "").unwrap();
    assert_eq!(code(&sitebt(tmp.path(), &["inspect", "x.bin"])), 2);
}
