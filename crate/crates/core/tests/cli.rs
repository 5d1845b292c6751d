//! End-to-end runs of the `annobias` binary.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{synth_corpus, write_corpus, CorpusFiles, SynthSpec};

fn annobias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annobias"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path) -> CorpusFiles {
    write_corpus(
        dir,
        &synth_corpus(&SynthSpec {
            per_cell: 80,
            ..SynthSpec::default()
        }),
    )
}

fn corpus_args(f: &CorpusFiles) -> Vec<&str> {
    vec![
        "--comments",
        s(&f.comments),
        "--annotations",
        s(&f.annotations),
        "--demographics",
        s(&f.demographics),
    ]
}

#[test]
fn single_step_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = corpus(d);

    let mut args = vec!["stats"];
    args.extend(corpus_args(&f));
    let out = annobias(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["total"], 800);
    assert_eq!(stats["female_annotation_share"], 0.5);

    let ds = d.join("gender.jsonl");
    let mut args = vec!["sample", "--task", "gender", "--test-fraction", "0.2", "--seed", "9", "--out", s(&ds)];
    args.extend(corpus_args(&f));
    assert!(annobias(&args).status.success());
    let (train, test) = (d.join("gender.train.jsonl"), d.join("gender.test.jsonl"));
    assert!(train.exists() && test.exists());
    assert!(d.join("gender.train.jsonl.manifest.json").exists());

    let scrubbed = d.join("scrubbed.jsonl");
    let out = annobias(&["scrub", "--input", s(&train), "--blacklist", s(&f.blacklist), "--drop-very-toxic", "--out", s(&scrubbed)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&scrubbed).unwrap();
    assert!(common::OFFENSIVE.iter().all(|w| !text.contains(&format!(" {w} "))));
    let manifest = fs::read_to_string(d.join("scrubbed.jsonl.manifest.json")).unwrap();
    assert!(manifest.contains("no_profanity") && manifest.contains("not_very_toxic"));

    let model = d.join("model.json");
    let out = annobias(&["train", "--input", s(&train), "--epochs", "3", "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = annobias(&["evaluate", "--model", s(&model), "--input", s(&test)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["task"], "gender");
    assert!(report["male_prediction_rate"].is_f64());

    let attr = d.join("attr.json");
    let html = d.join("attr.html");
    let out = annobias(&["attribute", "--model", s(&model), "--input", s(&test), "--steps", "20", "--html", s(&html), "--out", s(&attr)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let study: serde_json::Value = serde_json::from_str(&fs::read_to_string(&attr).unwrap()).unwrap();
    assert!(!study["records"].as_array().unwrap().is_empty());
    assert!(fs::read_to_string(&html).unwrap().contains("<span"));
}

fn write_plan(d: &Path, f: &CorpusFiles) -> std::path::PathBuf {
    let plan = d.join("plan.toml");
    fs::write(
        &plan,
        format!(
            "seeds = [42]\ntrain_size = 400\ntest_size = 100\nblacklist = \"{}\"\n\n[corpus]\ncomments = \"{}\"\nannotations = \"{}\"\ndemographics = \"{}\"\n\n[ig]\nsteps = 20\n",
            s(&f.blacklist),
            s(&f.comments),
            s(&f.annotations),
            s(&f.demographics)
        ),
    )
    .unwrap();
    plan
}

#[test]
fn studies_are_reproducible_from_a_plan() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = corpus(d);
    let plan = write_plan(d, &f);
    for run in ["a", "b"] {
        let out_dir = d.join(run);
        for cmd in ["run-gender-study", "run-toxicity-matrix"] {
            let out = annobias(&["--config", s(&plan), "--out", s(&out_dir), cmd]);
            assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
            assert!(out.stdout.is_empty());
        }
    }
    for file in [
        "gender_study.json",
        "gender_study.csv",
        "toxicity_matrix.json",
        "toxicity_matrix.csv",
        "correlation.json",
        "distribution.json",
        "attribution.json",
    ] {
        let a = fs::read(d.join("a").join(file)).unwrap();
        let b = fs::read(d.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }

    let out = annobias(&["report", "--input", s(&d.join("a/toxicity_matrix.json")), "--format", "csv"]);
    assert!(out.status.success());
    assert_eq!(out.stdout, fs::read(d.join("a/toxicity_matrix.csv")).unwrap());
    let out = annobias(&["report", "--input", s(&d.join("a/gender_study.json")), "--format", "csv"]);
    assert_eq!(out.stdout, fs::read(d.join("a/gender_study.csv")).unwrap());
}

#[test]
fn exit_codes_separate_validation_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = corpus(d);

    // Unknown flag.
    assert_eq!(annobias(&["stats", "--bogus"]).status.code(), Some(1));
    // Missing required column.
    let broken = d.join("broken.tsv");
    fs::write(&broken, "id\tcomment\n1\thello\n").unwrap();
    let out = annobias(&["stats", "--comments", s(&broken), "--annotations", s(&f.annotations), "--demographics", s(&f.demographics)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rev_id"));
    // Plan without a corpus section.
    let plan = d.join("empty.toml");
    fs::write(&plan, "seeds = [1]\n").unwrap();
    assert_eq!(annobias(&["--config", s(&plan), "run-gender-study"]).status.code(), Some(1));
    // Unreadable input is a runtime failure.
    let out = annobias(&["evaluate", "--model", s(&d.join("missing.json")), "--input", s(&d.join("missing.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(annobias(&["--help"]).status.code(), Some(0));
}
