use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use herdrec::corpus_io::load_checkpoint;
use herdrec::data_model::Dataset;
use herdrec::corpus_io::load_tsc_corpus;
use herdrec::evaluator::{build_ground_truth, rank_videos, score_ground_truth};

fn herdrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_herdrec")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = herdrec(&[
        "synth", "--users", "6", "--videos", "10", "--comments", "400", "--latent-dim", "8", "--visual-dim", "4",
        "--seed", "1", "--out", s(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train(dir: &Path, ck: &Path, variant: &str) {
    let out = herdrec(&[
        "train", "--corpus", s(&dir.join("train.jsonl")), "--features", s(&dir.join("features.tsv")),
        "--variant", variant, "--d", "4", "--m", "3", "--epochs", "2", "--out", s(ck),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_writes_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    for f in ["train.jsonl", "test.jsonl", "features.tsv", "affinities.csv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let ck = tmp.path().join("ck");
    let dump = tmp.path().join("attention.json");
    let out = herdrec(&[
        "train", "--corpus", s(&data.join("train.jsonl")), "--variant", "t-hea", "--d", "4", "--m", "3",
        "--epochs", "2", "--out", s(&ck), "--dump-attention", s(&dump), "--dump-limit", "3",
    ]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);
    let loss = fs::read_to_string(ck.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,mean_loss"));
    assert_eq!(loss.lines().count(), 3);
    let traces: serde_json::Value = serde_json::from_slice(&fs::read(&dump).unwrap()).unwrap();
    assert_eq!(traces.as_array().unwrap().len(), 3);
    assert_eq!(traces[0]["trace"]["weights"].as_array().unwrap().len(), 3);

    let report = tmp.path().join("report.json");
    let out = herdrec(&[
        "evaluate", "--checkpoint", s(&ck), "--test-corpus", s(&data.join("test.jsonl")), "--topx", "2,4",
        "--out", s(&report),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let xs: Vec<u64> = report["topx"].as_array().unwrap().iter().map(|m| m["x"].as_u64().unwrap()).collect();
    assert_eq!(xs, vec![2, 4]);
}

#[test]
fn recommend_matches_evaluator_ranking() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let ck = tmp.path().join("ck");
    train(&data, &ck, "itf");
    let test = data.join("test.jsonl");

    let ckpt = load_checkpoint(&ck).unwrap();
    let (dataset, _): (Dataset, _) = load_tsc_corpus(&test).unwrap();
    let (scores, _) = score_ground_truth(&ckpt, &build_ground_truth(&dataset.comments)).unwrap();
    let (user, user_scores) = scores.iter().next().unwrap();
    let expected: Vec<String> = rank_videos(user_scores.clone()).into_iter().map(|(v, _)| v).collect();

    let out = herdrec(&["recommend", "--checkpoint", s(&ck), "--user", user, "--topx", "1000", "--test-corpus", s(&test)]);
    assert!(out.status.success());
    let ranked: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let got: Vec<String> = ranked
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["video_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(got, expected);

    let again = herdrec(&["recommend", "--checkpoint", s(&ck), "--user", user, "--topx", "1000", "--test-corpus", s(&test)]);
    assert_eq!(again.stdout, out.stdout);

    let out = herdrec(&["recommend", "--checkpoint", s(&ck), "--user", user, "--topx", "2", "--candidates", "v000,v001,v002"]);
    let ranked: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ranked.as_array().unwrap().len(), 2);
}

#[test]
fn sweep_rows_follow_grid_and_repeat() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let run = |name: &str, jobs: &str| {
        let out_path = tmp.path().join(name);
        let out = herdrec(&[
            "sweep-beta", "--corpus", s(&data.join("train.jsonl")), "--test-corpus", s(&data.join("test.jsonl")),
            "--variant", "t-hea", "--d", "4", "--epochs", "1", "--betas", "0,0.2", "--ms", "3", "--topx", "1,2",
            "--jobs", jobs, "--out", s(&out_path),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_path).unwrap()
    };
    let csv = run("a.csv", "1");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,m,topx,precision,recall,f1");
    assert_eq!(lines.len(), 1 + 2 * 2);
    let betas: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(betas, vec!["0", "0", "0.2", "0.2"]);
    assert_eq!(run("b.csv", "1"), csv);
    assert_eq!(run("c.csv", "2"), csv);
}

#[test]
fn help_documents_training_defaults() {
    for sub in ["train", "sweep-beta"] {
        let out = herdrec(&[sub, "--help"]);
        assert!(out.status.success());
        let help = String::from_utf8_lossy(&out.stdout);
        for needle in ["[default: 128]", "[default: 0.001]", "[default: itf-hea]", "[default: literal]"] {
            assert!(help.contains(needle), "{sub}: {needle}");
        }
    }
    let help = String::from_utf8_lossy(&herdrec(&["train", "--help"]).stdout).to_string();
    assert!(help.contains("[default: 0.2]") && help.contains("[default: 10]"));
}

#[test]
fn gradcheck_command_passes() {
    let out = herdrec(&["gradcheck", "--variant", "tm,itf-hea", "--d", "4", "--m", "2"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("passed"));
    let out = herdrec(&["gradcheck", "--d", "16"]);
    assert_eq!(out.status.code(), Some(1));
}
