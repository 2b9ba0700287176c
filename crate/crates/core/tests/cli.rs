mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bytespan::Vocabulary;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bytespan")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = String::new();
        for doc in common::kjv_documents(50).into_iter().take(12) {
            let name = format!("{}.txt", doc.doc_id);
            std::fs::write(dir.path().join(&name), &doc.bytes).unwrap();
            manifest.push_str(&format!("{{\"doc_id\":\"{}\",\"path\":\"{name}\",\"language\":\"en\"}}\n", doc.doc_id));
        }
        std::fs::write(dir.path().join("manifest.jsonl"), manifest).unwrap();
        let f = Fixture { dir };
        let out = bin(&[
            "signals",
            "ngram",
            "--order",
            "3",
            "--manifest",
            p(&f.path("manifest.jsonl")),
            "--output",
            p(&f.path("signals.jsonl")),
            "--model-out",
            p(&f.path("model.txt")),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let signals = self.path("signals.jsonl");
        let out = self.path(out);
        let mut args = vec!["train", "--signals", p(&signals), "--output", p(&out)];
        args.extend_from_slice(&["--vocab-size", "1000", "--theta-f", "2"]);
        args.extend_from_slice(extra);
        bin(&args)
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));
    assert_eq!(bin(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin(&[]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["train", "--method", "nonsense"]).status.code(), Some(1));
}

#[test]
fn incremental_with_monotonic_is_rejected() {
    let f = Fixture::new();
    let out = f.train("v.json", &["--method", "incremental", "--constraint", "monotonic"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("global"), "{msg}");
    assert!(!f.path("v.json").exists());
}

#[test]
fn data_errors_exit_two() {
    let f = Fixture::new();
    let missing = f.path("missing.jsonl");
    let out = bin(&["train", "--method", "frequency", "--vocab-size", "900", "--signals", p(&missing), "-o", p(&f.path("v.json"))]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(f.path("bad.jsonl"), "{\"doc_id\":\"a\",\"bytes_hex\":\"6162\",\"surprisal\":[1,2],\"entropy\":[1]}\n").unwrap();
    let out = bin(&["train", "--method", "frequency", "--vocab-size", "900", "--signals", p(&f.path("bad.jsonl")), "-o", p(&f.path("v.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("entropy"));
}

#[test]
fn seed_fraction_one_matches_frequency() {
    let f = Fixture::new();
    assert!(f.train("freq.json", &["--method", "frequency"]).status.success());
    assert!(f.train("seed.json", &["--method", "seed-bpe", "--seed-fraction", "1.0"]).status.success());
    let a = Vocabulary::load(f.path("freq.json")).unwrap();
    let b = Vocabulary::load(f.path("seed.json")).unwrap();
    assert!(a.same_symbols(&b));
    assert_eq!(a.metadata.config["seed_fraction"], "0.5");
    assert_eq!(b.metadata.config["seed_fraction"], "1.0");
    assert!(a.metadata.constraint.as_ref().unwrap().theta_g.is_some());
}

#[test]
fn tokenize_detokenize_and_evaluate() {
    let f = Fixture::new();
    assert!(f.train("v.json", &["--method", "seed-bpe", "--dump-table", p(&f.path("table.jsonl"))]).status.success());
    assert!(std::fs::read_to_string(f.path("table.jsonl")).unwrap().lines().count() > 100);
    let manifest = f.path("manifest.jsonl");
    let out = bin(&["tokenize", "--vocab", p(&f.path("v.json")), "--manifest", p(&manifest), "-o", p(&f.path("ids.jsonl"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin(&["detokenize", "--vocab", p(&f.path("v.json")), "--ids", p(&f.path("ids.jsonl")), "-o", p(&f.path("back.txt"))]);
    assert!(out.status.success());
    let expected: Vec<u8> = common::kjv_documents(50).into_iter().take(12).flat_map(|d| d.bytes).collect();
    assert_eq!(std::fs::read(f.path("back.txt")).unwrap(), expected);

    let gold = common::data_path("gold_morphology.jsonl");
    let out = bin(&[
        "evaluate",
        "--vocab",
        p(&f.path("v.json")),
        "--manifest",
        p(&manifest),
        "--gold",
        p(&gold),
        "--compare",
        p(&f.path("v.json")),
        "--alpha",
        "3",
        "--tsv-dir",
        p(&f.path("tsv")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let m = &report["metrics"];
    assert!(m["fertility"].as_f64().unwrap() >= 1.0);
    assert!((0.0..=1.0).contains(&m["renyi_efficiency"].as_f64().unwrap()));
    assert_eq!(m["vocab_overlap"].as_f64(), Some(1.0));
    assert!(m["morph_coverage"].as_f64().is_some());
    assert_eq!(report["alpha"].as_f64(), Some(3.0));
    assert!(report["per_language"]["en"]["fertility"].as_f64().is_some());
    assert!(report["per_resource"]["derivation"]["coverage"].as_f64().is_some());
    let hist = std::fs::read_to_string(f.path("tsv/token_lengths.tsv")).unwrap();
    assert!(hist.starts_with("length\tcount\n1\t768\n"));

    let out = bin(&["evaluate", "--vocab", p(&f.path("v.json")), "--metrics", "morph"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bpe_baselines_from_raw_documents() {
    let f = Fixture::new();
    let manifest = f.path("manifest.jsonl");
    for method in ["bpe", "bpe-wp"] {
        let out_path = f.path(&format!("{method}.json"));
        let out = bin(&["train", "--method", method, "--vocab-size", "900", "--manifest", p(&manifest), "-o", p(&out_path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v = Vocabulary::load(&out_path).unwrap();
        assert_eq!(v.len(), 900);
        assert!(!v.merges().is_empty());
    }
    let out = bin(&["train", "--method", "frequency", "--vocab-size", "900", "--manifest", p(&manifest), "-o", p(&f.path("x.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn signals_sidecar_and_saved_model() {
    let f = Fixture::new();
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("signals.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["order"], 3);
    let out = bin(&[
        "signals",
        "ngram",
        "--model",
        p(&f.path("model.txt")),
        "--manifest",
        p(&f.path("manifest.jsonl")),
        "-o",
        p(&f.path("again.jsonl")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(f.path("again.jsonl")).unwrap(), std::fs::read(f.path("signals.jsonl")).unwrap());
}
