use std::fs;
use std::path::Path;

use pickle_sentry_cli::{run, EXIT_ERROR, EXIT_FINDINGS, EXIT_OK, EXIT_USAGE};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Out {
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let argv = std::iter::once("pickle-sentry").chain(args.iter().copied());
    let code = run(argv, &mut stdout, &mut stderr);
    Out { code, stdout: String::from_utf8(stdout).unwrap(), stderr: String::from_utf8(stderr).unwrap() }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Corpus with gz and zip>zip variants plus a trained forest.
fn fixture(dir: &Path) -> (String, String) {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{"seed": 4, "n_benign": 40, "n_malicious": 10, "wrap_paths": ["gz", "zip-zip"]}"#).unwrap();
    let corpus = dir.join("corpus");
    let r = cli(&["gen-corpus", "--spec", p(&spec), "--out", p(&corpus)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let manifest = corpus.join("manifest.csv");
    let model = dir.join("rf.json");
    let r = cli(&["train", "--kind", "forest", "--corpus", p(&manifest), "--seed", "1", "--out", p(&model)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    (manifest.to_str().unwrap().to_string(), model.to_str().unwrap().to_string())
}

#[test]
fn disasm_none_pickle() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("none.pkl");
    fs::write(&f, b"N.").unwrap();
    let r = cli(&["disasm", p(&f)]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.stdout, "0 NONE\n1 STOP\n");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let r = cli(&["scan", "--frobnicate", "x.pkl"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.stderr.contains("Usage:"), "{}", r.stderr);
    assert_eq!(cli(&["no-such-command"]).code, EXIT_USAGE);
    assert_eq!(cli(&[]).code, EXIT_USAGE);
}

#[test]
fn help_and_version_succeed() {
    let r = cli(&["--help"]);
    assert_eq!(r.code, EXIT_OK);
    for sub in ["scan", "train", "eval", "disasm", "decompile", "features", "gen-corpus", "bench"] {
        assert!(r.stdout.contains(sub), "{sub} missing from help");
    }
    assert_eq!(cli(&["--version"]).code, EXIT_OK);
}

#[test]
fn ml_only_requires_a_model() {
    let r = cli(&["scan", "--ml-only", "x.pkl"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.stderr.contains("--model"));
}

#[test]
fn zero_max_depth_is_rejected() {
    assert_eq!(cli(&["scan", "--max-depth", "0", "x.pkl"]).code, EXIT_USAGE);
    assert_eq!(cli(&["scan", "--jobs", "0", "x.pkl"]).code, EXIT_USAGE);
}

#[test]
fn gz_exploit_with_trained_forest() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = fixture(dir.path());
    let gz = dir.path().join("corpus/wrapped/m00000/gz.gz");
    let r = cli(&["scan", "--model", &model, "--json", p(&gz)]);
    assert_eq!(r.code, EXIT_FINDINGS, "{}", r.stderr);
    let report: serde_json::Value = serde_json::from_str(r.stdout.lines().next().unwrap()).unwrap();
    assert_eq!(report["file_verdict"], "malicious");
    let chain = report["candidates"][0]["origin_chain"].as_array().unwrap();
    assert_eq!(chain.len(), 1);
    assert_eq!(chain[0]["kind"], "gzip");

    // the same payload unwrapped and double-zipped scores identically
    let plain = fs::read_dir(dir.path().join("corpus/malicious")).unwrap().map(|e| e.unwrap().path()).min().unwrap();
    let zz = dir.path().join("corpus/wrapped/m00000/zip-zip.zip");
    let r = cli(&["scan", "--model", &model, "--ml-only", "--json", p(&plain), p(&zz)]);
    let scores: Vec<f64> = r
        .stdout
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["ml_score"].as_f64().unwrap())
        .collect();
    assert_eq!(scores.len(), 2);
    assert_eq!(scores[0].to_bits(), scores[1].to_bits());
    assert_eq!(report["ml_score"].as_f64().unwrap().to_bits(), scores[0].to_bits());
}

#[test]
fn eval_prints_percent_table() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, model) = fixture(dir.path());
    let r = cli(&["eval", "--model", &model, "--corpus", &manifest]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    // trained on the same corpus: every sample is separated
    for line in ["TP 100.00", "TN 100.00", "F1 100.00"] {
        assert!(r.stdout.lines().any(|l| l == line), "{line} not in\n{}", r.stdout);
    }
    assert!(r.stdout.contains("samples 70 (40 benign, 30 malicious)"), "{}", r.stdout);
}

#[test]
fn unsupervised_kinds_train_and_scan() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = fixture(dir.path());
    for kind in ["iforest", "lof"] {
        let model = dir.path().join(format!("{kind}.json"));
        let r = cli(&["train", "--kind", kind, "--corpus", &manifest, "--out", p(&model)]);
        assert_eq!(r.code, EXIT_OK, "{kind}: {}", r.stderr);
        let r = cli(&["eval", "--model", p(&model), "--corpus", &manifest]);
        assert_eq!(r.code, EXIT_OK);
        assert!(r.stdout.contains("F1 "));
    }
    let r = cli(&["train", "--kind", "svm", "--corpus", &manifest, "--out", "x.json"]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn scan_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let benign = dir.path().join("ok.pkl");
    fs::write(&benign, b"\x80\x04\x95\x05\x00\x00\x00\x00\x00\x00\x00]\x94K\x01a.").unwrap();
    let evil = dir.path().join("evil.pkl");
    fs::write(&evil, b"cos\nsystem\n(S'echo pwned'\ntR.").unwrap();
    let empty = dir.path().join("empty.pkl");
    fs::write(&empty, b"").unwrap();

    assert_eq!(cli(&["scan", p(&benign)]).code, EXIT_OK);
    let r = cli(&["scan", p(&benign), p(&evil)]);
    assert_eq!(r.code, EXIT_FINDINGS);
    assert!(r.stdout.contains("2 files: 1 benign, 0 suspicious, 1 malicious, 0 scan errors"), "{}", r.stdout);
    // a scan error outranks findings
    assert_eq!(cli(&["scan", p(&benign), p(&evil), p(&empty)]).code, EXIT_ERROR);
    assert_eq!(cli(&["scan", p(&dir.path().join("missing.pkl"))]).code, EXIT_ERROR);
}

#[test]
fn scan_directory_in_path_order() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["c.pkl", "a.pkl", "b.pkl"] {
        fs::write(dir.path().join(name), b"N.").unwrap();
    }
    let r = cli(&["scan", "--json", p(dir.path())]);
    assert_eq!(r.code, EXIT_OK);
    let paths: Vec<String> = r
        .stdout
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["path"].as_str().unwrap().to_string())
        .collect();
    let names: Vec<&str> = paths.iter().map(|s| Path::new(s).file_name().unwrap().to_str().unwrap()).collect();
    assert_eq!(names, ["a.pkl", "b.pkl", "c.pkl"]);
}

#[test]
fn policy_file_adds_denials() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("m.pkl");
    fs::write(&f, b"ctorch\nload\n(S'x'\ntR.").unwrap();
    assert_eq!(cli(&["scan", p(&f)]).code, EXIT_OK);
    let policy = dir.path().join("policy.json");
    fs::write(&policy, r#"{"deny": ["torch.load"]}"#).unwrap();
    assert_eq!(cli(&["scan", "--policy", p(&policy), p(&f)]).code, EXIT_FINDINGS);
    fs::write(&policy, r#"{"deny": [1]}"#).unwrap();
    assert_eq!(cli(&["scan", "--policy", p(&policy), p(&f)]).code, EXIT_ERROR);
}

#[test]
fn features_csv_and_decompile() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = dir.path().join("f.csv");
    let r = cli(&["features", "--jobs", "2", p(&dir.path().join("corpus/malicious")), "--out", p(&out)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 10);
    let rows = pickle_sentry::features::read_csv(text.as_bytes()).unwrap();
    for (_, v) in &rows {
        assert!((v.freqs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let f = dir.path().join("e.pkl");
    fs::write(&f, b"cos\nsystem\n(S'echo pwned'\ntR.").unwrap();
    let r = cli(&["decompile", p(&f)]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.stdout, "from os import system\n\nresult = system('echo pwned')\n");
}

#[test]
fn bench_reports_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, model) = fixture(dir.path());
    let r = cli(&["bench", "--model", &model, "--corpus", &manifest]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    for stage in ["read", "unwrap", "disassemble", "features", "inference", "pipeline"] {
        assert!(r.stdout.lines().any(|l| l.starts_with(stage)), "{stage}\n{}", r.stdout);
    }
}

#[test]
fn gen_corpus_rejects_bad_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"seed": 1, "n_benign": 1, "n_malicious": 0}"#).unwrap();
    let r = cli(&["gen-corpus", "--spec", p(&spec), "--out", p(&dir.path().join("o"))]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.stderr.contains("at least 2"), "{}", r.stderr);
}
