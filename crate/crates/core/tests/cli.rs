use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use smgbm::cli::{main_with_args, EXIT_ACCEPTANCE, EXIT_ERROR, EXIT_OK};
use tempfile::TempDir;

const IDENTICAL: &str = r#"
[market]
r = [0.05, 0.05]
sigma = [0.2, 0.2]
mu = [0.08, 0.08]
hazards = [
  [{ family = "none" }, { family = "weibull", scale = 1.0, shape = 2.0 }],
  [{ family = "constant", rate = 1.5 }, { family = "none" }],
]

[contract]
K = 100.0
T = 1.0
"#;

const SMALL_MARKOV: &str = r#"
[market]
r = [0.05, 0.05]
sigma = [0.2, 0.4]
mu = [0.08, 0.10]
hazards = [
  [{ family = "none" }, { family = "constant", rate = 1.0 }],
  [{ family = "constant", rate = 1.0 }, { family = "none" }],
]

[contract]
K = 100.0
T = 1.0

[solver]
n_t = 21
n_s = 61

[output]
dir = "results"
formats = ["csv", "jsonl"]
"#;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("smgbm").chain(args.iter().copied());
    let code = main_with_args(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn arg(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn field(out: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {out}"));
    line.split('=').nth(1).unwrap().trim().parse().unwrap()
}

#[test]
fn bundled_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["markov.toml", "weibull.toml", "identical.toml"] {
        let r = run(&["validate", arg(&dir.join(name))]);
        assert_eq!(r.code, EXIT_OK, "{name}: {}", r.err);
    }
}

#[test]
fn validate_names_every_bad_key() {
    let tmp = TempDir::new().unwrap();
    let text = IDENTICAL
        .replace("sigma = [0.2, 0.2]", "sigma = [0.2, -0.1]")
        .replace("T = 1.0", "T = -1.0");
    let path = write_config(&tmp, "bad.toml", &text);
    let r = run(&["validate", arg(&path)]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("market.sigma[2]"), "{}", r.err);
    assert!(r.err.contains("contract"), "{}", r.err);
}

#[test]
fn malformed_arguments_exit_with_error() {
    assert_eq!(run(&["price"]).code, EXIT_ERROR);
    assert_eq!(run(&["frobnicate"]).code, EXIT_ERROR);
    assert_eq!(run(&["validate", "/no/such/file.toml"]).code, EXIT_ERROR);
    let help = run(&["--help"]);
    assert_eq!(help.code, EXIT_OK);
    assert!(help.out.contains("surface"));
}

#[test]
fn price_matches_black_scholes_and_uses_the_cache() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(&tmp, "identical.toml", IDENTICAL);
    let first = run(&["price", arg(&path), "--at", "0,100,1,0"]);
    assert_eq!(first.code, EXIT_OK, "{}", first.err);
    assert!((field(&first.out, "phi") - 10.4506).abs() < 5e-4, "{}", first.out);
    assert!((field(&first.out, "psi") - 0.636831).abs() < 1e-4, "{}", first.out);

    let cache = tmp.path().join(".smgbm-cache");
    let entries: Vec<_> = fs::read_dir(&cache).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let second = run(&["price", arg(&path), "--at", "0,100,1,0"]);
    assert_eq!(second.out, first.out);

    let fresh = run(&["price", arg(&path), "--at", "0,100,1,0", "--no-cache"]);
    assert_eq!(fresh.out, first.out);
}

#[test]
fn corrupt_cache_is_ignored() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(&tmp, "identical.toml", IDENTICAL);
    assert_eq!(run(&["price", arg(&path), "--at", "T,150,2,0.5"]).code, EXIT_OK);
    for entry in fs::read_dir(tmp.path().join(".smgbm-cache")).unwrap() {
        fs::write(entry.unwrap().path(), b"{ not json").unwrap();
    }
    let r = run(&["price", arg(&path), "--at", "T,150,2,0.5"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(field(&r.out, "phi"), 50.0);
    assert_eq!(field(&r.out, "psi"), 1.0);
}

#[test]
fn price_rejects_points_outside_the_domain() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(&tmp, "identical.toml", IDENTICAL);
    for at in ["0.5,100,1,0.7", "1.5,100,1,0", "0.5,-3,1,0", "0.5,100,3,0", "0.5,100,0,0", "0.5,100,1"] {
        let r = run(&["price", arg(&path), "--at", at, "--no-cache"]);
        assert_eq!(r.code, EXIT_ERROR, "{at}: {}", r.out);
        assert!(!r.err.is_empty());
    }
}

#[test]
fn surface_writes_every_node_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(&tmp, "small.toml", SMALL_MARKOV);
    let r = run(&["surface", arg(&path), "--with-delta", "--no-cache"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let results = tmp.path().join("results");
    let csv = fs::read_to_string(results.join("surface.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21 * 2 * 61 + 1);
    let jsonl = fs::read_to_string(results.join("surface.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 21 * 2 * 61);
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert!(first.is_object());
    assert!(results.join("surface_delta.csv").exists());
    assert!(results.join("surface_delta.jsonl").exists());

    let other = tmp.path().join("again.csv");
    assert_eq!(run(&["surface", arg(&path), "--out", arg(&other), "--no-cache"]).code, EXIT_OK);
    assert_eq!(fs::read(&other).unwrap(), csv.as_bytes());
}

#[test]
fn loose_tolerance_fails_the_battery() {
    let tmp = TempDir::new().unwrap();
    let text = SMALL_MARKOV.replace("n_s = 61", "n_s = 61\ntol = 1e-2") + "\n[mc]\nn_paths = 2000\n";
    let path = write_config(&tmp, "loose.toml", &text);
    let r = run(&["check", arg(&path), "--seed", "3", "--no-cache"]);
    assert_eq!(r.code, EXIT_ACCEPTANCE, "{}{}", r.out, r.err);
    let uniqueness = r.out.lines().find(|l| l.contains("uniqueness")).unwrap();
    assert!(uniqueness.starts_with("[FAIL]"), "{uniqueness}");
    assert!(r.out.contains("(seed 3)"));
    assert_eq!(fs::read_to_string(tmp.path().join("results/check.jsonl")).unwrap().lines().count(), 11);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_smgbm");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/markov.toml");
    let ok = Command::new(exe).args(["validate", arg(&config)]).output().unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    let bad = Command::new(exe).args(["price", arg(&config), "--at", "nope"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_ERROR));
}
