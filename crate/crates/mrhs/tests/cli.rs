use std::path::PathBuf;

use mrhs::cli::{run, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION};
use mrhs::snapshot::HEADER_LEN;
use serde_json::Value;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn mrhs(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("mrhs").chain(args.iter().copied()), &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn json_lines(s: &str) -> Vec<Value> {
    s.lines().filter_map(|l| serde_json::from_str(l).ok()).collect()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("mrhs-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

const SMALL: [&str; 4] = ["--set", "lattice.dims=4 4 4 4", "--set", "block.b=2"];

fn with_small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(SMALL);
    v.extend(extra);
    v
}

#[test]
fn header_records_config_hash_and_rng() {
    let o = mrhs(&with_small("solve", &[]));
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let lines = json_lines(&o.stdout);
    let h = &lines[0];
    assert_eq!(h["command"], "solve");
    assert_eq!(h["rng"], "ChaCha8Rng");
    assert_eq!(h["seed"], 1);
    assert_eq!(h["config_hash"].as_str().unwrap().len(), 64);
    assert!(h["version"].is_string());

    let dir = scratch("header");
    let file = dir.join("run.cfg");
    std::fs::write(&file, "lattice.dims = 4 4 4 4\nblock.b = 2\n").unwrap();
    let o2 = mrhs(&["solve", "--config", file.to_str().unwrap()]);
    assert_eq!(json_lines(&o2.stdout)[0]["config_hash"], h["config_hash"]);
}

#[test]
fn solve_converges_and_odd_even_needs_fewer_iterations() {
    let full = mrhs(&with_small("solve", &[]));
    let oe = mrhs(&with_small("solve", &["--set", "solver.odd_even=true"]));
    assert_eq!(full.code, EXIT_OK, "{}", full.stderr);
    assert_eq!(oe.code, EXIT_OK, "{}", oe.stderr);
    let (a, b) = (&json_lines(&full.stdout)[1], &json_lines(&oe.stdout)[1]);
    assert_eq!(a["converged"], true);
    assert_eq!(b["converged"], true);
    for r in b["final_explicit_relnorms"].as_array().unwrap() {
        assert!(r.as_f64().unwrap() <= 1e-8);
    }
    assert!(b["iterations"].as_u64().unwrap() < a["iterations"].as_u64().unwrap());
    assert!(full.stdout.contains("iter,rhs,relnorm"));
}

#[test]
fn fixed_iterations_run_exactly_one_hundred() {
    let o = mrhs(&with_small("solve", &["--set", "solver.fixed_iterations=true"]));
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(json_lines(&o.stdout)[1]["iterations"], 100);
    let rows = o.stdout.lines().filter(|l| l.starts_with("100,")).count();
    assert_eq!(rows, 2);
}

#[test]
fn solve_is_deterministic() {
    let a = mrhs(&with_small("solve", &["--set", "seed=9"]));
    let b = mrhs(&with_small("solve", &["--set", "seed=9"]));
    let c = mrhs(&with_small("solve", &["--set", "seed=10"]));
    let sum = |o: &Output| json_lines(&o.stdout)[1]["solution_checksum"].clone();
    assert_eq!(sum(&a), sum(&b));
    assert_ne!(sum(&a), sum(&c));
}

#[test]
fn bench_emits_one_record_per_block_and_layout() {
    let o = mrhs(&[
        "bench-dirac",
        "--set",
        "lattice.dims=4 4 4 4",
        "--set",
        "block.b=1 2 4 8 16",
        "--set",
        "block.layout=1 2",
        "--warmup",
        "1",
        "--reps",
        "2",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let lines = json_lines(&o.stdout);
    let records: Vec<_> = lines.iter().filter(|v| v.get("gflops").is_some()).collect();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| r["gflops"].as_f64().unwrap() > 0.0));
    assert!(lines.iter().any(|v| v.get("mrhs_speedup").is_some()));
}

#[test]
fn bench_checksums_are_reproducible() {
    let args = ["bench-dirac", "--set", "lattice.dims=4 4 4 4", "--warmup", "0", "--reps", "1"];
    let sums = |o: Output| {
        let v = &json_lines(&o.stdout)[1];
        (v["gauge_checksum"].clone(), v["clover_checksum"].clone())
    };
    assert_eq!(sums(mrhs(&args)), sums(mrhs(&args)));
}

#[test]
fn corrupted_gauge_snapshot_fails_unitarity() {
    let dir = scratch("corrupt");
    let o = mrhs(&with_small("gen-fields", &["--out-dir", dir.to_str().unwrap()]));
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let gauge = dir.join("gauge.lqmg");
    let mut bytes = std::fs::read(&gauge).unwrap();
    let re = f64::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap());
    bytes[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&(re + 1e-3).to_le_bytes());
    std::fs::write(&gauge, &bytes).unwrap();

    let o = mrhs(&with_small("oracle-check", &["--gauge", gauge.to_str().unwrap()]));
    assert_eq!(o.code, EXIT_NUMERICAL);
    assert!(o.stderr.contains("gauge-unitarity"), "{}", o.stderr);
    let failed: Vec<_> = json_lines(&o.stdout).into_iter().filter(|v| v["passed"] == false).collect();
    assert_eq!(failed[0]["suite"], "gauge-unitarity");
}

#[test]
fn truncated_snapshot_is_a_validation_error() {
    let dir = scratch("truncated");
    assert_eq!(mrhs(&with_small("gen-fields", &["--out-dir", dir.to_str().unwrap()])).code, EXIT_OK);
    let clover = dir.join("clover.lqmc");
    let bytes = std::fs::read(&clover).unwrap();
    std::fs::write(&clover, &bytes[..bytes.len() - 16]).unwrap();
    let o = mrhs(&with_small("oracle-check", &["--clover", clover.to_str().unwrap()]));
    assert_eq!(o.code, EXIT_VALIDATION, "{}", o.stderr);
}

#[test]
fn invalid_configuration_exits_with_validation_code() {
    for set in [
        "lattice.dims=4 4 3 4",
        "block.layout=3",
        "block.b=0",
        "lattice.boundary=antiperiodic",
        "no.such.key=1",
        "solver.tol=-1",
    ] {
        let o = mrhs(&["solve", "--set", set]);
        assert_eq!(o.code, EXIT_VALIDATION, "{set}: {}", o.stderr);
        assert!(o.stderr.starts_with("error"), "{set}: {}", o.stderr);
    }
    assert_eq!(mrhs(&["no-such-command"]).code, EXIT_VALIDATION);
    assert_eq!(mrhs(&["cost-model", "--svl", "256"]).code, EXIT_VALIDATION);
}

#[test]
fn cost_model_reports_total_cost() {
    let dir = scratch("cost");
    let path = dir.join("neg-a.json");
    let o = mrhs(&["cost-model", "--strategy", "neg-a", "--b", "8", "--out", path.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["total_cost"], 28.0);
    assert_eq!(v["histogram"]["FMOPA"], 6);
    let o = mrhs(&["cost-model", "--strategy", "neg-a", "--b", "8", "--b2", "16"]);
    let line = &json_lines(&o.stdout)[1];
    assert_eq!(line["total_cost"], v["total_cost"]);
    assert_eq!(line["delta_cost"], 1900.0);
}

#[test]
fn roofline_from_bench_records() {
    let dir = scratch("roofline");
    let runs = dir.join("runs.json");
    let csv = dir.join("roofline.csv");
    let o = mrhs(&[
        "bench-dirac",
        "--set",
        "lattice.dims=4 4 4 4",
        "--set",
        "block.b=1 4",
        "--warmup",
        "0",
        "--reps",
        "1",
        "--out",
        runs.to_str().unwrap(),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let o = mrhs(&[
        "roofline",
        "--in",
        runs.to_str().unwrap(),
        "--triad-bw",
        "100",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("b,layout,ai,gflops,theor_gflops,arch_eff"));
    assert_eq!(lines.count(), 2);
}
