use std::path::Path;
use std::process::{Command, Output};

use fbq_core::matrix::load_matrix;
use fbq_core::synth::kurtosis;

fn fbq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbq"))
        .args(args)
        .output()
        .expect("spawn fbq")
}

fn ok(args: &[&str]) {
    let out = fbq(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn metric(path: &Path, name: &str) -> f64 {
    csv_rows(path)
        .into_iter()
        .find(|r| r[0] == name)
        .unwrap_or_else(|| panic!("{name} missing"))[1]
        .parse()
        .unwrap()
}

#[test]
fn gen_injects_requested_outliers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let args = [
        "gen",
        "--rows",
        "1024",
        "--cols",
        "1024",
        "--channel",
        "3:120",
        "--token",
        "7:600",
        "--occasional",
        "0.001:150",
        "--seed",
        "1",
        "--out",
        p(&out),
    ];
    ok(&args);
    let m = load_matrix(out.join("matrix.fmat")).unwrap();
    assert_eq!(m.shape(), (1024, 1024));
    for r in 0..1024 {
        if r == 7 {
            assert_eq!(m.get(r, 3).abs(), 600.0);
        } else {
            let v = m.get(r, 3).abs();
            assert!(v == 120.0 || v == 150.0, "row {r}: {v}");
        }
    }
    assert!((0..1024).all(|c| m.get(7, c).abs() == 600.0));
    let stats = out.join("stats.csv");
    assert_eq!(metric(&stats, "token_max"), 600.0);
    assert!(metric(&stats, "channel_max") >= 120.0);

    let again = dir.path().join("again");
    let mut args2 = args.to_vec();
    *args2.last_mut().unwrap() = p(&again);
    ok(&args2);
    let a = std::fs::read(out.join("matrix.fmat")).unwrap();
    let b = std::fs::read(again.join("matrix.fmat")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gen_glu_is_heavy_tailed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen",
        "--glu",
        "--rows",
        "256",
        "--cols",
        "256",
        "--out",
        p(dir.path()),
    ]);
    let m = load_matrix(dir.path().join("matrix.fmat")).unwrap();
    assert!(kurtosis(m.data()) > 3.0);
    let sparsity = csv_rows(&dir.path().join("sparsity.csv"));
    assert_eq!(sparsity.len(), 8);
}

fn sweep_rows(dir: &Path, input: &Path, extra: &[&str]) -> Vec<Vec<String>> {
    let out = dir.join("sweep");
    let mut args = vec!["quant-sweep", "--input", p(input), "--out", p(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    csv_rows(&out.join("sweep.csv"))
}

fn rmse_of(rows: &[Vec<String>], block: &str, bits: &str, method: &str, rate: &str) -> f64 {
    rows.iter()
        .find(|r| r[0] == block && r[1] == bits && r[2] == method && r[3] == rate)
        .unwrap_or_else(|| panic!("no row {block} {bits} {method} {rate}"))[4]
        .parse()
        .unwrap()
}

#[test]
fn sweep_naive_error_grows_with_block_size() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "gen",
        "--rows",
        "512",
        "--cols",
        "512",
        "--channel",
        "5:80",
        "--occasional",
        "0.0005:60",
        "--seed",
        "2",
        "--out",
        p(&g),
    ]);
    let rows = sweep_rows(dir.path(), &g.join("matrix.fmat"), &["--methods", "naive"]);
    let r: Vec<f64> = ["32", "64", "128"]
        .iter()
        .map(|b| rmse_of(&rows, b, "8", "naive", "0"))
        .collect();
    assert!(r[0] <= r[1] && r[1] <= r[2], "{r:?}");
}

#[test]
fn sweep_fallback_128_matches_naive_32_on_glu_input() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "gen",
        "--glu",
        "--rows",
        "512",
        "--cols",
        "1024",
        "--seed",
        "3",
        "--out",
        p(&g),
    ]);
    let rows = sweep_rows(dir.path(), &g.join("matrix.fmat"), &[]);
    let fb = rmse_of(&rows, "128", "8", "fallback", "0.2");
    let naive = rmse_of(&rows, "32", "8", "naive", "0");
    assert!(fb <= naive, "{fb} > {naive}");
}

#[test]
fn sweep_fallback_beats_16_bit_on_sparse_outliers() {
    // One or two equal-magnitude outliers per block, large enough to flush
    // the body in the first step.
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "gen",
        "--rows",
        "1024",
        "--cols",
        "1024",
        "--occasional",
        "0.0001:5000",
        "--seed",
        "4",
        "--out",
        p(&g),
    ]);
    let rows = sweep_rows(
        dir.path(),
        &g.join("matrix.fmat"),
        &["--block-sizes", "128", "--bits", "8,16", "--rates", "1"],
    );
    let fb = rmse_of(&rows, "128", "8", "fallback", "1");
    let int16 = rmse_of(&rows, "128", "16", "naive", "0");
    assert!(fb < int16, "{fb} >= {int16}");
}

#[test]
fn sweep_schema() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&["gen", "--rows", "64", "--cols", "64", "--out", p(&g)]);
    let out = dir.path().join("s");
    ok(&[
        "quant-sweep",
        "--input",
        p(&g.join("matrix.fmat")),
        "--out",
        p(&out),
    ]);
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "block_size,bits,method,fallback_rate,rmse,max_err,cossim,underflow_fraction"
    );
    // 3 block sizes x (1 naive + 1 fallback rate).
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn gemm_check_examples_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = |n: &str| dir.path().join(n);
    ok(&[
        "gemm-check",
        "--m",
        "256",
        "--n",
        "256",
        "--k",
        "256",
        "--mask",
        "none",
        "--out",
        p(&out("a")),
    ]);
    let rows = csv_rows(&out("a").join("gemm_check.csv"));
    assert!(rows
        .iter()
        .any(|r| r[1] == "zero_mask_mismatches" && r[2] == "0"));
    ok(&[
        "gemm-check",
        "--m",
        "512",
        "--n",
        "512",
        "--k",
        "512",
        "--mask",
        "random",
        "--rate",
        "0.2",
        "--out",
        p(&out("b")),
    ]);
    ok(&[
        "gemm-check",
        "--m",
        "128",
        "--n",
        "128",
        "--k",
        "128",
        "--tile",
        "32",
        "--out",
        p(&out("c")),
    ]);
    assert!(csv_rows(&out("c").join("gemm_check.csv"))
        .iter()
        .all(|r| r[4] == "true"));
}

#[test]
fn gemm_check_reports_failure_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = fbq(&[
        "gemm-check",
        "--m",
        "64",
        "--n",
        "64",
        "--k",
        "64",
        "--tolerance",
        "0",
        "--mask",
        "absmax",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_passthrough_losses_agree() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "train",
        "--steps",
        "20",
        "--quant",
        "false",
        "--out",
        p(dir.path()),
    ]);
    for r in csv_rows(&dir.path().join("trace.csv")) {
        assert_eq!(r[1], r[2]);
    }
    assert_eq!(csv_rows(&dir.path().join("controller.csv")).len(), 0);
}

#[test]
fn train_controller_stays_in_range_after_warmup() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "train",
        "--steps",
        "300",
        "--track-gradients",
        "false",
        "--out",
        p(dir.path()),
    ]);
    let rows = csv_rows(&dir.path().join("controller.csv"));
    assert_eq!(rows.len(), 300 * 6);
    // Per-step rates are quantized to a few blocks and follow a
    // non-stationary stream, so each layer's post-warm-up mean is judged.
    let mut per_layer = std::collections::BTreeMap::<String, Vec<f64>>::new();
    for r in rows
        .iter()
        .filter(|r| r[0].parse::<usize>().unwrap() >= 100)
    {
        per_layer
            .entry(r[1].clone())
            .or_default()
            .push(r[3].parse().unwrap());
    }
    assert_eq!(per_layer.len(), 6);
    for (layer, rates) in per_layer {
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!(
            (0.1..=0.3).contains(&mean),
            "layer {layer}: mean rate {mean}"
        );
    }
}

#[test]
fn train_seed_changes_draws_but_not_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        let out = dir.path().join(seed);
        ok(&[
            "train",
            "--steps",
            "400",
            "--seed",
            seed,
            "--track-gradients",
            "false",
            "--out",
            p(&out),
        ]);
        let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
        (trace, metric(&out.join("summary.csv"), "final_loss_quant"))
    };
    let (ta, la) = run("1");
    let (tb, lb) = run("2");
    assert_ne!(ta, tb);
    assert!((la - lb).abs() / la < 0.02, "{la} vs {lb}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nrows = 8\ncols = 16 # wide\n").unwrap();
    let out = dir.path().join("o");
    ok(&["gen", "--config", p(&cfg), "--cols", "4", "--out", p(&out)]);
    let m = load_matrix(out.join("matrix.fmat")).unwrap();
    assert_eq!(m.shape(), (8, 4));
    let manifest = std::fs::read_to_string(out.join("manifest")).unwrap();
    assert!(manifest.starts_with("command = gen\n"));
    assert!(manifest.contains("cols = 4\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| fbq(args).status.code();
    assert_eq!(
        code(&["gen", "--rows", "0", "--out", p(dir.path())]),
        Some(2)
    );
    assert_eq!(
        code(&["gen", "--channel", "3", "--out", p(dir.path())]),
        Some(2)
    );
    assert_eq!(code(&["gen", "--rows", "4"]), Some(2));
    assert_eq!(
        code(&["train", "--fallback", "sometimes", "--out", p(dir.path())]),
        Some(2)
    );
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(
        code(&["gen", "--config", p(&bad), "--out", p(dir.path())]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "gen",
            "--config",
            "/nonexistent/cfg",
            "--out",
            p(dir.path())
        ]),
        Some(3)
    );
    let missing = dir.path().join("missing.fmat");
    assert_eq!(
        code(&[
            "quant-sweep",
            "--input",
            p(&missing),
            "--out",
            p(dir.path())
        ]),
        Some(3)
    );
    let junk = dir.path().join("junk.fmat");
    std::fs::write(&junk, b"not a matrix").unwrap();
    assert_eq!(
        code(&["quant-sweep", "--input", p(&junk), "--out", p(dir.path())]),
        Some(3)
    );
}
