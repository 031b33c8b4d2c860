//! Exit-code and interface contract tests for the `hcv` binary.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hcv"))
}

fn tmp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hcv-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn no_arguments_is_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = bin().arg("transmogrify").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_output_flag_is_usage_error() {
    let out = bin().args(["estimate", "a.pgm", "b.pgm"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_flo_magic_is_format_error() {
    let dir = tmp_dir("badflo");
    let bad = dir.join("bad.flo");
    std::fs::write(&bad, b"nope definitely not a flow file").unwrap();
    let out = bin().args(["eval"]).arg(&bad).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("magic"), "stderr: {err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn truncated_pgm_is_format_error() {
    let dir = tmp_dir("badpgm");
    let bad = dir.join("bad.pgm");
    std::fs::write(&bad, b"P5\n64 64\n255\nshort").unwrap();
    let out = bin()
        .args(["estimate"])
        .arg(&bad)
        .arg(&bad)
        .args(["-o"])
        .arg(dir.join("out.flo"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mismatched_eval_grids_exit_three() {
    let dir = tmp_dir("evalmismatch");
    let small = hcv_core::FlowField::zeros(4, 4, 1);
    let big = hcv_core::FlowField::zeros(8, 8, 1);
    let a = dir.join("a.flo");
    let b = dir.join("b.flo");
    hcv_core::write_flo(&a, &small).unwrap();
    hcv_core::write_flo(&b, &big).unwrap();
    let out = bin().args(["eval"]).arg(&a).arg(&b).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_respects_sentinel_mask() {
    let dir = tmp_dir("evalmask");
    let mut gt = hcv_core::FlowField::zeros(16, 16, 1);
    let mut mask = hcv_core::BitMask::new_true(256);
    mask.set(0, false);
    gt.valid = Some(mask);
    let mut pred = hcv_core::FlowField::zeros(16, 16, 1);
    pred.u[0] = 1000.0; // huge error on the masked-out pixel only
    let g = dir.join("gt.flo");
    let p = dir.join("pred.flo");
    hcv_core::write_flo(&g, &gt).unwrap();
    hcv_core::write_flo(&p, &pred).unwrap();

    let with_mask = bin().args(["eval"]).arg(&p).arg(&g).arg("--mask").output().unwrap();
    assert!(with_mask.status.success());
    let stdout = String::from_utf8(with_mask.stdout).unwrap();
    assert!(stdout.contains("epe_mean=0.000000"), "{stdout}");
    assert!(stdout.contains("pixel_count=255"), "{stdout}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tmp_dir("cfg");
    let cfg_path = dir.join("run.conf");
    std::fs::write(&cfg_path, "iters = 2\nl_r = 2\ntemperature = 0.01\n").unwrap();
    // synth a tiny pair
    let status = bin()
        .args(["synth", "--shift", "2", "1", "--size", "96x96", "--seed", "3", "-o"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("p.flo"))
        .args(["--config"])
        .arg(&cfg_path)
        .args(["--iters", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    // flag wins over the file
    assert!(stdout.contains("iterations=5"), "{stdout}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_mem_reports_budget_exceeded_under_cap() {
    let out = bin()
        .args(["bench-mem", "--size", "1920x1080", "--measure", "--cap", "1048576"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("measured_peak.allpairs=budget-exceeded"),
        "{stdout}"
    );
    std::fs::remove_dir_all(std::env::temp_dir().join("nonexistent")).ok();
}

#[test]
fn bench_mem_16x16_hand_counts() {
    let out = bin()
        .args([
            "bench-mem", "--size", "16x16", "--d-h", "1", "--d-v", "1", "--k", "1", "--l-r", "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    // top-k scores+indices on both axes: 2*(1*1*2*1) + 2*(1*1*2*1) = 8
    assert!(stdout.contains("buffer.topk_h.scores: elements=2"), "{stdout}");
    assert!(stdout.contains("buffer.local.scores: elements=36"), "{stdout}");
}

#[test]
fn synth_rejects_oversized_shift() {
    let dir = tmp_dir("badshift");
    let out = bin()
        .args(["synth", "--shift", "96", "0", "--size", "96x96", "--seed", "1", "-o"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn estimate_with_hcvw_weights_file_runs() {
    let dir = tmp_dir("weights");
    let status = bin()
        .args(["synth", "--shift", "0", "0", "--size", "128x128", "--seed", "9", "-o"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    // write a default stack for K=8 as an HCVW file and run with it
    let weights = hcv_core::AggWeights::default_stack(8);
    let wpath = dir.join("stack.hcvw");
    weights.save_hcvw(&wpath).unwrap();
    let out = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("p.flo"))
        .args(["--weights"])
        .arg(&wpath)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn synth_estimate_eval_workflow_recovers_the_shift() {
    let dir = tmp_dir("workflow");
    let status = bin()
        .args(["synth", "--shift", "3", "2", "--size", "256x256", "--seed", "5", "-o"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("pred.flo"))
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["eval"])
        .arg(dir.join("pred.flo"))
        .arg(dir.join("gt.flo"))
        .arg("--mask")
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let median: f64 = stdout
        .lines()
        .find(|l| l.starts_with("epe_median="))
        .and_then(|l| l.trim_start_matches("epe_median=").parse().ok())
        .unwrap();
    assert!(median < 0.5, "median {median} px\n{stdout}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn hcv_threads_env_var_is_honored() {
    let dir = tmp_dir("envthreads");
    let status = bin()
        .args(["synth", "--shift", "1", "1", "--size", "96x96", "--seed", "2", "-o"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("a.flo"))
        .env("HCV_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("b.flo"))
        .output()
        .unwrap();
    assert!(b.status.success());
    assert_eq!(
        std::fs::read(dir.join("a.flo")).unwrap(),
        std::fs::read(dir.join("b.flo")).unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn precomputed_local_mode_flag_runs() {
    let dir = tmp_dir("localmode");
    let status = bin()
        .args(["synth", "--shift", "2", "2", "--size", "128x128", "--seed", "4", "-o"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("p.flo"))
        .args(["--local", "precomputed"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // bogus mode is a usage error
    let out = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("q.flo"))
        .args(["--local", "telepathic"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn estimate_rejects_malformed_weights_file() {
    let dir = tmp_dir("badweights");
    let status = bin()
        .args(["synth", "--shift", "0", "0", "--size", "128x128", "--seed", "6", "-o"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    // implausible weight extents must be rejected at load, not allocated
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"HCVW");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.push(0); // conv3d
    bytes.push(0); // no activation
    for _ in 0..6 {
        bytes.extend_from_slice(&1u32.to_le_bytes());
    }
    for _ in 0..5 {
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
    }
    let wpath = dir.join("evil.hcvw");
    std::fs::write(&wpath, &bytes).unwrap();
    let out = bin()
        .args(["estimate"])
        .arg(dir.join("frame1.pgm"))
        .arg(dir.join("frame2.pgm"))
        .args(["-o"])
        .arg(dir.join("p.flo"))
        .args(["--weights"])
        .arg(&wpath)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("weight extents"), "stderr: {err}");
    std::fs::remove_dir_all(&dir).ok();
}
