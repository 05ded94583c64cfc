use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dqrp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dqrp")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small code database shared by the tests (m = 900).
fn codes() -> &'static Path {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli_codes_m900.bin");
        let out = run(&["codes", "generate", "--measurements", "900", "--seed", "5", "--out", s(&path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        path
    })
}

fn encode(dir: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out_path = dir.join(name);
    let mut args = vec![
        "encode",
        "--synthetic",
        "64x64",
        "--blocks",
        "32",
        "--measurements",
        "900",
        "--delta",
        "6",
        "--codes",
        s(codes()),
        "--out",
        s(&out_path),
    ];
    args.extend_from_slice(extra);
    (run(&args), out_path)
}

fn decode(container: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "decode",
        "--synthetic",
        "64x64",
        "--container",
        s(container),
        "--codes",
        s(codes()),
        "--out-dir",
        s(out_dir),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn code_generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for p in [&a, &b] {
        let out = run(&["codes", "generate", "--measurements", "200", "--rates", "0.2,0.5,0.8", "--seed", "3", "--out", s(p)]);
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let bad = run(&["codes", "generate", "--measurements", "200", "--rates", "0.5,0.2", "--out", s(&a)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn encode_decode_round_trip_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (out, container) = encode(dir.path(), "scene.dqrp", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("serialized bits"));
    let (_, again) = encode(dir.path(), "again.dqrp", &[]);
    assert_eq!(std::fs::read(&container).unwrap(), std::fs::read(&again).unwrap());

    let out_dir = dir.path().join("out");
    let out = decode(&container, &out_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..4 {
        assert!(out_dir.join(format!("band{i}.pgm")).exists());
    }
    assert!(out_dir.join("bands.bin").exists() && out_dir.join("bands.bin.json").exists());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let bands = report["bands"].as_array().unwrap();
    assert_eq!(bands.len(), 3);
    for b in bands {
        assert_eq!(b["failed_planes"], 0);
        assert!(b["psnr"].as_f64().unwrap() > 30.0);
        assert!(b["ber"].as_f64().unwrap() < 1e-3);
    }
}

#[test]
fn pgm_and_raw_inputs_encode_like_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (_, container) = encode(dir.path(), "scene.dqrp", &[]);
    // decoded bands serve as 8-bit inputs in both file formats
    let out_dir = dir.path().join("out");
    assert!(decode(&container, &out_dir, &[]).status.success());
    let band0 = out_dir.join("band0.pgm");
    let by_pgm = dir.path().join("pgm.dqrp");
    let bands: Vec<String> = (0..4).map(|i| s(&out_dir.join(format!("band{i}.pgm"))).to_string()).collect();
    let mut args = vec!["encode", "--blocks", "32", "--measurements", "900", "--delta", "6", "--codes", s(codes()), "--out", s(&by_pgm)];
    for b in &bands {
        args.extend(["--band", b.as_str()]);
    }
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let by_raw = dir.path().join("raw.dqrp");
    let raw = out_dir.join("bands.bin");
    let out = run(&["encode", "--raw", s(&raw), "--blocks", "32", "--measurements", "900", "--delta", "6", "--codes", s(codes()), "--out", s(&by_raw)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // both readers see the same 8-bit pixels
    assert_eq!(std::fs::read(&by_pgm).unwrap(), std::fs::read(&by_raw).unwrap());
    // decoding with the reference band alone still works
    let ref_only = dir.path().join("ref_only");
    let out = run(&[
        "decode", "--band", s(&band0), "--container", s(&by_pgm), "--codes", s(codes()), "--out-dir", s(&ref_only),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!ref_only.join("report.json").exists());
}

#[test]
fn epsilon_override_changes_the_plan() {
    let dir = tempfile::tempdir().unwrap();
    let (_, natural) = encode(dir.path(), "natural.dqrp", &[]);
    let (out, zero) = encode(dir.path(), "zero.dqrp", &["--epsilon", "0"]);
    assert!(out.status.success());
    let (_, large) = encode(dir.path(), "large.dqrp", &["--epsilon", "5000"]);
    let size = |p: &Path| std::fs::metadata(p).unwrap().len();
    assert!(size(&zero) < size(&natural) && size(&natural) < size(&large));
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    // every data row reports zero raw and zero syndrome planes
    for line in stdout.lines().skip(1).take(3) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!((cols[3], cols[4]), ("0", "0"), "{line}");
    }
}

#[test]
fn underestimated_error_exits_with_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let (out, container) = encode(dir.path(), "tight.dqrp", &["--epsilon", "40"]);
    assert!(out.status.success());
    let out = decode(&container, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out").join("band1.pgm").exists());
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (out, container) = encode(dir.path(), "scene.dqrp", &[]);
    assert!(out.status.success());
    let no_codes = run(&["decode", "--synthetic", "64x64", "--container", s(&container), "--out-dir", s(dir.path())]);
    assert_eq!(no_codes.status.code(), Some(2));
    assert_eq!(encode(dir.path(), "x", &["--measurements", "1000"]).0.status.code(), Some(2));
    assert_eq!(encode(dir.path(), "x", &["--delta", "1", "--delta", "2", "--delta", "3"]).0.status.code(), Some(2));
    assert_eq!(encode(dir.path(), "x", &["--blocks", "30"]).0.status.code(), Some(2));
    let bad_scene = run(&["encode", "--synthetic", "64by64", "--codes", s(codes()), "--out", s(&dir.path().join("y"))]);
    assert_eq!(bad_scene.status.code(), Some(2));
    assert_eq!(decode(&container, dir.path(), &["--lambda", "0"]).status.code(), Some(2));
    let other = run(&["decode", "--synthetic", "32x32", "--container", s(&container), "--codes", s(codes()), "--out-dir", s(dir.path())]);
    assert_eq!(other.status.code(), Some(2));
    let missing = run(&["decode", "--synthetic", "64x64", "--container", "/nonexistent", "--codes", s(codes()), "--out-dir", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn target_rate_tunes_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = encode(dir.path(), "tuned.dqrp", &["--target-bpp", "0.8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    for line in stdout.lines().skip(1).take(3) {
        let bpp: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!((bpp - 0.8).abs() <= 0.02 + 1e-4, "{line}");
    }
}

#[test]
fn analysis_tables() {
    let dir = tempfile::tempdir().unwrap();
    let pk = dir.path().join("pk.csv");
    assert!(run(&["analyze", "pk_curves", "--k-max", "4", "--points", "9", "--out", s(&pk)]).status.success());
    let (header, rows) = read_csv(&pk);
    assert_eq!(header, ["scale", "p1", "p2", "p3", "p4"]);
    assert_eq!(rows.len(), 9);
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0]);
        assert!((1..5).all(|k| w[1][k] >= w[0][k]));
    }

    let lk = dir.path().join("lk.csv");
    assert!(run(&["analyze", "lk-curves", "--k", "3", "--scale", "1", "--points", "5", "--out", s(&lk)]).status.success());
    let (header, rows) = read_csv(&lk);
    assert_eq!(header, ["c", "L3_s1"]);
    assert_eq!(rows.first().unwrap()[0], 0.0);
    assert_eq!(rows.last().unwrap(), &vec![4.0, 0.5]);

    let ptc = dir.path().join("ptc.csv");
    assert!(run(&["analyze", "planes_to_code", "--points", "6", "--out", s(&ptc)]).status.success());
    let (header, rows) = read_csv(&ptc);
    assert_eq!(header.len(), 4);
    assert_eq!(rows.len(), 6);

    let mc = dir.path().join("mc.csv");
    let out = run(&["analyze", "montecarlo", "--n", "64", "--m", "64", "--k-max", "2", "--scale", "1", "--trials", "50", "--out", s(&mc)]);
    assert!(out.status.success());
    let (header, rows) = read_csv(&mc);
    assert_eq!(header, ["k", "scale", "theory", "empirical", "bits"]);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| (r[2] - r[3]).abs() < 0.05 && r[4] == 3200.0));

    let buckets = dir.path().join("buckets.csv");
    let out = run(&[
        "analyze", "montecarlo", "--n", "64", "--m", "64", "--scale", "1", "--trials", "20", "--likelihood-k", "2", "--buckets", "4",
        "--out", s(&buckets),
    ]);
    assert!(out.status.success());
    assert_eq!(read_csv(&buckets).1.len(), 4);
    let bad = run(&["analyze", "montecarlo", "--n", "64", "--m", "65", "--out", s(&mc)]);
    assert_eq!(bad.status.code(), Some(2));
}
