use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn gmmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmmc"))
        .current_dir(root())
        .env_remove("GMMC_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn encode_matches_golden_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.gmc");
    let report = dir.path().join("a.json");
    let o = gmmc(&["encode", "--in", "data/sample.png", "--out", s(&out), "--report", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = std::fs::read(root().join("data/sample.gmc")).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), golden);

    let r = json(&report);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["container_bytes"], 1438);
    assert_eq!(r["bpp"].as_f64().unwrap(), 8.0 * 1438.0 / 45_000.0);
    assert_eq!(r["latent_checksum"], "1b3dd17f");
    assert_eq!(r["hyper_checksum"], "7e50527b");
    for part in ["main", "hyper"] {
        let p = &r[part];
        assert!(p["actual_bits"].as_f64().unwrap() <= p["quantized_bits"].as_f64().unwrap() + 64.0);
    }

    let again = dir.path().join("b.gmc");
    let o = gmmc(&["--threads", "1", "encode", "--in", "data/sample.png", "--out", s(&again)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&again).unwrap(), golden);
}

#[test]
fn decode_report_agrees_with_encode() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("r.png");
    let report = dir.path().join("d.json");
    let o = gmmc(&["decode", "--in", "data/sample.gmc", "--out", s(&png), "--report", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&report);
    assert_eq!((r["width"].as_u64(), r["height"].as_u64()), (Some(250), Some(180)));
    assert_eq!(r["latent_checksum"], "1b3dd17f");
    assert_eq!(r["hyper_checksum"], "7e50527b");

    let o = gmmc(&["eval", "--orig", "data/sample.png", "--recon", s(&png), "--lambda", "0.01", "--bits", "11504"]);
    assert!(o.status.success());
    let e: Value = serde_json::from_slice(&o.stdout).unwrap();
    let score = e["ms_ssim"].as_f64().unwrap();
    assert!(score > 0.8 && score < 1.0, "{score}");
    assert!((e["bpp"].as_f64().unwrap() - 11504.0 / 45_000.0).abs() < 1e-15);
    assert!(e["rd_loss"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_identity_is_one() {
    let o = gmmc(&["eval", "--orig", "data/sample.png", "--recon", "data/sample.png"]);
    assert!(o.status.success());
    let e: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(e["ms_ssim"].as_f64(), Some(1.0));
    assert_eq!(e["distortion"].as_f64(), Some(0.0));
    assert!(e.get("rd_loss").is_none());
}

#[test]
fn corrupted_stream_exits_4_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = std::fs::read(root().join("data/sample.gmc")).unwrap();
    bytes[700] ^= 0x01;
    let bad = dir.path().join("bad.gmc");
    std::fs::write(&bad, &bytes).unwrap();
    let png = dir.path().join("x.png");
    let o = gmmc(&["decode", "--in", s(&bad), "--out", s(&png)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!png.exists());

    std::fs::write(&bad, &bytes[..20]).unwrap();
    assert_eq!(gmmc(&["decode", "--in", s(&bad), "--out", s(&png)]).status.code(), Some(4));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(gmmc(&["decode", "--in", "no/such.gmc", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(gmmc(&["encode", "--in", "no/such.png", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(
        gmmc(&["decode", "--model", "no/such.gmmp", "--in", "data/sample.gmc", "--out", s(&out)]).status.code(),
        Some(2)
    );
    assert_eq!(
        gmmc(&["decode", "--k", "2", "--in", "data/sample.gmc", "--out", s(&out)]).status.code(),
        Some(3)
    );
    assert_eq!(gmmc(&["encode", "--bogus"]).status.code(), Some(1));
    assert_eq!(gmmc(&["--help"]).status.code(), Some(0));
    assert_eq!(gmmc(&["eval", "--orig", "a", "--recon", "b", "--lambda", "1"]).status.code(), Some(1));
    assert_eq!(
        gmmc(&["encode", "--in", "data/sample.png", "--out", s(&out), "--max-pixels", "100"]).status.code(),
        Some(1)
    );
}

#[test]
fn allocate_respects_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("alloc.csv");
    let o = gmmc(&["allocate", "--table", "data/table1.csv", "--budget-bpp", "0.15", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("image_id")).count();
    assert_eq!(rows, 102);
    let summary = text.lines().find(|l| l.starts_with('#')).unwrap();
    let field = |name: &str| -> String {
        summary.split_whitespace().find_map(|t| t.strip_prefix(&format!("{name}="))).unwrap().to_string()
    };
    assert!(field("bpp").parse::<f64>().unwrap() <= 0.15);
    assert_eq!(field("feasible"), "true");
    let mean: f64 = field("mean_ms_ssim").parse().unwrap();
    // better than the best uniform choice that fits (λ = 4.5 at 0.1254 bpp)
    assert!(mean > 0.9716, "{mean}");

    // a budget that only fits the cheapest row reproduces it exactly
    let o = gmmc(&["allocate", "--table", "data/table1.csv", "--budget-bpp", "0.1254"]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("mean_ms_ssim=0.971600 "), "{stdout}");
}

#[test]
fn pmf_dump_sums_to_one() {
    let o = gmmc(&["pmf-dump", "--k", "2", "--weights", "0.3,0.7", "--means", "-250,-256", "--scales", "3,2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(i32, f64)> = text
        .lines()
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 512);
    assert_eq!((rows[0].0, rows[511].0), (-255, 256));
    assert!((rows.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((rows[0].1 - 0.561_403_013_716_849_6).abs() < 1e-12);

    let o = gmmc(&["pmf-dump", "--k", "2", "--weights", "1", "--means", "0", "--scales", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    let o = Command::new(env!("CARGO_BIN_EXE_gmmc"))
        .current_dir(root())
        .env("GMMC_THREADS", "1")
        .args(["decode", "--in", "data/sample.gmc", "--out", s(&a)])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(gmmc(&["--threads", "4", "decode", "--in", "data/sample.gmc", "--out", s(&b)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn gen_model_reproduces_shipped_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.gmmp");
    assert!(gmmc(&["gen-model", "--out", s(&out)]).status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(root().join("models/toy-k3-n128.gmmp")).unwrap());
}
