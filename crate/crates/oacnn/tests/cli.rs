use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use oacnn::ply::{write_ply_file, PlyCloud, PlyWriteOptions};
use oacnn::scene::read_scene_file;
use oacnn::text::read_points_file;
use oacnn_core::geometry::voxelize;

fn oacnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oacnn")).args(args).env_remove("OA_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// A small checkpoint trained once and shared by the tests that need one.
fn trained() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let o = oacnn(&[
            "train", "--data", "synth:0..3", "--holdout", "1", "--epochs", "1", "--batch", "2",
            "--max-points", "2000", "--voxel-size", "0.08", "--seed", "1", "--quiet", "--out", s(&dir),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        dir
    })
}

fn write_text(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn voxelize_single_point_with_default_size() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_text(dir.path(), "one.txt", "0.05 -0.01 0.03 255 0 128 2\n");
    let out = dir.path().join("one.oavx");
    let o = oacnn(&["voxelize", "--input", s(&input), "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scene = read_scene_file(&out).unwrap();
    assert_eq!(scene.tensor.len(), 1);
    assert_eq!(scene.voxel_size, 0.02);
    assert_eq!(scene.tensor.coords()[0].xyz(), [2, -1, 1]);
    assert_eq!(scene.labels, Some(vec![2]));
    let m = manifest(&dir.path().join("one.oavx.manifest.json"));
    assert_eq!(m["command"], "voxelize");
}

#[test]
fn voxelize_file_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for i in 0..200 {
        let t = i as f64 * 0.0137;
        body += &format!("{} {} {} {} {} {} {}\n", t.sin(), t.cos(), t * 0.1, i % 256, (3 * i) % 256, 7, i % 3);
    }
    let input = write_text(dir.path(), "pts.xyz", &body);
    let out = dir.path().join("pts.oavx");
    let o = oacnn(&["voxelize", "--input", s(&input), "--voxel-size", "0.1", "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let want = voxelize(&read_points_file(&input).unwrap(), 0.1).unwrap();
    assert_eq!(read_scene_file(&out).unwrap(), want);
}

#[test]
fn config_errors_exit_2_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    for bad in [&["--epochs", "0"][..], &["--holdout", "64"], &["--lr", "-1"], &["--grid-scale", "0"], &["--voxel-size", "0"]] {
        let mut args = vec!["train", "--out", s(&out)];
        args.extend_from_slice(bad);
        let started = std::time::Instant::now();
        let o = oacnn(&args);
        assert_eq!(code(&o), 2, "{bad:?}: {}", stderr(&o));
        assert!(started.elapsed().as_secs_f64() < 5.0, "{bad:?} took {:?}", started.elapsed());
        assert!(!out.join("checkpoint.oacn").exists());
    }
    let o = oacnn(&["--threads", "0", "bench", "--voxels", "10"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn infer_writes_one_label_per_voxel() {
    let ckpt = trained().join("checkpoint.oacn");
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for i in 0..300 {
        let t = i as f64 * 0.05;
        body += &format!("{} {} {} 200 30 {} {}\n", t.cos() * 2.0, t.sin() * 2.0, (i % 7) as f64 * 0.1, i % 256, i % 4);
    }
    let input = write_text(dir.path(), "scan.txt", &body);
    let labels = dir.path().join("labels.txt");
    let ply = dir.path().join("pred.ply");
    let o = oacnn(&["infer", "--ckpt", s(&ckpt), "--input", s(&input), "--output-labels", s(&labels), "--output-ply", s(&ply)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let voxels = voxelize(&read_points_file(&input).unwrap(), 0.08).unwrap().tensor.len();
    let lines: Vec<u16> = std::fs::read_to_string(&labels).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(lines.len(), voxels);
    assert!(lines.iter().all(|&l| l < 4));
    let cloud = oacnn::ply::read_ply_file(&ply).unwrap();
    assert_eq!(cloud.labels.unwrap(), lines);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mIoU"));
    assert_eq!(manifest(&dir.path().join("labels.txt.manifest.json"))["command"], "infer");
}

#[test]
fn channel_mismatch_is_compat_error() {
    let ckpt = trained().join("checkpoint.oacn");
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bare.ply");
    let cloud = PlyCloud { positions: vec![[0.0, 0.0, 0.0], [0.5, 0.1, 0.2]], colors: None, labels: None };
    write_ply_file(&input, &cloud, PlyWriteOptions::default()).unwrap();
    let o = oacnn(&["infer", "--ckpt", s(&ckpt), "--input", s(&input), "--output-labels", s(&dir.path().join("l.txt"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn io_errors_exit_3_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.txt");
    let o = oacnn(&["voxelize", "--input", s(&missing), "--output", s(&dir.path().join("x.oavx"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("absent.txt"));

    let bad = write_text(dir.path(), "bad.txt", "0 0 0 1 1 1\n0 0 nope 1 1 1\n");
    let o = oacnn(&["voxelize", "--input", s(&bad), "--output", s(&dir.path().join("y.oavx"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let junk = write_text(dir.path(), "junk.oacn", "not a checkpoint");
    let o = oacnn(&["infer", "--ckpt", s(&junk), "--input", s(&bad), "--output-labels", s(&dir.path().join("l.txt"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.json");
    let o = oacnn(&["gradcheck", "--scope", "aggregator", "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = manifest(&report);
    assert!(r.is_array() || r.is_object());
    assert_eq!(manifest(&dir.path().join("grad.json.manifest.json"))["command"], "gradcheck");
    let o = oacnn(&["gradcheck", "--scope", "aggregator", "--corrupt-gradient"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn rf_viz_stage_bounds() {
    let ckpt = trained().join("checkpoint.oacn");
    let dir = tempfile::tempdir().unwrap();
    let input = write_text(dir.path(), "p.txt", "0 0 0 10 20 30\n0.3 0.1 0 10 20 30\n0.1 0.5 0.2 1 2 3\n");
    let out = dir.path().join("rf.ply");
    let o = oacnn(&["rf-viz", "--ckpt", s(&ckpt), "--input", s(&input), "--stage", "9", "--output-ply", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = oacnn(&["rf-viz", "--ckpt", s(&ckpt), "--input", s(&input), "--stage", "1", "--output-ply", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(oacnn::ply::read_ply_file(&out).unwrap().colors.is_some());
}

#[test]
fn seed_comes_from_environment_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_oacnn"));
        c.args(["bench", "--voxels", "500", "--repeat", "1", "--output", s(&out)]).args(extra).env_remove("OA_SEED");
        if let Some(v) = env {
            c.env("OA_SEED", v);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        manifest(&dir.path().join("bench.json.manifest.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(run(Some("77"), &[]), 77);
    assert_eq!(run(Some("77"), &["--seed", "5"]), 5);
    let report = manifest(&out);
    assert_eq!(report["voxels"], 500);
}

#[test]
fn train_writes_outputs_and_manifest() {
    let dir = trained();
    let m = manifest(&dir.join("manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 1);
    let metrics = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    let epoch: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(epoch["eval_miou"].as_f64().is_some());
}
