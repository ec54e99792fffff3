mod common;

use std::fs;

use common::*;
use serde_json::Value;

fn summary(dir: &std::path::Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn config_errors_name_the_field_and_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let input = golden_frames();
    let out = shapemiss(&["regions", "--input", p(&input), "--output", p(tmp.path()), "--set", "shape_loss.delta=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape_loss.delta"));

    let out = shapemiss(&["regions", "--input", p(&input), "--output", p(tmp.path()), "--set", "roi.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[spherical_grid]\nvoxel = [0.0, 1.0, 1.0]\n").unwrap();
    let out = shapemiss(&["regions", "--input", p(&input), "--output", p(tmp.path()), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spherical_grid"));

    let out = shapemiss(&["regions", "--input", p(&input), "--output", p(tmp.path()), "--workers", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_frame_fails_unless_keep_going() {
    let tmp = tempfile::tempdir().unwrap();
    let input = golden_frames();
    let a = tmp.path().join("a");
    let out = shapemiss(&["voxelize", "--input", p(&input), "--output", p(&a), "--frames", "000000,999999"]);
    assert_eq!(out.status.code(), Some(1));
    let s = summary(&a);
    assert_eq!(s["failed"], 1);
    assert_eq!(s["frames"][0]["ok"], true);
    assert_eq!(s["frames"][1]["ok"], false);
    assert!(a.join("voxels/000000.json").exists());

    let b = tmp.path().join("b");
    let list = tmp.path().join("ids.txt");
    fs::write(&list, "000001\n999999\n").unwrap();
    let at = format!("@{}", p(&list));
    let out = shapemiss(&["voxelize", "--input", p(&input), "--output", p(&b), "--frames", &at, "--keep-going"]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&b);
    assert_eq!(s["failed"], 1);
    assert_eq!(s["frames"][0]["id"], "000001");
    assert!(s["frames"][1]["error"].is_string());
}

#[test]
fn evaluating_targets_against_themselves_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let input = golden_frames();
    let t = tmp.path().join("t");
    let e = tmp.path().join("e");
    shapemiss_ok(&["targets", "--input", p(&input), "--output", p(&t)]);
    shapemiss_ok(&["evaluate", "--input", p(&input), "--output", p(&e), "--pred", p(&t.join("targets"))]);
    let report: Value = serde_json::from_slice(&fs::read(e.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"], GOLDEN_SCENES);
    let rows = report["rows"].as_array().unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        for k in ["precision", "recall", "f1", "accuracy"] {
            assert_eq!(r[k].as_f64(), Some(1.0), "{k} at {}", r["threshold"]);
        }
    }
    assert!(fs::read_to_string(e.join("report.txt")).unwrap().starts_with("frames: 3"));
}

#[test]
fn no_recovery_leaves_frames_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let input = golden_frames();
    shapemiss_ok(&["recover", "--input", p(&input), "--output", p(tmp.path()), "--scenario", "NR"]);
    let mut out = tree(tmp.path());
    out.retain(|k, _| !k.starts_with("added") && k != "summary.json");
    assert_eq!(out, tree(&input));
}

#[test]
fn recovery_adds_points_and_keeps_the_original_prefix() {
    let tmp = tempfile::tempdir().unwrap();
    let input = golden_frames();
    shapemiss_ok(&["recover", "--input", p(&input), "--output", p(tmp.path()), "--scenario", "EO+SM+SO"]);
    let s = summary(tmp.path());
    let mut total = 0;
    for id in golden_ids() {
        let before = fs::read(input.join(format!("velodyne/{id}.bin"))).unwrap();
        let after = fs::read(tmp.path().join(format!("velodyne/{id}.bin"))).unwrap();
        assert!(after.starts_with(&before));
        total += (after.len() - before.len()) / 16;
    }
    assert!(total > 0);
    assert_eq!(s["totals"]["added_points"].as_u64(), Some(total as u64));
}

#[test]
fn strict_paper_switches_off_extensions() {
    let tmp = tempfile::tempdir().unwrap();
    shapemiss_ok(&["assemble", "--input", p(&golden_frames()), "--output", p(tmp.path()), "--strict-paper"]);
    let s = summary(tmp.path());
    assert_eq!(s["config"]["assembly"]["strict_fill"], true);
    assert_eq!(s["config"]["anchors"]["fallback"], false);
    for id in golden_ids() {
        assert!(tmp.path().join(format!("shapes/{id}.json")).exists());
    }
}

#[test]
fn export_writes_viewable_ply() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t");
    let x = tmp.path().join("x");
    shapemiss_ok(&["targets", "--input", p(&golden_frames()), "--output", p(&t), "--frames", "000000"]);
    shapemiss_ok(&[
        "export",
        "--input",
        p(&golden_frames()),
        "--output",
        p(&x),
        "--frames",
        "000000",
        "--pred",
        p(&t.join("targets")),
    ]);
    let names: Vec<String> = tree(&x.join("ply")).into_keys().collect();
    for want in ["000000.cloud.ply", "000000.causes.ply", "000000.shapes.ply", "000000.pred.ply"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    let cloud = shapemiss::dataio::read_ply(&x.join("ply/000000.cloud.ply")).unwrap();
    let bin = shapemiss::dataio::read_points(&golden_frames().join("velodyne/000000.bin")).unwrap();
    assert_eq!(cloud.0.len(), bin.len());
}
