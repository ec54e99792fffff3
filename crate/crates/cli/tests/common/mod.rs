#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shapemiss::occlusion::RegionMask;
use shapemiss::synth::{generate_default, oracle_cause, BeamOutcome, Scene, SceneConfig};
use shapemiss::{Point, SphericalGrid, VoxelGrid};

pub const GOLDEN_SCENES: u64 = 3;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_frames() -> PathBuf {
    golden_dir().join("frames")
}

pub fn golden_ids() -> Vec<String> {
    (0..GOLDEN_SCENES).map(|n| format!("{n:06}")).collect()
}

pub fn golden_scene(n: u64) -> Scene {
    generate_default(&SceneConfig { seed: n, ..Default::default() }, &SphericalGrid::kitti()).unwrap()
}

pub fn shapemiss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapemiss")).args(args).output().expect("spawn shapemiss")
}

pub fn shapemiss_ok(args: &[&str]) -> Output {
    let out = shapemiss(args);
    assert!(out.status.success(), "shapemiss {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn as_stored(q: &Point) -> Point {
    Point::new(q.x as f32 as f64, q.y as f32 as f64, q.z as f32 as f64, q.intensity as f32 as f64)
}

/// Region mask written straight from the simulator's beam log: the hit voxel
/// is the first return, a dropped beam is a signal miss over the whole
/// column, and causes come from the ray-casting oracle. Points are rounded to
/// the stored `f32` precision first.
pub fn oracle_mask(scene: &Scene, grid: &SphericalGrid) -> RegionMask {
    let [n_r, _, _] = grid.dims();
    let cols = grid.column_count();
    let mut first_return = vec![None; cols];
    let mut signal_miss = vec![None; cols];
    let mut occupied = Vec::new();
    for b in &scene.log.beams {
        let c = grid.column_id(b.j, b.k);
        match b.outcome {
            BeamOutcome::Hit { point, .. } => {
                if let Some(v) = grid.locate(&as_stored(&point)) {
                    assert_eq!((v.j, v.k), (b.j, b.k), "stored point left its beam column");
                    first_return[c] = Some(v.i);
                    occupied.push(v);
                }
            }
            BeamOutcome::Dropped { .. } => signal_miss[c] = Some((0, n_r - 1)),
            BeamOutcome::NoTarget => {}
        }
    }
    occupied.sort();
    occupied.dedup();
    let causes = oracle_cause(&scene.log, &scene.boxes(), grid);
    RegionMask { grid: grid.clone(), first_return, signal_miss, occupied, causes }
}

/// All files below `root`, relative path to bytes.
pub fn tree(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for e in entries {
            if e.is_dir() {
                walk(root, &e, out);
            } else {
                let rel = e.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&e).unwrap());
            }
        }
    }
    let mut out = Default::default();
    walk(root, root, &mut out);
    out
}
