use std::collections::BTreeMap;

use super::scene::{BeamLog, BeamOutcome, SurfaceId};
use crate::boxes::LabeledBox3D;
use crate::geom::{SphericalGrid, VoxelGrid, VoxelIndex};
use crate::occlusion::{Cause, CauseLabel};

fn unit_ray(phi: f64, theta: f64) -> [f64; 3] {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    [ct * cp, ct * sp, st]
}

fn inside(b: &LabeledBox3D, p: [f64; 3]) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let d = [p[0] - b.center[0], p[1] - b.center[1], p[2] - b.center[2]];
    let local = [c * d[0] + s * d[1], c * d[1] - s * d[0], d[2]];
    (0..3).all(|a| 2.0 * local[a].abs() <= b.size[a])
}

/// Per-voxel causes read straight off the beam log: a dropped beam makes its
/// in-box voxels signal miss; behind a return they are self- or externally
/// occluded depending on what was hit; in front of it they are free.
///
/// Boxes are visited in order and the first one claims a voxel, like the
/// region analysis. Object ids in the log must equal box indices.
pub fn oracle_cause(log: &BeamLog, boxes: &[LabeledBox3D], grid: &SphericalGrid) -> BTreeMap<VoxelIndex, CauseLabel> {
    let [ra, pa, ta] = *grid.axes();
    let mut out = BTreeMap::new();
    for (bi, b) in boxes.iter().enumerate() {
        let radius = 0.5 * (b.size[0].powi(2) + b.size[1].powi(2) + b.size[2].powi(2)).sqrt();
        for beam in &log.beams {
            let dir = unit_ray(pa.lo + (beam.j as f64 + 0.5) * pa.size, ta.lo + (beam.k as f64 + 0.5) * ta.size);
            let along = dir[0] * b.center[0] + dir[1] * b.center[1] + dir[2] * b.center[2];
            let c2 = b.center.iter().map(|v| v * v).sum::<f64>();
            if along < -radius || c2 - along * along > radius * radius * 1.0001 {
                continue;
            }
            let hit_bin = match beam.outcome {
                BeamOutcome::Hit { point, surface } => {
                    let r = point.norm();
                    let i = ((r - ra.lo) / ra.size).floor() as i64;
                    Some((i.clamp(0, ra.bins as i64 - 1) as u32, surface))
                }
                _ => None,
            };
            for i in 0..ra.bins {
                let r = ra.lo + (i as f64 + 0.5) * ra.size;
                let p = [r * dir[0], r * dir[1], r * dir[2]];
                if !inside(b, p) {
                    continue;
                }
                let idx = VoxelIndex::new(i, beam.j, beam.k);
                if out.contains_key(&idx) {
                    continue;
                }
                let cause = match (&beam.outcome, hit_bin) {
                    (BeamOutcome::Dropped { .. }, _) => Cause::SignalMiss,
                    (BeamOutcome::Hit { .. }, Some((h, surface))) => {
                        if i < h {
                            Cause::None
                        } else if i == h {
                            Cause::Observed
                        } else if surface == SurfaceId::Object(bi as u32) {
                            Cause::SelfOcclusion
                        } else {
                            Cause::ExternalOcclusion
                        }
                    }
                    _ => Cause::None,
                };
                out.insert(idx, CauseLabel { box_id: bi as u32, cause });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::ObjectClass;
    use crate::synth::{default_prototypes, render_layout, Placement, SceneLayout};

    #[test]
    fn occluder_shadow_is_external() {
        let g = SphericalGrid::kitti();
        let car = Placement { prototype: 0, center: [20.0, 0.0, -0.93], size: [4.2, 1.8, 1.5], yaw: 0.0 };
        let wall = LabeledBox3D::new([10.0, 0.0, -1.0], [0.3, 1.0, 1.46], 0.0, ObjectClass::Other);
        let layout = SceneLayout { objects: vec![car], occluders: vec![wall], ground_z: Some(-1.73), drops: vec![] };
        let s = render_layout(&layout, &g, &default_prototypes(), 0.05).unwrap();
        let labels = oracle_cause(&s.log, &s.boxes(), &g);
        // straight ahead through the wall, slightly below the sensor
        let j = g.phi_axis().bin_of(0.0).unwrap();
        let k = g.theta_axis().bin_of(-0.03).unwrap();
        let col: Vec<_> = labels.iter().filter(|(v, _)| v.j == j && v.k == k).collect();
        assert!(!col.is_empty());
        assert!(col.iter().all(|(_, l)| l.cause == Cause::ExternalOcclusion));
    }

    #[test]
    fn dropped_beam_is_signal_miss() {
        let g = SphericalGrid::kitti();
        let car = Placement { prototype: 0, center: [15.0, 0.0, -0.93], size: [4.2, 1.8, 1.5], yaw: 0.3 };
        let j = g.phi_axis().bin_of(0.0).unwrap();
        let k = g.theta_axis().bin_of(-0.04).unwrap();
        let layout =
            SceneLayout { objects: vec![car], drops: vec![(j, k)], ground_z: Some(-1.73), ..Default::default() };
        let s = render_layout(&layout, &g, &default_prototypes(), 0.05).unwrap();
        let labels = oracle_cause(&s.log, &s.boxes(), &g);
        let col: Vec<_> = labels.iter().filter(|(v, _)| v.j == j && v.k == k).collect();
        assert!(!col.is_empty());
        assert!(col.iter().all(|(_, l)| l.cause == Cause::SignalMiss));
        // a neighbouring column: free, observed, then self-occluded
        let next: Vec<Cause> = labels.iter().filter(|(v, _)| v.j == j + 1 && v.k == k).map(|(_, l)| l.cause).collect();
        let first_obs = next.iter().position(|c| *c == Cause::Observed).unwrap();
        assert!(next[..first_obs].iter().all(|c| *c == Cause::None));
        assert!(next[first_obs + 1..].iter().all(|c| *c == Cause::SelfOcclusion));
    }
}
