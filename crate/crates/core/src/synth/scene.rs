use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prototype::{default_prototypes, ScaledShape, ScenePrototype};
use crate::boxes::{bev_intersection_area, LabeledBox3D, ObjectClass};
use crate::geom::{Point, PointCloud, SphericalGrid, VoxelGrid, VoxelIndex};

/// Objects float this far above the ground so ground returns stay outside
/// their boxes.
pub const GROUND_CLEARANCE: f64 = 0.05;
/// Extra size per side of a labeled box around its object.
pub const BOX_MARGIN: f64 = 0.02;

pub const OBJECT_INTENSITY: f64 = 0.6;
pub const OCCLUDER_INTENSITY: f64 = 0.4;
pub const GROUND_INTENSITY: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("objects {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("unknown prototype index {0}")]
    UnknownPrototype(usize),
    #[error("no prototype of class {0}")]
    NoPrototype(ObjectClass),
    #[error("could not place object {0} after {1} attempts")]
    Placement(usize, usize),
    #[error("invalid scene config: {0}")]
    Config(String),
}

/// What a beam hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SurfaceId {
    /// Index into the scene's labeled objects (and boxes).
    Object(u32),
    Occluder(u32),
    Ground,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BeamOutcome {
    Hit {
        point: Point,
        surface: SurfaceId,
    },
    /// The first surface was reached but returned nothing.
    Dropped {
        surface: SurfaceId,
        range: f64,
    },
    NoTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub j: u32,
    pub k: u32,
    pub outcome: BeamOutcome,
    /// Further surfaces along the ray inside the range window, nearest first.
    pub farther: Vec<(SurfaceId, f64)>,
}

/// One beam per `(phi, theta)` bin, indexed like the grid's columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamLog {
    pub n_phi: u32,
    pub n_theta: u32,
    pub beams: Vec<Beam>,
}

impl BeamLog {
    pub fn beam(&self, j: u32, k: u32) -> &Beam {
        &self.beams[j as usize * self.n_theta as usize + k as usize]
    }

    pub fn dropped(&self) -> Vec<(u32, u32)> {
        self.beams.iter().filter(|b| matches!(b.outcome, BeamOutcome::Dropped { .. })).map(|b| (b.j, b.k)).collect()
    }
}

/// Explicit object pose. `center` is the center of the object's extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub prototype: usize,
    pub center: [f64; 3],
    /// Object extent `(l, w, h)`.
    pub size: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneLayout {
    pub objects: Vec<Placement>,
    /// Unlabeled solid blocks.
    pub occluders: Vec<LabeledBox3D>,
    /// Columns `(j, k)` whose return is lost.
    pub drops: Vec<(u32, u32)>,
    /// Ground plane height, if any.
    pub ground_z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub placement: Placement,
    pub class: ObjectClass,
    /// Labeled box: the object extent grown by [`BOX_MARGIN`] per side.
    pub label: LabeledBox3D,
    pub shape: ScaledShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub occluders: Vec<LabeledBox3D>,
    pub ground_z: Option<f64>,
    pub cloud: PointCloud,
    pub log: BeamLog,
    /// Complete surface samples per object, in its box's canonical frame.
    pub true_shapes: Vec<Vec<Point>>,
}

impl Scene {
    pub fn boxes(&self) -> Vec<LabeledBox3D> {
        self.objects.iter().map(|o| o.label).collect()
    }

    /// Points where a scan that sees through everything would cross object
    /// `n`'s outer surface on the grid's center rays, world frame, with their
    /// voxels.
    pub fn full_scan(&self, n: usize, grid: &SphericalGrid) -> Vec<(VoxelIndex, Point)> {
        let obj = &self.objects[n];
        let b = &obj.label;
        let o = rotate_z([-b.center[0], -b.center[1], -b.center[2]], -b.yaw);
        let [_, n_phi, n_theta] = grid.dims();
        let mut out = Vec::new();
        for j in 0..n_phi {
            for k in 0..n_theta {
                let dir = grid.column_direction(j, k);
                if b.ray_interval([0.0; 3], dir).is_none() {
                    continue;
                }
                for t in obj.shape.ray_crossings(o, rotate_z(dir, -b.yaw)) {
                    if let Some(i) = grid.r_axis().bin_of(t) {
                        let p = Point::new(dir[0] * t, dir[1] * t, dir[2] * t, OBJECT_INTENSITY);
                        out.push((VoxelIndex::new(i, j, k), p));
                    }
                }
            }
        }
        out
    }

    pub fn full_scan_voxels(&self, n: usize, grid: &SphericalGrid) -> BTreeSet<VoxelIndex> {
        self.full_scan(n, grid).into_iter().map(|(v, _)| v).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccluderConfig {
    pub count: usize,
    /// Position along the sight line to the shadowed object, as a fraction of
    /// its distance.
    pub distance_fraction: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
    pub depth: [f64; 2],
}

impl Default for OccluderConfig {
    fn default() -> Self {
        Self { count: 1, distance_fraction: [0.35, 0.75], width: [0.4, 1.5], height: [1.0, 2.2], depth: [0.3, 0.6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropConfig {
    /// Chance that an object receives dropped patches.
    pub probability: f64,
    pub max_patches: usize,
    /// Square patch side in pixels, inclusive range.
    pub patch_side: [u32; 2],
}

impl Default for DropConfig {
    fn default() -> Self {
        Self { probability: 0.5, max_patches: 2, patch_side: [1, 3] }
    }
}

/// Scene config file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub objects: usize,
    /// Classes drawn from uniformly, per object.
    pub classes: Vec<ObjectClass>,
    /// Object distance from the sensor in meters.
    pub range: [f64; 2],
    /// Half-width of the azimuth window in degrees.
    pub azimuth_deg: f64,
    pub ground_z: Option<f64>,
    /// Relative size jitter per axis.
    pub jitter: f64,
    /// Spacing of the complete-shape surface samples, meters.
    pub shape_spacing: f64,
    pub occluders: OccluderConfig,
    pub signal_miss: DropConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: 4,
            classes: vec![ObjectClass::Car, ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist],
            range: [6.0, 35.0],
            azimuth_deg: 35.0,
            ground_z: Some(-1.73),
            jitter: 0.1,
            shape_spacing: 0.05,
            occluders: OccluderConfig::default(),
            signal_miss: DropConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.objects > 0 && self.classes.is_empty() {
            return bad("classes must not be empty");
        }
        if !ordered(self.range) || self.range[0] <= 0.0 {
            return bad("range");
        }
        if !(self.azimuth_deg > 0.0 && self.azimuth_deg <= 180.0) {
            return bad("azimuth_deg");
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad("jitter");
        }
        if self.shape_spacing.is_nan() || self.shape_spacing <= 0.0 {
            return bad("shape_spacing");
        }
        let o = &self.occluders;
        for (name, r) in [
            ("occluders.distance_fraction", o.distance_fraction),
            ("occluders.width", o.width),
            ("occluders.height", o.height),
            ("occluders.depth", o.depth),
        ] {
            if !ordered(r) || r[0] <= 0.0 {
                return bad(name);
            }
        }
        if o.distance_fraction[1] >= 1.0 {
            return bad("occluders.distance_fraction");
        }
        let s = &self.signal_miss;
        if !(0.0..=1.0).contains(&s.probability) {
            return bad("signal_miss.probability");
        }
        if s.patch_side[0] == 0 || s.patch_side[0] > s.patch_side[1] {
            return bad("signal_miss.patch_side");
        }
        Ok(())
    }
}

fn rotate_z(v: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

fn object_box(p: &Placement, class: ObjectClass) -> LabeledBox3D {
    let m = 2.0 * BOX_MARGIN;
    LabeledBox3D::new(p.center, [p.size[0] + m, p.size[1] + m, p.size[2] + m], p.yaw, class)
}

/// BEV footprints grown by `clearance` on every side overlap.
fn footprints_clash(a: &LabeledBox3D, b: &LabeledBox3D, clearance: f64) -> bool {
    let grow = |x: &LabeledBox3D| {
        let mut g = *x;
        g.size[0] += 2.0 * clearance;
        g.size[1] += 2.0 * clearance;
        g
    };
    bev_intersection_area(&grow(a), &grow(b)) > 0.0
}

struct Caster<'a> {
    objects: &'a [SceneObject],
    occluders: Vec<(LabeledBox3D, ScaledShape)>,
    ground_z: Option<f64>,
    r_window: (f64, f64),
}

impl Caster<'_> {
    /// All surfaces the ray enters inside the range window, nearest first.
    fn cast(&self, dir: [f64; 3]) -> Vec<(SurfaceId, f64)> {
        let mut hits = Vec::new();
        let mut probe = |b: &LabeledBox3D, shape: &ScaledShape, id: SurfaceId| {
            let o = rotate_z([-b.center[0], -b.center[1], -b.center[2]], -b.yaw);
            let d = rotate_z(dir, -b.yaw);
            if let Some(t) = shape.ray_hit(o, d) {
                hits.push((id, t));
            }
        };
        for (i, obj) in self.objects.iter().enumerate() {
            probe(&obj.label, &obj.shape, SurfaceId::Object(i as u32));
        }
        for (i, (b, shape)) in self.occluders.iter().enumerate() {
            probe(b, shape, SurfaceId::Occluder(i as u32));
        }
        if let Some(gz) = self.ground_z {
            if dir[2] < 0.0 && gz < 0.0 {
                hits.push((SurfaceId::Ground, gz / dir[2]));
            }
        }
        hits.retain(|&(_, t)| t >= self.r_window.0 && t <= self.r_window.1);
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        hits
    }
}

fn intensity_of(s: SurfaceId) -> f64 {
    match s {
        SurfaceId::Object(_) => OBJECT_INTENSITY,
        SurfaceId::Occluder(_) => OCCLUDER_INTENSITY,
        SurfaceId::Ground => GROUND_INTENSITY,
    }
}

fn build_objects(layout: &SceneLayout, prototypes: &[ScenePrototype]) -> Result<Vec<SceneObject>, SynthError> {
    let mut objects = Vec::with_capacity(layout.objects.len());
    for p in &layout.objects {
        let proto = prototypes.get(p.prototype).ok_or(SynthError::UnknownPrototype(p.prototype))?;
        objects.push(SceneObject {
            placement: *p,
            class: proto.class,
            label: object_box(p, proto.class),
            shape: proto.scaled(p.size),
        });
    }
    let solids: Vec<LabeledBox3D> = objects.iter().map(|o| o.label).chain(layout.occluders.iter().copied()).collect();
    for a in 0..solids.len() {
        for b in a + 1..solids.len() {
            if footprints_clash(&solids[a], &solids[b], 0.0) {
                let (za, zb) = (solids[a].z_extent(), solids[b].z_extent());
                if za.0 < zb.1 && zb.0 < za.1 {
                    return Err(SynthError::Overlap(a, b));
                }
            }
        }
    }
    Ok(objects)
}

/// Ray-casts an explicit layout, one beam per angular bin of `grid`.
pub fn render_layout(
    layout: &SceneLayout,
    grid: &SphericalGrid,
    prototypes: &[ScenePrototype],
    shape_spacing: f64,
) -> Result<Scene, SynthError> {
    let objects = build_objects(layout, prototypes)?;
    let hits = cast_all(&objects, layout, grid);
    Ok(finish(objects, layout, grid, hits, &layout.drops, shape_spacing))
}

fn cast_all(objects: &[SceneObject], layout: &SceneLayout, grid: &SphericalGrid) -> Vec<Vec<(SurfaceId, f64)>> {
    let caster = Caster {
        objects,
        occluders: layout
            .occluders
            .iter()
            .map(|b| {
                let [l, w, h] = b.size;
                (*b, ScaledShape { blocks: vec![([-l / 2.0, -w / 2.0, -h / 2.0], [l / 2.0, w / 2.0, h / 2.0])] })
            })
            .collect(),
        ground_z: layout.ground_z,
        r_window: (grid.r_axis().lo, grid.r_axis().hi()),
    };
    let [_, n_phi, n_theta] = grid.dims();
    let mut out = Vec::with_capacity(grid.column_count());
    for j in 0..n_phi {
        for k in 0..n_theta {
            out.push(caster.cast(grid.column_direction(j, k)));
        }
    }
    out
}

fn finish(
    objects: Vec<SceneObject>,
    layout: &SceneLayout,
    grid: &SphericalGrid,
    hits: Vec<Vec<(SurfaceId, f64)>>,
    drops: &[(u32, u32)],
    shape_spacing: f64,
) -> Scene {
    let [_, n_phi, n_theta] = grid.dims();
    let mut dropped = vec![false; grid.column_count()];
    for &(j, k) in drops {
        if j < n_phi && k < n_theta {
            dropped[grid.column_id(j, k)] = true;
        }
    }
    let mut beams = Vec::with_capacity(hits.len());
    let mut points = Vec::new();
    for (c, h) in hits.into_iter().enumerate() {
        let (j, k) = grid.column_of_id(c);
        let dir = grid.column_direction(j, k);
        let (outcome, farther) = match h.split_first() {
            None => (BeamOutcome::NoTarget, Vec::new()),
            Some((&(surface, t), rest)) => {
                let outcome = if dropped[c] {
                    BeamOutcome::Dropped { surface, range: t }
                } else {
                    let p = Point::new(t * dir[0], t * dir[1], t * dir[2], intensity_of(surface));
                    points.push(p);
                    BeamOutcome::Hit { point: p, surface }
                };
                (outcome, rest.to_vec())
            }
        };
        beams.push(Beam { j, k, outcome, farther });
    }
    let true_shapes = objects.iter().map(|o| o.shape.sample_surface(shape_spacing, OBJECT_INTENSITY)).collect();
    Scene {
        objects,
        occluders: layout.occluders.clone(),
        ground_z: layout.ground_z,
        cloud: PointCloud::new(points),
        log: BeamLog { n_phi, n_theta, beams },
        true_shapes,
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn sample_layout(
    cfg: &SceneConfig,
    prototypes: &[ScenePrototype],
    rng: &mut ChaCha8Rng,
) -> Result<SceneLayout, SynthError> {
    const ATTEMPTS: usize = 500;
    const CLEARANCE: f64 = 0.3;
    let ground = cfg.ground_z.unwrap_or(-1.73);
    let mut layout = SceneLayout { ground_z: cfg.ground_z, ..Default::default() };
    let mut solids: Vec<LabeledBox3D> = Vec::new();
    let az = cfg.azimuth_deg.to_radians();
    for n in 0..cfg.objects {
        let class = cfg.classes[rng.random_range(0..cfg.classes.len())];
        let candidates: Vec<usize> = (0..prototypes.len()).filter(|&i| prototypes[i].class == class).collect();
        if candidates.is_empty() {
            return Err(SynthError::NoPrototype(class));
        }
        let proto = candidates[rng.random_range(0..candidates.len())];
        let nominal = prototypes[proto].nominal_size;
        let size = nominal.map(|s| s * uniform(rng, [1.0 - cfg.jitter, 1.0 + cfg.jitter]));
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let r = uniform(rng, cfg.range);
            let phi = uniform(rng, [-az, az]);
            let yaw = uniform(rng, [-PI, PI]);
            let p = Placement {
                prototype: proto,
                center: [r * phi.cos(), r * phi.sin(), ground + GROUND_CLEARANCE + size[2] / 2.0],
                size,
                yaw,
            };
            let b = object_box(&p, class);
            if solids.iter().all(|s| !footprints_clash(s, &b, CLEARANCE)) {
                solids.push(b);
                layout.objects.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::Placement(n, ATTEMPTS));
        }
    }
    let oc = &cfg.occluders;
    for n in 0..if layout.objects.is_empty() { 0 } else { oc.count } {
        let target = layout.objects[n % layout.objects.len()];
        let dist = target.center[0].hypot(target.center[1]);
        let bearing = target.center[1].atan2(target.center[0]);
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let f = uniform(rng, oc.distance_fraction);
            let lateral = uniform(rng, [-0.6, 0.6]) * target.size[1].max(target.size[0]);
            let (w, h, d) = (uniform(rng, oc.width), uniform(rng, oc.height), uniform(rng, oc.depth));
            let along = f * dist;
            let c = [
                along * bearing.cos() - lateral * bearing.sin(),
                along * bearing.sin() + lateral * bearing.cos(),
                ground + h / 2.0,
            ];
            let b = LabeledBox3D::new(c, [d, w, h], bearing, ObjectClass::Other);
            if c[0].hypot(c[1]) > 3.5 && solids.iter().all(|s| !footprints_clash(s, &b, CLEARANCE)) {
                solids.push(b);
                layout.occluders.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::Placement(cfg.objects + n, ATTEMPTS));
        }
    }
    Ok(layout)
}

/// Picks dropped patches on object surfaces. Each patch and its one-pixel
/// ring must be returns from the same object, so the patch is a closed hole
/// in the range image.
fn sample_drops(
    cfg: &DropConfig,
    n_objects: usize,
    grid: &SphericalGrid,
    hits: &[Vec<(SurfaceId, f64)>],
    rng: &mut ChaCha8Rng,
) -> Vec<(u32, u32)> {
    let [_, n_phi, n_theta] = grid.dims();
    let first = |j: i64, k: i64| -> Option<SurfaceId> {
        if j < 0 || k < 0 || j >= n_phi as i64 || k >= n_theta as i64 {
            return None;
        }
        hits[grid.column_id(j as u32, k as u32)].first().map(|h| h.0)
    };
    let mut dropped = vec![false; grid.column_count()];
    let mut out = Vec::new();
    for obj in 0..n_objects {
        if rng.random::<f64>() >= cfg.probability {
            continue;
        }
        let patches = if cfg.max_patches == 0 { 0 } else { rng.random_range(1..=cfg.max_patches) };
        for _ in 0..patches {
            let side = rng.random_range(cfg.patch_side[0]..=cfg.patch_side[1]) as i64;
            let me = Some(SurfaceId::Object(obj as u32));
            let mut candidates = Vec::new();
            for j in 0..n_phi as i64 {
                for k in 0..n_theta as i64 {
                    let ok = (j - 1..=j + side).all(|a| {
                        (k - 1..=k + side).all(|b| first(a, b) == me && !dropped[grid.column_id(a as u32, b as u32)])
                    });
                    if ok {
                        candidates.push((j as u32, k as u32));
                    }
                }
            }
            if candidates.is_empty() {
                break;
            }
            let (j, k) = candidates[rng.random_range(0..candidates.len())];
            for a in j..j + side as u32 {
                for b in k..k + side as u32 {
                    dropped[grid.column_id(a, b)] = true;
                    out.push((a, b));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Samples a scene from `cfg` and ray-casts it on `grid`.
pub fn generate_scene(
    cfg: &SceneConfig,
    grid: &SphericalGrid,
    prototypes: &[ScenePrototype],
) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layout = sample_layout(cfg, prototypes, &mut rng)?;
    let objects = build_objects(&layout, prototypes)?;
    let hits = cast_all(&objects, &layout, grid);
    layout.drops = sample_drops(&cfg.signal_miss, objects.len(), grid, &hits, &mut rng);
    Ok(finish(objects, &layout, grid, hits, &layout.drops, cfg.shape_spacing))
}

/// Same as [`generate_scene`] with the built-in prototype bank.
pub fn generate_default(cfg: &SceneConfig, grid: &SphericalGrid) -> Result<Scene, SynthError> {
    generate_scene(cfg, grid, &default_prototypes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SphericalGrid {
        SphericalGrid::kitti()
    }

    #[test]
    fn empty_scene_is_all_no_target() {
        let layout = SceneLayout::default();
        let s = render_layout(&layout, &grid(), &default_prototypes(), 0.05).unwrap();
        assert!(s.cloud.is_empty());
        assert_eq!(s.log.beams.len(), grid().column_count());
        assert!(s.log.beams.iter().all(|b| b.outcome == BeamOutcome::NoTarget));
    }

    #[test]
    fn full_scan_starts_with_the_visible_hits() {
        let protos = default_prototypes();
        let p = Placement { prototype: 2, center: [14.0, -2.0, -0.7], size: [4.8, 1.9, 2.0], yaw: -0.3 };
        let layout = SceneLayout { objects: vec![p], ..Default::default() };
        let g = grid();
        let s = render_layout(&layout, &g, &protos, 0.05).unwrap();
        let scan = s.full_scan(0, &g);
        let vox: BTreeSet<_> = scan.iter().map(|(v, _)| *v).collect();
        let mut hits = 0;
        for beam in &s.log.beams {
            if let BeamOutcome::Hit { point, .. } = beam.outcome {
                hits += 1;
                assert!(vox.contains(&g.locate(&point).unwrap()));
            }
        }
        // every column that hits also exits the far side
        assert!(scan.len() >= 2 * hits && hits > 50);
    }

    #[test]
    fn single_object_hits_lie_on_its_surface() {
        let protos = default_prototypes();
        let p = Placement { prototype: 0, center: [12.0, 1.0, -0.9], size: [4.2, 1.8, 1.5], yaw: 0.4 };
        let layout = SceneLayout { objects: vec![p], ..Default::default() };
        let s = render_layout(&layout, &grid(), &protos, 0.05).unwrap();
        assert!(s.cloud.len() > 100);
        let b = s.objects[0].label;
        for beam in &s.log.beams {
            if let BeamOutcome::Hit { point, surface } = beam.outcome {
                assert_eq!(surface, SurfaceId::Object(0));
                let q = b.to_local(&point);
                // on the boundary of some block
                let on_face = s.objects[0].shape.blocks.iter().any(|(lo, hi)| {
                    let c = q.coords();
                    let inside = (0..3).all(|a| c[a] >= lo[a] - 1e-9 && c[a] <= hi[a] + 1e-9);
                    let face = (0..3).any(|a| (c[a] - lo[a]).abs() < 1e-9 || (c[a] - hi[a]).abs() < 1e-9);
                    inside && face
                });
                assert!(on_face, "{q:?}");
                assert!(b.contains(&point));
            }
        }
    }

    #[test]
    fn overlapping_layout_rejected() {
        let p = Placement { prototype: 0, center: [12.0, 0.0, -0.9], size: [4.2, 1.8, 1.5], yaw: 0.0 };
        let mut q = p;
        q.center[0] += 1.0;
        let layout = SceneLayout { objects: vec![p, q], ..Default::default() };
        assert_eq!(
            render_layout(&layout, &grid(), &default_prototypes(), 0.05).unwrap_err(),
            SynthError::Overlap(0, 1)
        );
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig { seed: 42, ..Default::default() };
        let a = generate_default(&cfg, &grid()).unwrap();
        let b = generate_default(&cfg, &grid()).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_vec(&a.log).unwrap(), serde_json::to_vec(&b.log).unwrap());
        let c = generate_default(&SceneConfig { seed: 43, ..cfg }, &grid()).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn one_return_per_column_at_first_surface() {
        let cfg = SceneConfig { seed: 3, ..Default::default() };
        let s = generate_default(&cfg, &grid()).unwrap();
        assert_eq!(s.cloud.len(), s.log.beams.iter().filter(|b| matches!(b.outcome, BeamOutcome::Hit { .. })).count());
        for b in &s.log.beams {
            if let BeamOutcome::Hit { point, .. } = b.outcome {
                assert!(b.farther.iter().all(|&(_, t)| t >= point.norm() - 1e-9));
            }
        }
    }

    #[test]
    fn drops_are_enclosed_by_same_object_returns() {
        let g = grid();
        let cfg = SceneConfig {
            seed: 11,
            signal_miss: DropConfig { probability: 1.0, max_patches: 2, patch_side: [1, 3] },
            ..Default::default()
        };
        let s = generate_default(&cfg, &g).unwrap();
        let drops = s.log.dropped();
        assert!(!drops.is_empty());
        for &(j, k) in &drops {
            let BeamOutcome::Dropped { surface, .. } = s.log.beam(j, k).outcome else { unreachable!() };
            for (dj, dk) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let n = s.log.beam((j as i64 + dj) as u32, (k as i64 + dk) as u32);
                match n.outcome {
                    BeamOutcome::Hit { surface: t, .. } | BeamOutcome::Dropped { surface: t, .. } => {
                        assert_eq!(t, surface)
                    }
                    BeamOutcome::NoTarget => panic!("drop next to empty beam"),
                }
            }
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = SceneConfig { seed: 9, objects: 2, ..Default::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: SceneConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let partial: SceneConfig = toml::from_str("seed = 5\nobjects = 1\n").unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.range, SceneConfig::default().range);
        assert!(toml::from_str::<SceneConfig>("bogus = 1").is_err());
    }
}
