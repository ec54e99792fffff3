//! Approximate complete object shapes.
//!
//! Each labeled object is cut out of its frame into the box's canonical frame,
//! mirrored across its length axis when the class is symmetric, and filled
//! from the best-matching objects of the same class in a source bank.

mod bank;
mod kdtree;

pub use bank::{read_bank, write_bank, BankError, BANK_MAGIC, BANK_VERSION};
pub use kdtree::KdTree;

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::{LabeledBox3D, ObjectClass};
use crate::geom::{Point, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    /// Weight of the size-similarity term.
    pub alpha: f64,
    /// Weight of the extra-voxel term.
    pub beta: f64,
    /// Edge of the canonical-frame match grid, meters.
    pub match_voxel_size: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 1.0, match_voxel_size: 0.1 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("{0} objects are not mirrored")]
    NotSymmetric(ObjectClass),
}

/// Identifies an object across a split: frame id plus box index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectKey {
    pub frame: String,
    pub box_id: u32,
}

impl ObjectKey {
    pub fn new(frame: impl Into<String>, box_id: u32) -> Self {
        Self { frame: frame.into(), box_id }
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.frame, self.box_id)
    }
}

/// An object's points in its box's canonical frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub key: ObjectKey,
    pub class: ObjectClass,
    pub box3d: LabeledBox3D,
    pub points: Vec<Point>,
}

pub type MatchVoxel = [i64; 3];

pub fn match_voxel(p: &Point, size: f64) -> MatchVoxel {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

pub fn match_voxels(points: &[Point], size: f64) -> BTreeSet<MatchVoxel> {
    points.iter().map(|p| match_voxel(p, size)).collect()
}

/// Cuts every box out of the frame. Also returns the indices of boxes that
/// hold no point.
pub fn extract_objects(frame: &str, cloud: &PointCloud, boxes: &[LabeledBox3D]) -> (Vec<ObjectInstance>, Vec<usize>) {
    let mut out = Vec::with_capacity(boxes.len());
    let mut empty = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        let points: Vec<Point> = cloud.iter().map(|p| b.to_local(p)).filter(|q| b.contains_local(q)).collect();
        if points.is_empty() {
            empty.push(bi);
        }
        out.push(ObjectInstance { key: ObjectKey::new(frame, bi as u32), class: b.class, box3d: *b, points });
    }
    (out, empty)
}

/// Adds the reflection `y -> -y` of every point whose reflection lands in a
/// match voxel the object does not occupy yet.
pub fn mirror(obj: &ObjectInstance, params: &HeuristicParams) -> Result<ObjectInstance, AssemblyError> {
    if !obj.class.is_symmetric() {
        return Err(AssemblyError::NotSymmetric(obj.class));
    }
    let occupied = match_voxels(&obj.points, params.match_voxel_size);
    let mut points = obj.points.clone();
    for p in &obj.points {
        let q = Point::new(p.x, -p.y, p.z, p.intensity);
        if !occupied.contains(&match_voxel(&q, params.match_voxel_size)) {
            points.push(q);
        }
    }
    Ok(ObjectInstance { points, ..obj.clone() })
}

/// Mirrors symmetric classes and passes the rest through.
pub fn prepare(obj: &ObjectInstance, params: &HeuristicParams) -> ObjectInstance {
    mirror(obj, params).unwrap_or_else(|_| obj.clone())
}

/// IoU of two boxes' sizes when placed axis-aligned on a common center.
pub fn size_iou(a: [f64; 3], b: [f64; 3]) -> f64 {
    let inter: f64 = (0..3).map(|i| a[i].min(b[i])).product();
    let union = a.iter().product::<f64>() + b.iter().product::<f64>() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// An object with its match voxels and search index built once.
#[derive(Debug, Clone)]
pub struct IndexedObject {
    pub object: ObjectInstance,
    pub voxels: BTreeSet<MatchVoxel>,
    pub tree: KdTree,
}

impl IndexedObject {
    pub fn new(object: ObjectInstance, params: &HeuristicParams) -> Self {
        let voxels = match_voxels(&object.points, params.match_voxel_size);
        let tree = KdTree::new(&object.points.iter().map(Point::coords).collect::<Vec<_>>());
        Self { object, voxels, tree }
    }
}

/// Matching cost of filling `a` from `b`; lower is better. Infinite when `b`
/// is empty or adds no voxel to `a`.
pub fn heuristic_score(a: &IndexedObject, b: &IndexedObject, params: &HeuristicParams) -> f64 {
    if b.tree.is_empty() {
        return f64::INFINITY;
    }
    let extra = b.voxels.difference(&a.voxels).count();
    if extra == 0 {
        return f64::INFINITY;
    }
    let spread: f64 =
        a.object.points.iter().map(|p| b.tree.nearest_distance(p.coords()).expect("non-empty tree")).sum();
    spread - params.alpha * size_iou(a.object.box3d.size, b.object.box3d.size) + params.beta / extra as f64
}

/// Convenience wrapper over raw instances.
pub fn score_objects(a: &ObjectInstance, b: &ObjectInstance, params: &HeuristicParams) -> f64 {
    heuristic_score(&IndexedObject::new(a.clone(), params), &IndexedObject::new(b.clone(), params), params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMatch {
    /// Position in the bank.
    pub index: usize,
    pub key: ObjectKey,
    pub score: f64,
}

pub const MAX_SOURCES: usize = 3;

/// The three lowest finite scores among same-class bank objects other than
/// the target itself, ordered by `(score, key)`.
pub fn select_sources(target: &IndexedObject, bank: &[IndexedObject], params: &HeuristicParams) -> Vec<SourceMatch> {
    let mut scored: Vec<SourceMatch> = bank
        .par_iter()
        .enumerate()
        .filter(|(_, b)| b.object.class == target.object.class && b.object.key != target.object.key)
        .map(|(index, b)| SourceMatch { index, key: b.object.key.clone(), score: heuristic_score(target, b, params) })
        .filter(|m| m.score.is_finite())
        .collect();
    scored.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.key.cmp(&b.key)).then(a.index.cmp(&b.index)));
    scored.truncate(MAX_SOURCES);
    scored
}

/// Approximate complete shape in the target's canonical frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledShape {
    pub target: ObjectKey,
    pub class: ObjectClass,
    pub box3d: LabeledBox3D,
    /// Target points, mirrored where applicable.
    pub native: Vec<Point>,
    pub borrowed: Vec<Point>,
    /// For each borrowed point, its position in `sources`.
    pub borrowed_from: Vec<u32>,
    pub sources: Vec<ObjectKey>,
}

impl AssembledShape {
    pub fn all_points(&self) -> impl Iterator<Item = &Point> {
        self.native.iter().chain(&self.borrowed)
    }

    pub fn len(&self) -> usize {
        self.native.len() + self.borrowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points placed back at the box pose: `(point, borrowed)`.
    pub fn world_points(&self) -> Vec<(Point, bool)> {
        self.native
            .iter()
            .map(|p| (self.box3d.to_world(p), false))
            .chain(self.borrowed.iter().map(|p| (self.box3d.to_world(p), true)))
            .collect()
    }
}

/// Fills the target from each source in turn. A source contributes the
/// points that fall inside the target box, pass `accept`, and land in match
/// voxels that were still empty before that source was visited.
pub fn assemble(
    target: &ObjectInstance,
    sources: &[&ObjectInstance],
    params: &HeuristicParams,
    accept: Option<&dyn Fn(&Point) -> bool>,
) -> AssembledShape {
    let mut occupied = match_voxels(&target.points, params.match_voxel_size);
    let mut borrowed = Vec::new();
    let mut borrowed_from = Vec::new();
    for (rank, s) in sources.iter().enumerate() {
        let mut added = BTreeSet::new();
        for p in &s.points {
            if !target.box3d.contains_local(p) || accept.is_some_and(|f| !f(p)) {
                continue;
            }
            let v = match_voxel(p, params.match_voxel_size);
            if occupied.contains(&v) {
                continue;
            }
            added.insert(v);
            borrowed.push(*p);
            borrowed_from.push(rank as u32);
        }
        occupied.extend(added);
    }
    AssembledShape {
        target: target.key.clone(),
        class: target.class,
        box3d: target.box3d,
        native: target.points.clone(),
        borrowed,
        borrowed_from,
        sources: sources.iter().map(|s| s.key.clone()).collect(),
    }
}

/// Prepares, indexes, selects and assembles every target against `bank`.
/// `bank` must already be prepared; targets are raw extractions.
pub fn assemble_all(
    targets: &[ObjectInstance],
    bank: &[IndexedObject],
    params: &HeuristicParams,
) -> Vec<(AssembledShape, Vec<SourceMatch>)> {
    targets
        .par_iter()
        .map(|t| {
            let prepared = IndexedObject::new(prepare(t, params), params);
            let picks = select_sources(&prepared, bank, params);
            let sources: Vec<&ObjectInstance> = picks.iter().map(|m| &bank[m.index].object).collect();
            (assemble(&prepared.object, &sources, params, None), picks)
        })
        .collect()
}
