//! Where shape can be missing in a single LiDAR frame.
//!
//! Every spherical column `(j, k)` is one range-image pixel. A return in a
//! column hides everything behind it, so the occluded region is the first
//! occupied r-bin of each column and every bin after it. Columns without any
//! return that form small holes inside areas with returns are treated as
//! signal miss. Voxels inside labeled boxes are then attributed to a cause.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::boxes::LabeledBox3D;
use crate::geom::{PointCloud, SphericalGrid, VoxelGrid, VoxelIndex, Voxelization};

/// Why an in-box voxel has (or lacks) object points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    /// Holds at least one return.
    Observed,
    /// Hidden behind a return that belongs to something else.
    ExternalOcclusion,
    /// In a column where the beam came back empty.
    SignalMiss,
    /// Hidden behind a return of the same object.
    SelfOcclusion,
    /// Empty and visible: free space in front of the first return.
    None,
}

impl Cause {
    pub const ALL: [Cause; 5] =
        [Self::Observed, Self::ExternalOcclusion, Self::SignalMiss, Self::SelfOcclusion, Self::None];

    pub fn code(&self) -> u8 {
        match self {
            Self::Observed => 0,
            Self::ExternalOcclusion => 1,
            Self::SignalMiss => 2,
            Self::SelfOcclusion => 3,
            Self::None => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn is_shape_miss(&self) -> bool {
        matches!(self, Self::ExternalOcclusion | Self::SignalMiss | Self::SelfOcclusion)
    }
}

/// Cause of one in-box voxel and the box it was attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseLabel {
    pub box_id: u32,
    pub cause: Cause,
}

/// Range view over the grid's `(phi, theta)` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub n_phi: u32,
    pub n_theta: u32,
    /// Smallest return range per pixel, `None` without signal. Indexed by
    /// `j * n_theta + k`.
    pub min_r: Vec<Option<f64>>,
}

impl RangeImage {
    pub fn has_signal(&self, j: u32, k: u32) -> bool {
        self.min_r[j as usize * self.n_theta as usize + k as usize].is_some()
    }

    pub fn signal_pixels(&self) -> usize {
        self.min_r.iter().filter(|v| v.is_some()).count()
    }
}

pub fn build_range_image(grid: &SphericalGrid, vox: &Voxelization) -> RangeImage {
    let [_, n_phi, n_theta] = grid.dims();
    let mut min_r = vec![None; grid.column_count()];
    for (idx, cell) in &vox.voxels {
        let c = grid.column_id(idx.j, idx.k);
        let v: &mut Option<f64> = &mut min_r[c];
        *v = Some(v.map_or(cell.min_r, |m| m.min(cell.min_r)));
    }
    RangeImage { n_phi, n_theta, min_r }
}

/// First occupied r-index per column; the column is occluded from there on.
pub fn identify_occluded(grid: &SphericalGrid, vox: &Voxelization) -> Vec<Option<u32>> {
    let mut first = vec![None; grid.column_count()];
    // BTreeMap iterates in ascending r-index, so the first hit per column wins
    for idx in vox.voxels.keys() {
        let c = grid.column_id(idx.j, idx.k);
        if first[c].is_none() {
            first[c] = Some(idx.i);
        }
    }
    first
}

/// Radial extent given to signal-miss columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalMissExtent {
    /// All r-bins of the column.
    #[default]
    Full,
    /// Only the r-bins between the nearest and farthest first return among
    /// the signal pixels bordering the hole.
    Bracketed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMissParams {
    /// Holes larger than this many pixels are not signal miss (sky, ground
    /// beyond range, and so on).
    pub max_region_pixels: usize,
    pub extent: SignalMissExtent,
}

impl Default for SignalMissParams {
    fn default() -> Self {
        Self { max_region_pixels: 200, extent: SignalMissExtent::Full }
    }
}

/// Inclusive r-index interval of the signal-miss region per column.
///
/// A no-signal pixel is on a border when one of its 4-neighbours has signal.
/// A 4-connected no-signal region becomes signal miss when it contains a
/// border pixel, does not touch the frame edge, and is no larger than
/// `max_region_pixels`.
pub fn identify_signal_miss(
    grid: &SphericalGrid,
    image: &RangeImage,
    params: &SignalMissParams,
) -> Vec<Option<(u32, u32)>> {
    let (np, nt) = (image.n_phi as i64, image.n_theta as i64);
    let wraps = grid.phi_wraps();
    let n_r = grid.dims()[0];
    let id = |j: i64, k: i64| (j * nt + k) as usize;
    let neighbours = |j: i64, k: i64| {
        let mut out = [(0i64, 0i64, false); 4];
        for (n, (dj, dk)) in [(-1, 0), (1, 0), (0, -1), (0, 1)].into_iter().enumerate() {
            let (mut jj, kk) = (j + dj, k + dk);
            if wraps {
                jj = jj.rem_euclid(np);
            }
            let inside = (0..np).contains(&jj) && (0..nt).contains(&kk);
            out[n] = (jj, kk, inside);
        }
        out
    };
    let r_axis = grid.r_axis();
    let mut out = vec![None; image.min_r.len()];
    let mut seen = vec![false; image.min_r.len()];
    let mut queue = VecDeque::new();
    for j0 in 0..np {
        for k0 in 0..nt {
            let start = id(j0, k0);
            if seen[start] || image.min_r[start].is_some() {
                continue;
            }
            seen[start] = true;
            queue.push_back((j0, k0));
            let mut region = Vec::new();
            let mut touches_edge = false;
            let mut bordered = false;
            let mut bracket: Option<(u32, u32)> = None;
            while let Some((j, k)) = queue.pop_front() {
                region.push(id(j, k));
                for (jj, kk, inside) in neighbours(j, k) {
                    if !inside {
                        touches_edge = true;
                        continue;
                    }
                    let n = id(jj, kk);
                    match image.min_r[n] {
                        Some(r) => {
                            bordered = true;
                            let ri = r_axis.bin_of(r).unwrap_or(n_r - 1);
                            bracket = Some(bracket.map_or((ri, ri), |(a, b)| (a.min(ri), b.max(ri))));
                        }
                        None if !seen[n] => {
                            seen[n] = true;
                            queue.push_back((jj, kk));
                        }
                        None => {}
                    }
                }
            }
            if touches_edge || !bordered || region.len() > params.max_region_pixels {
                continue;
            }
            let extent = match params.extent {
                SignalMissExtent::Full => (0, n_r - 1),
                SignalMissExtent::Bracketed => bracket.expect("bordered region has a bracket"),
            };
            for c in region {
                out[c] = Some(extent);
            }
        }
    }
    out
}

/// Per-voxel region membership over a spherical grid, stored per column.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub grid: SphericalGrid,
    /// Start of the occluded run per column.
    pub first_return: Vec<Option<u32>>,
    /// Inclusive signal-miss r-interval per column.
    pub signal_miss: Vec<Option<(u32, u32)>>,
    /// Occupied voxels, ascending.
    pub occupied: Vec<VoxelIndex>,
    /// Labels for every voxel whose center lies inside a labeled box.
    pub causes: BTreeMap<VoxelIndex, CauseLabel>,
}

impl RegionMask {
    pub fn is_occupied(&self, idx: &VoxelIndex) -> bool {
        self.occupied.binary_search(idx).is_ok()
    }

    pub fn in_occluded(&self, idx: &VoxelIndex) -> bool {
        self.first_return[self.grid.column_id(idx.j, idx.k)].is_some_and(|f| idx.i >= f)
    }

    pub fn in_signal_miss(&self, idx: &VoxelIndex) -> bool {
        self.signal_miss[self.grid.column_id(idx.j, idx.k)].is_some_and(|(a, b)| (a..=b).contains(&idx.i))
    }

    pub fn in_domain(&self, idx: &VoxelIndex) -> bool {
        self.grid.contains_index(*idx) && (self.in_occluded(idx) || self.in_signal_miss(idx))
    }

    pub fn cause(&self, idx: &VoxelIndex) -> Option<CauseLabel> {
        self.causes.get(idx).copied()
    }

    /// Domain voxels `R_OC ∪ R_SM` in ascending index order.
    pub fn domain(&self) -> Vec<VoxelIndex> {
        let [n_r, _, _] = self.grid.dims();
        let cols = self.grid.column_count();
        let mut out = Vec::new();
        for i in 0..n_r {
            for c in 0..cols {
                let oc = self.first_return[c].is_some_and(|f| i >= f);
                let sm = self.signal_miss[c].is_some_and(|(a, b)| (a..=b).contains(&i));
                if oc || sm {
                    let (j, k) = self.grid.column_of_id(c);
                    out.push(VoxelIndex::new(i, j, k));
                }
            }
        }
        out
    }

    pub fn domain_size(&self) -> usize {
        let n_r = self.grid.dims()[0];
        (0..self.grid.column_count())
            .map(|c| {
                let oc = self.first_return[c].map_or(0, |f| n_r - f);
                let sm = self.signal_miss[c].map_or(0, |(a, b)| b - a + 1);
                // the two never share a column
                (oc + sm) as usize
            })
            .sum()
    }

    pub fn count_causes(&self) -> BTreeMap<Cause, usize> {
        let mut out = BTreeMap::new();
        for l in self.causes.values() {
            *out.entry(l.cause).or_insert(0) += 1;
        }
        out
    }
}

/// Voxels whose centers lie inside `b`, ascending.
pub fn voxels_in_box(grid: &SphericalGrid, b: &LabeledBox3D) -> Vec<VoxelIndex> {
    let [n_r, n_phi, n_theta] = grid.dims();
    let r_axis = grid.r_axis();
    let mut out = Vec::new();
    for j in 0..n_phi {
        for k in 0..n_theta {
            let Some((t0, t1)) = b.ray_interval([0.0; 3], grid.column_direction(j, k)) else {
                continue;
            };
            let lo = ((t0 - r_axis.lo) / r_axis.size - 0.5).floor() - 1.0;
            let hi = ((t1 - r_axis.lo) / r_axis.size - 0.5).ceil() + 1.0;
            if hi < 0.0 || lo > (n_r - 1) as f64 {
                continue;
            }
            let lo = lo.max(0.0) as u32;
            let hi = hi.min((n_r - 1) as f64) as u32;
            for i in lo..=hi {
                let idx = VoxelIndex::new(i, j, k);
                if b.contains(&grid.center(idx)) {
                    out.push(idx);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CauseReport {
    pub labels: BTreeMap<VoxelIndex, CauseLabel>,
    /// Boxes that contain no point of the cloud.
    pub empty_boxes: Vec<usize>,
}

/// Occupied r-indices per column, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnHits {
    hits: Vec<Vec<u32>>,
}

impl ColumnHits {
    pub fn new(grid: &SphericalGrid, vox: &Voxelization) -> Self {
        let mut hits: Vec<Vec<u32>> = vec![Vec::new(); grid.column_count()];
        for idx in vox.voxels.keys() {
            hits[grid.column_id(idx.j, idx.k)].push(idx.i);
        }
        for h in &mut hits {
            h.sort_unstable();
        }
        Self { hits }
    }

    /// Nearest occupied r-index strictly in front of `i`.
    pub fn occluder(&self, column: usize, i: u32) -> Option<u32> {
        let h = &self.hits[column];
        let pos = h.partition_point(|&x| x < i);
        pos.checked_sub(1).map(|p| h[p])
    }
}

/// Cause of one voxel with respect to box `b`, whether or not the voxel's
/// center lies inside it.
#[allow(clippy::too_many_arguments)]
pub fn cause_wrt_box(
    grid: &SphericalGrid,
    first_return: &[Option<u32>],
    signal_miss: &[Option<(u32, u32)>],
    hits: &ColumnHits,
    vox: &Voxelization,
    cloud: &PointCloud,
    b: &LabeledBox3D,
    idx: VoxelIndex,
) -> Cause {
    let col = grid.column_id(idx.j, idx.k);
    if vox.is_occupied(&idx) {
        Cause::Observed
    } else if signal_miss[col].is_some_and(|(a, z)| (a..=z).contains(&idx.i)) {
        Cause::SignalMiss
    } else if first_return[col].is_some_and(|f| idx.i >= f) {
        let occluder =
            VoxelIndex::new(hits.occluder(col, idx.i).expect("occluded voxel has a return in front"), idx.j, idx.k);
        let cell = &vox.voxels[&occluder];
        if cell.points.iter().any(|&n| b.contains(&cloud.points[n])) {
            Cause::SelfOcclusion
        } else {
            Cause::ExternalOcclusion
        }
    } else {
        Cause::None
    }
}

/// Attributes every in-box voxel to a cause. When boxes overlap, a voxel goes
/// to the lowest box id.
pub fn classify_cause(
    grid: &SphericalGrid,
    first_return: &[Option<u32>],
    signal_miss: &[Option<(u32, u32)>],
    boxes: &[LabeledBox3D],
    vox: &Voxelization,
    cloud: &PointCloud,
) -> CauseReport {
    let hits = ColumnHits::new(grid, vox);
    let mut labels = BTreeMap::new();
    let mut empty_boxes = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        if !cloud.iter().any(|p| b.contains(p)) {
            empty_boxes.push(bi);
        }
        for idx in voxels_in_box(grid, b) {
            if labels.contains_key(&idx) {
                continue;
            }
            let cause = cause_wrt_box(grid, first_return, signal_miss, &hits, vox, cloud, b, idx);
            labels.insert(idx, CauseLabel { box_id: bi as u32, cause });
        }
    }
    CauseReport { labels, empty_boxes }
}

/// Voxelizes a frame and builds its full region mask.
pub fn analyze_frame(
    grid: &SphericalGrid,
    cloud: &PointCloud,
    boxes: &[LabeledBox3D],
    params: &SignalMissParams,
) -> (RegionMask, Voxelization, Vec<usize>) {
    let vox = crate::geom::voxelize(grid, cloud);
    let image = build_range_image(grid, &vox);
    let first_return = identify_occluded(grid, &vox);
    let signal_miss = identify_signal_miss(grid, &image, params);
    let report = classify_cause(grid, &first_return, &signal_miss, boxes, &vox, cloud);
    let mask = RegionMask {
        grid: grid.clone(),
        first_return,
        signal_miss,
        occupied: vox.voxels.keys().copied().collect(),
        causes: report.labels,
    };
    (mask, vox, report.empty_boxes)
}
