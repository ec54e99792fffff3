//! Sparse occupancy grids: ground truth from assembled shapes, the shape
//! focal loss, transfer of spherical probabilities to a Cartesian grid and
//! the max-pool pyramid.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "SMOG" | u32 version | u8 kind (0 spherical, 1 cartesian)
//! 3 x (f64 lo, f64 size, u32 bins)            axes; spherical angles in radians
//! u64 record count
//! per record, ascending index: u32 i, u32 j, u32 k, f64 value, f64 weight, u8 domain (always 1)
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::AssembledShape;
use crate::boxes::loss::clamp_prob;
use crate::geom::{Axis, CartesianGrid, Point, SphericalGrid, VoxelGrid, VoxelIndex};
use crate::occlusion::RegionMask;

pub const GRID_MAGIC: &[u8; 4] = b"SMOG";
pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridKind {
    Spherical(SphericalGrid),
    Cartesian(CartesianGrid),
}

impl GridKind {
    pub fn axes(&self) -> &[Axis; 3] {
        match self {
            Self::Spherical(g) => g.axes(),
            Self::Cartesian(g) => g.axes(),
        }
    }

    pub fn center(&self, idx: VoxelIndex) -> Point {
        match self {
            Self::Spherical(g) => g.center(idx),
            Self::Cartesian(g) => g.center(idx),
        }
    }

    pub fn contains_index(&self, idx: VoxelIndex) -> bool {
        match self {
            Self::Spherical(g) => g.contains_index(idx),
            Self::Cartesian(g) => g.contains_index(idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Occupancy bit (0 or 1) for targets, probability for predictions.
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error("grids differ")]
    GridMismatch,
    #[error("domains differ")]
    DomainMismatch,
    #[error("expected a {0} grid")]
    WrongKind(&'static str),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not an occupancy grid file (bad magic)")]
    BadMagic,
    #[error("unsupported occupancy grid version {0}")]
    Version(u32),
    #[error("truncated occupancy grid")]
    Truncated,
    #[error("corrupt occupancy grid: {0}")]
    Corrupt(String),
}

/// Values on the domain voxels only, sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub grid: GridKind,
    pub cells: Vec<(VoxelIndex, Cell)>,
}

impl OccupancyGrid {
    /// Builds from unsorted cells; later duplicates win.
    pub fn from_cells(grid: GridKind, cells: impl IntoIterator<Item = (VoxelIndex, Cell)>) -> Self {
        let map: BTreeMap<VoxelIndex, Cell> = cells.into_iter().collect();
        Self { grid, cells: map.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, idx: &VoxelIndex) -> Option<Cell> {
        self.cells.binary_search_by(|c| c.0.cmp(idx)).ok().map(|i| self.cells[i].1)
    }

    /// Same domain, every value replaced by `p`, unit weights.
    pub fn uniform_like(&self, p: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            cells: self.cells.iter().map(|&(v, _)| (v, Cell { value: p, weight: 1.0 })).collect(),
        }
    }

    pub fn max_value(&self) -> Option<f64> {
        self.cells.iter().map(|c| c.1.value).reduce(f64::max)
    }

    pub fn same_domain(&self, other: &Self) -> bool {
        self.cells.len() == other.cells.len() && self.cells.iter().zip(&other.cells).all(|(a, b)| a.0 == b.0)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), OccupancyError> {
        let mut buf = Vec::with_capacity(64 + self.cells.len() * 29);
        buf.extend_from_slice(GRID_MAGIC);
        buf.extend_from_slice(&GRID_VERSION.to_le_bytes());
        buf.push(match self.grid {
            GridKind::Spherical(_) => 0,
            GridKind::Cartesian(_) => 1,
        });
        for a in self.grid.axes() {
            buf.extend_from_slice(&a.lo.to_le_bytes());
            buf.extend_from_slice(&a.size.to_le_bytes());
            buf.extend_from_slice(&a.bins.to_le_bytes());
        }
        buf.extend_from_slice(&(self.cells.len() as u64).to_le_bytes());
        for (v, c) in &self.cells {
            for x in [v.i, v.j, v.k] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            buf.extend_from_slice(&c.value.to_le_bytes());
            buf.extend_from_slice(&c.weight.to_le_bytes());
            buf.push(1);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, OccupancyError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut c = ByteCursor { data: &data, pos: 0 };
        if c.take(4).map_err(|_| OccupancyError::BadMagic)? != GRID_MAGIC {
            return Err(OccupancyError::BadMagic);
        }
        let version = c.u32()?;
        if version != GRID_VERSION {
            return Err(OccupancyError::Version(version));
        }
        let kind = c.u8()?;
        let mut axes = Vec::with_capacity(3);
        for n in 0..3 {
            let (lo, size, bins) = (c.f64()?, c.f64()?, c.u32()?);
            axes.push(Axis::from_parts(n, lo, size, bins).map_err(|e| OccupancyError::Corrupt(e.to_string()))?);
        }
        let axes: [Axis; 3] = axes.try_into().expect("three axes");
        let grid = match kind {
            0 => GridKind::Spherical(SphericalGrid::from_axes(axes)),
            1 => GridKind::Cartesian(CartesianGrid::from_axes(axes)),
            k => return Err(OccupancyError::Corrupt(format!("grid kind {k}"))),
        };
        let n = c.u64()?;
        if n.checked_mul(29).is_none_or(|b| b > (data.len() - c.pos) as u64) {
            return Err(OccupancyError::Truncated);
        }
        let mut cells: Vec<(VoxelIndex, Cell)> = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let idx = VoxelIndex::new(c.u32()?, c.u32()?, c.u32()?);
            let cell = Cell { value: c.f64()?, weight: c.f64()? };
            if c.u8()? != 1 {
                return Err(OccupancyError::Corrupt("record outside domain".into()));
            }
            if !grid.contains_index(idx) {
                return Err(OccupancyError::Corrupt(format!("index {idx:?} outside grid")));
            }
            if !cell.value.is_finite() || !cell.weight.is_finite() {
                return Err(OccupancyError::Corrupt("non-finite value".into()));
            }
            if cells.last().is_some_and(|l| l.0 >= idx) {
                return Err(OccupancyError::Corrupt("records not ascending".into()));
            }
            cells.push((idx, cell));
        }
        if c.pos != data.len() {
            return Err(OccupancyError::Corrupt("trailing bytes".into()));
        }
        Ok(Self { grid, cells })
    }
}

pub(crate) struct ByteCursor<'a> {
    pub data: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], OccupancyError> {
        let end = self.pos.checked_add(n).ok_or(OccupancyError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(OccupancyError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, OccupancyError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, OccupancyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, OccupancyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, OccupancyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeLossParams {
    pub gamma: f64,
    /// Weight of voxels filled only by borrowed points.
    pub delta: f64,
}

impl Default for ShapeLossParams {
    fn default() -> Self {
        Self { gamma: 2.0, delta: 0.2 }
    }
}

impl ShapeLossParams {
    pub fn is_valid(&self) -> bool {
        self.gamma >= 0.0 && self.gamma.is_finite() && self.delta > 0.0 && self.delta <= 1.0
    }
}

/// Rasterizes the assembled shapes (already posed by their boxes) into the
/// mask's domain.
pub fn make_targets(mask: &RegionMask, shapes: &[AssembledShape], params: &ShapeLossParams) -> OccupancyGrid {
    // per voxel: (any native point, any point)
    let mut hit: BTreeMap<VoxelIndex, bool> = BTreeMap::new();
    for s in shapes {
        for (p, borrowed) in s.world_points() {
            let Some(idx) = mask.grid.locate(&p) else { continue };
            if !mask.in_domain(&idx) {
                continue;
            }
            let native = hit.entry(idx).or_insert(false);
            *native |= !borrowed;
        }
    }
    let cells = mask.domain().into_iter().map(|idx| {
        let cell = match hit.get(&idx) {
            Some(true) => Cell { value: 1.0, weight: 1.0 },
            Some(false) => Cell { value: 1.0, weight: params.delta },
            None => Cell { value: 0.0, weight: 1.0 },
        };
        (idx, cell)
    });
    OccupancyGrid { grid: GridKind::Spherical(mask.grid.clone()), cells: cells.collect() }
}

/// Focal term of one voxel, without class balancing.
pub fn focal_term(p_pred: f64, label: bool, gamma: f64) -> f64 {
    let p = clamp_prob(p_pred);
    let p_v = if label { p } else { 1.0 - p };
    -(1.0 - p_v).powf(gamma) * p_v.ln()
}

/// Weighted mean focal term over the domain. Targets with value `>= 0.5`
/// count as occupied.
pub fn shape_loss(
    pred: &OccupancyGrid,
    target: &OccupancyGrid,
    params: &ShapeLossParams,
) -> Result<f64, OccupancyError> {
    if pred.grid != target.grid {
        return Err(OccupancyError::GridMismatch);
    }
    if !pred.same_domain(target) {
        return Err(OccupancyError::DomainMismatch);
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .cells
        .iter()
        .zip(&target.cells)
        .map(|((_, p), (_, t))| t.weight * focal_term(p.value, t.value >= 0.5, params.gamma))
        .sum();
    Ok(sum / target.len() as f64)
}

/// Maps each spherical voxel center into the Cartesian grid and keeps the
/// maximum per Cartesian voxel.
pub fn to_cartesian_probability(pred: &OccupancyGrid, cgrid: &CartesianGrid) -> Result<OccupancyGrid, OccupancyError> {
    let GridKind::Spherical(sgrid) = &pred.grid else {
        return Err(OccupancyError::WrongKind("spherical"));
    };
    let mut best: BTreeMap<VoxelIndex, f64> = BTreeMap::new();
    for &(idx, c) in &pred.cells {
        if let Some(v) = cgrid.voxel_of(&sgrid.center(idx)) {
            let e = best.entry(v).or_insert(c.value);
            *e = e.max(c.value);
        }
    }
    Ok(OccupancyGrid {
        grid: GridKind::Cartesian(cgrid.clone()),
        cells: best.into_iter().map(|(v, value)| (v, Cell { value, weight: 1.0 })).collect(),
    })
}

/// Level 0 is the input; each further level max-pools 2x2x2 blocks of the
/// previous one. `levels` counts level 0.
pub fn maxpool_pyramid(prob: &OccupancyGrid, levels: usize) -> Result<Vec<OccupancyGrid>, OccupancyError> {
    let GridKind::Cartesian(_) = &prob.grid else {
        return Err(OccupancyError::WrongKind("cartesian"));
    };
    let mut out = vec![prob.clone()];
    for _ in 1..levels.max(1) {
        let prev = out.last().expect("level 0 exists");
        let GridKind::Cartesian(g) = &prev.grid else { unreachable!() };
        let coarse = g.coarsened(2);
        let mut best: BTreeMap<VoxelIndex, f64> = BTreeMap::new();
        for &(idx, c) in &prev.cells {
            let up = VoxelIndex::new(idx.i / 2, idx.j / 2, idx.k / 2);
            let e = best.entry(up).or_insert(c.value);
            *e = e.max(c.value);
        }
        out.push(OccupancyGrid {
            grid: GridKind::Cartesian(coarse),
            cells: best.into_iter().map(|(v, value)| (v, Cell { value, weight: 1.0 })).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ObjectKey;
    use crate::boxes::{LabeledBox3D, ObjectClass};
    use crate::geom::PointCloud;
    use crate::occlusion::{analyze_frame, SignalMissParams};
    use std::f64::consts::LN_2;

    fn small_cartesian() -> CartesianGrid {
        CartesianGrid::new([0.0, 4.0], [0.0, 4.0], [0.0, 2.0], [0.5, 0.5, 0.5]).unwrap()
    }

    #[test]
    fn focal_examples() {
        assert!((focal_term(0.5, true, 2.0) - 0.25 * LN_2).abs() < 1e-15);
        assert!(focal_term(1.0 - 1e-7, true, 2.0) < 1e-20);
        assert!((focal_term(0.3, false, 0.0) + (0.7f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_frame_targets_are_zero() {
        let g = SphericalGrid::kitti();
        let p = Point::xyz(10.0, 0.0, -1.0);
        let cloud = PointCloud::new(vec![p]);
        let (mask, _, _) = analyze_frame(&g, &cloud, &[], &SignalMissParams::default());
        let t = make_targets(&mask, &[], &ShapeLossParams::default());
        assert_eq!(t.len(), mask.domain_size());
        assert!(t.cells.iter().all(|(_, c)| c.value == 0.0 && c.weight == 1.0));
        let loss = shape_loss(&t.uniform_like(0.5), &t, &ShapeLossParams::default()).unwrap();
        assert!((loss - 0.25 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn native_point_in_occluded_voxel() {
        let g = SphericalGrid::kitti();
        let b = LabeledBox3D::new([10.0, 0.0, -1.0], [2.0, 2.0, 2.0], 0.0, ObjectClass::Car);
        let p = Point::xyz(9.5, 0.0, -1.0);
        // same ray, farther out
        let behind = Point::xyz(9.5 * 1.12, 0.0, -1.12);
        let cloud = PointCloud::new(vec![p]);
        let (mask, _, _) = analyze_frame(&g, &cloud, &[b], &SignalMissParams::default());
        let shape = AssembledShape {
            target: ObjectKey::new("f", 0),
            class: ObjectClass::Car,
            box3d: b,
            native: vec![b.to_local(&p)],
            borrowed: vec![b.to_local(&behind)],
            borrowed_from: vec![0],
            sources: vec![ObjectKey::new("g", 0)],
        };
        let t = make_targets(&mask, &[shape], &ShapeLossParams::default());
        let v = g.locate(&p).unwrap();
        assert_eq!(t.get(&v), Some(Cell { value: 1.0, weight: 1.0 }));
        let vb = g.locate(&behind).unwrap();
        assert_eq!(t.get(&vb), Some(Cell { value: 1.0, weight: 0.2 }));
        assert_eq!(t.cells.iter().filter(|c| c.1.value == 1.0).count(), 2);
    }

    #[test]
    fn shape_loss_floor_and_mismatch() {
        let g = GridKind::Cartesian(small_cartesian());
        let t = OccupancyGrid::from_cells(
            g.clone(),
            [
                (VoxelIndex::new(0, 0, 0), Cell { value: 1.0, weight: 1.0 }),
                (VoxelIndex::new(1, 0, 0), Cell { value: 0.0, weight: 1.0 }),
                (VoxelIndex::new(2, 0, 0), Cell { value: 1.0, weight: 0.2 }),
            ],
        );
        let loss = shape_loss(&t, &t, &ShapeLossParams::default()).unwrap();
        assert!((0.0..1e-6).contains(&loss));
        let other = OccupancyGrid::from_cells(g, [(VoxelIndex::new(0, 0, 0), Cell { value: 1.0, weight: 1.0 })]);
        assert!(matches!(shape_loss(&other, &t, &ShapeLossParams::default()), Err(OccupancyError::DomainMismatch)));
    }

    #[test]
    fn transfer_examples() {
        let s = SphericalGrid::kitti();
        let c = CartesianGrid::kitti();
        let a = s.locate(&Point::xyz(10.0, 0.0, -1.0)).unwrap();
        let single = OccupancyGrid::from_cells(GridKind::Spherical(s.clone()), [(a, Cell { value: 0.8, weight: 1.0 })]);
        let out = to_cartesian_probability(&single, &c).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.cells[0].1.value, 0.8);
        let coarse = CartesianGrid::new([0.0, 20.0], [-10.0, 10.0], [-5.0, 5.0], [10.0, 10.0, 10.0]).unwrap();
        let next = VoxelIndex::new(a.i + 1, a.j, a.k);
        let two = OccupancyGrid::from_cells(
            GridKind::Spherical(s),
            [(a, Cell { value: 0.3, weight: 1.0 }), (next, Cell { value: 0.9, weight: 1.0 })],
        );
        let out = to_cartesian_probability(&two, &coarse).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.cells[0].1.value, 0.9);
        assert!(matches!(to_cartesian_probability(&out, &coarse), Err(OccupancyError::WrongKind(_))));
    }

    #[test]
    fn pyramid_examples() {
        let g = GridKind::Cartesian(small_cartesian());
        let one = OccupancyGrid::from_cells(g.clone(), [(VoxelIndex::new(5, 3, 1), Cell { value: 0.7, weight: 1.0 })]);
        let levels = maxpool_pyramid(&one, 3).unwrap();
        assert_eq!(levels.len(), 3);
        for l in &levels {
            assert_eq!(l.len(), 1);
            assert_eq!(l.cells[0].1.value, 0.7);
        }
        assert_eq!(levels[2].cells[0].0, VoxelIndex::new(1, 0, 0));
        let GridKind::Cartesian(g0) = &g else { unreachable!() };
        let dense = OccupancyGrid::from_cells(
            g.clone(),
            (0..8).flat_map(|i| {
                (0..8).flat_map(move |j| {
                    (0..4).map(move |k| (VoxelIndex::new(i, j, k), Cell { value: 0.4, weight: 1.0 }))
                })
            }),
        );
        assert_eq!(dense.len() as u64, g0.voxel_count());
        for l in maxpool_pyramid(&dense, 3).unwrap() {
            assert!(l.cells.iter().all(|c| c.1.value == 0.4));
        }
    }

    #[test]
    fn file_round_trip() {
        let g = GridKind::Spherical(SphericalGrid::kitti());
        let grid = OccupancyGrid::from_cells(
            g,
            [
                (VoxelIndex::new(3, 2, 1), Cell { value: 0.25, weight: 0.2 }),
                (VoxelIndex::new(0, 0, 0), Cell { value: 1.0, weight: 1.0 }),
            ],
        );
        let mut bytes = Vec::new();
        grid.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"SMOG");
        assert_eq!(bytes.len(), 4 + 4 + 1 + 3 * 20 + 8 + 2 * 29);
        assert_eq!(OccupancyGrid::read_from(&bytes[..]).unwrap(), grid);
        assert!(matches!(OccupancyGrid::read_from(&bytes[..bytes.len() - 3]), Err(OccupancyError::Truncated)));
    }
}
