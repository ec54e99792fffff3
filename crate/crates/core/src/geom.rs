//! Points, spherical/Cartesian conversions and the two voxel lattices.
//!
//! Both lattices are built from three [`Axis`] values. An axis is a half-open
//! sequence of equal bins `[lo + i*size, lo + (i+1)*size)`; the bin count is the
//! ceiling of `extent / size`, so the effective upper edge may sit above the
//! requested one. A coordinate equal to the effective upper edge belongs to the
//! last bin.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// A single LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub const fn xyz(x: f64, y: f64, z: f64) -> Self {
        Self::new(x, y, z, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Ordered set of returns. Order is preserved through every transform.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// `(r, phi, theta)`: range, azimuth in `(-pi, pi]`, elevation in `[-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub r: f64,
    pub phi: f64,
    pub theta: f64,
}

impl SphericalCoord {
    pub fn as_array(&self) -> [f64; 3] {
        [self.r, self.phi, self.theta]
    }
}

pub fn to_spherical(p: &Point) -> SphericalCoord {
    let rho = p.x.hypot(p.y);
    let r = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    let mut phi = p.y.atan2(p.x);
    // atan2(-0.0, x<0) yields -pi; the azimuth interval is open at -pi
    if phi <= -PI {
        phi = PI;
    }
    SphericalCoord { r, phi, theta: p.z.atan2(rho) }
}

/// Inverse of [`to_spherical`]; intensity of the result is zero.
pub fn to_cartesian(s: &SphericalCoord) -> Point {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Point::xyz(s.r * ct * cp, s.r * ct * sp, s.r * st)
}

/// Lattice coordinate. Axis order is `(r, phi, theta)` on spherical grids and
/// `(x, y, z)` on Cartesian ones. Ordering is lexicographic on `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl VoxelIndex {
    pub const fn new(i: u32, j: u32, k: u32) -> Self {
        Self { i, j, k }
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.i, self.j, self.k]
    }
}

impl From<[u32; 3]> for VoxelIndex {
    fn from(a: [u32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("axis {axis}: voxel size must be positive and finite, got {size}")]
    BadSize { axis: usize, size: f64 },
    #[error("axis {axis}: range [{lo}, {hi}] is empty or not finite")]
    BadRange { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis}: bin count {bins} does not fit the index type")]
    TooManyBins { axis: usize, bins: u64 },
}

/// One evenly binned axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub size: f64,
    pub bins: u32,
}

/// Relative slack when turning `extent / size` into a bin count, so that
/// ranges meant to be integral multiples of the size do not gain a sliver bin.
const BIN_COUNT_SLACK: f64 = 1e-9;

impl Axis {
    pub fn from_range(axis: usize, lo: f64, hi: f64, size: f64) -> Result<Self, GridError> {
        if !(size.is_finite() && size > 0.0) {
            return Err(GridError::BadSize { axis, size });
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(GridError::BadRange { axis, lo, hi });
        }
        let ratio = (hi - lo) / size;
        let bins = (ratio - BIN_COUNT_SLACK * ratio.max(1.0)).ceil().max(1.0);
        if bins > u32::MAX as f64 / 2.0 {
            return Err(GridError::TooManyBins { axis, bins: bins as u64 });
        }
        Ok(Self { lo, size, bins: bins as u32 })
    }

    pub fn from_parts(axis: usize, lo: f64, size: f64, bins: u32) -> Result<Self, GridError> {
        if !(size.is_finite() && size > 0.0) {
            return Err(GridError::BadSize { axis, size });
        }
        if !lo.is_finite() || bins == 0 {
            return Err(GridError::BadRange { axis, lo, hi: lo + size * bins as f64 });
        }
        Ok(Self { lo, size, bins })
    }

    /// Effective upper edge, `lo + bins * size`.
    pub fn hi(&self) -> f64 {
        self.lo + self.size * self.bins as f64
    }

    pub fn bin_of(&self, v: f64) -> Option<u32> {
        if v.is_nan() || v < self.lo {
            return None;
        }
        let hi = self.hi();
        if v > hi {
            return None;
        }
        let b = ((v - self.lo) / self.size).floor();
        if b >= self.bins as f64 {
            // only reachable at (or within rounding of) the upper edge
            return Some(self.bins - 1);
        }
        Some(b as u32)
    }

    pub fn center(&self, b: u32) -> f64 {
        self.lo + (b as f64 + 0.5) * self.size
    }

    pub fn coarsened(&self, factor: u32) -> Self {
        Self { lo: self.lo, size: self.size * factor as f64, bins: self.bins.div_ceil(factor) }
    }
}

/// Shared behaviour of the two lattices.
pub trait VoxelGrid {
    fn axes(&self) -> &[Axis; 3];

    /// Cartesian location of a voxel's center.
    fn center(&self, idx: VoxelIndex) -> Point;

    /// Voxel containing a Cartesian point, if any.
    fn locate(&self, p: &Point) -> Option<VoxelIndex>;

    fn dims(&self) -> [u32; 3] {
        let a = self.axes();
        [a[0].bins, a[1].bins, a[2].bins]
    }

    fn voxel_count(&self) -> u64 {
        self.dims().iter().map(|&d| d as u64).product()
    }

    /// Voxel of a coordinate triple expressed in the grid's own axes.
    fn index_of(&self, c: [f64; 3]) -> Option<VoxelIndex> {
        let a = self.axes();
        Some(VoxelIndex::new(a[0].bin_of(c[0])?, a[1].bin_of(c[1])?, a[2].bin_of(c[2])?))
    }

    fn contains_index(&self, idx: VoxelIndex) -> bool {
        let d = self.dims();
        idx.i < d[0] && idx.j < d[1] && idx.k < d[2]
    }

    fn axis_centers(&self, idx: VoxelIndex) -> [f64; 3] {
        let a = self.axes();
        [a[0].center(idx.i), a[1].center(idx.j), a[2].center(idx.k)]
    }
}

/// Evenly spaced `(r, phi, theta)` lattice. Angles are stored in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalGrid {
    axes: [Axis; 3],
}

impl SphericalGrid {
    /// Builds a grid from ranges given in meters and degrees, the unit
    /// convention of configuration files.
    pub fn from_degrees(
        r_range: [f64; 2],
        phi_range_deg: [f64; 2],
        theta_range_deg: [f64; 2],
        voxel: [f64; 3],
    ) -> Result<Self, GridError> {
        Self::from_radians(
            r_range,
            [phi_range_deg[0].to_radians(), phi_range_deg[1].to_radians()],
            [theta_range_deg[0].to_radians(), theta_range_deg[1].to_radians()],
            [voxel[0], voxel[1].to_radians(), voxel[2].to_radians()],
        )
    }

    pub fn from_radians(
        r_range: [f64; 2],
        phi_range: [f64; 2],
        theta_range: [f64; 2],
        voxel: [f64; 3],
    ) -> Result<Self, GridError> {
        Ok(Self {
            axes: [
                Axis::from_range(0, r_range[0], r_range[1], voxel[0])?,
                Axis::from_range(1, phi_range[0], phi_range[1], voxel[1])?,
                Axis::from_range(2, theta_range[0], theta_range[1], voxel[2])?,
            ],
        })
    }

    pub fn from_axes(axes: [Axis; 3]) -> Self {
        Self { axes }
    }

    /// KITTI lattice: (0.32 m, 0.52 deg, 0.42 deg) over r [2.24, 70.72] m,
    /// phi [-40.69, 40.69] deg, theta [-16.60, 4.00] deg.
    pub fn kitti() -> Self {
        Self::from_degrees([2.24, 70.72], [-40.69, 40.69], [-16.60, 4.00], [0.32, 0.52, 0.42])
            .expect("static grid is valid")
    }

    /// Waymo lattice: (0.32 m, 0.81 deg, 0.31 deg) over r [2.94, 74.00] m,
    /// phi [-180, 180] deg, theta [-33.80, 6.00] deg.
    pub fn waymo() -> Self {
        Self::from_degrees([2.94, 74.00], [-180.0, 180.0], [-33.80, 6.00], [0.32, 0.81, 0.31])
            .expect("static grid is valid")
    }

    pub fn r_axis(&self) -> &Axis {
        &self.axes[0]
    }

    pub fn phi_axis(&self) -> &Axis {
        &self.axes[1]
    }

    pub fn theta_axis(&self) -> &Axis {
        &self.axes[2]
    }

    /// Number of angular columns, `n_phi * n_theta`.
    pub fn column_count(&self) -> usize {
        self.axes[1].bins as usize * self.axes[2].bins as usize
    }

    pub fn column_id(&self, j: u32, k: u32) -> usize {
        j as usize * self.axes[2].bins as usize + k as usize
    }

    pub fn column_of_id(&self, id: usize) -> (u32, u32) {
        let nk = self.axes[2].bins as usize;
        ((id / nk) as u32, (id % nk) as u32)
    }

    /// True when the azimuth axis covers the full circle, so that the first and
    /// last phi bins are neighbours.
    pub fn phi_wraps(&self) -> bool {
        let a = &self.axes[1];
        a.size * a.bins as f64 >= 2.0 * PI - 1e-9
    }

    pub fn voxel_of(&self, s: &SphericalCoord) -> Option<VoxelIndex> {
        self.index_of(s.as_array())
    }

    pub fn center_spherical(&self, idx: VoxelIndex) -> SphericalCoord {
        let [r, phi, theta] = self.axis_centers(idx);
        SphericalCoord { r, phi, theta }
    }

    /// Unit direction of a column's central ray.
    pub fn column_direction(&self, j: u32, k: u32) -> [f64; 3] {
        let p = to_cartesian(&SphericalCoord { r: 1.0, phi: self.axes[1].center(j), theta: self.axes[2].center(k) });
        [p.x, p.y, p.z]
    }
}

impl VoxelGrid for SphericalGrid {
    fn axes(&self) -> &[Axis; 3] {
        &self.axes
    }

    fn center(&self, idx: VoxelIndex) -> Point {
        to_cartesian(&self.center_spherical(idx))
    }

    fn locate(&self, p: &Point) -> Option<VoxelIndex> {
        self.voxel_of(&to_spherical(p))
    }
}

/// Evenly spaced `(x, y, z)` lattice in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    axes: [Axis; 3],
}

impl CartesianGrid {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], z_range: [f64; 2], voxel: [f64; 3]) -> Result<Self, GridError> {
        Ok(Self {
            axes: [
                Axis::from_range(0, x_range[0], x_range[1], voxel[0])?,
                Axis::from_range(1, y_range[0], y_range[1], voxel[1])?,
                Axis::from_range(2, z_range[0], z_range[1], voxel[2])?,
            ],
        })
    }

    pub fn from_axes(axes: [Axis; 3]) -> Self {
        Self { axes }
    }

    /// The usual KITTI detection volume at 0.05 x 0.05 x 0.1 m.
    pub fn kitti() -> Self {
        Self::new([0.0, 70.4], [-40.0, 40.0], [-3.0, 1.0], [0.05, 0.05, 0.1]).expect("static grid is valid")
    }

    /// Grid of `factor`-times larger voxels sharing the same origin.
    pub fn coarsened(&self, factor: u32) -> Self {
        Self { axes: [self.axes[0].coarsened(factor), self.axes[1].coarsened(factor), self.axes[2].coarsened(factor)] }
    }

    pub fn voxel_of(&self, p: &Point) -> Option<VoxelIndex> {
        self.index_of(p.coords())
    }
}

impl VoxelGrid for CartesianGrid {
    fn axes(&self) -> &[Axis; 3] {
        &self.axes
    }

    fn center(&self, idx: VoxelIndex) -> Point {
        let [x, y, z] = self.axis_centers(idx);
        Point::xyz(x, y, z)
    }

    fn locate(&self, p: &Point) -> Option<VoxelIndex> {
        self.voxel_of(p)
    }
}

/// Contents of one non-empty voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCell {
    /// Indices into the source cloud, ascending.
    pub points: Vec<usize>,
    /// Mean of x, y, z and intensity over the voxel's points.
    pub mean: Point,
    /// Smallest range among the voxel's points.
    pub min_r: f64,
}

/// Result of binning a cloud into a spherical grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Voxelization {
    pub voxels: BTreeMap<VoxelIndex, VoxelCell>,
    /// Indices of points outside the grid; they stay in the frame but are not binned.
    pub out_of_range: Vec<usize>,
}

impl Voxelization {
    pub fn is_occupied(&self, idx: &VoxelIndex) -> bool {
        self.voxels.contains_key(idx)
    }

    pub fn binned_points(&self) -> usize {
        self.voxels.values().map(|c| c.points.len()).sum()
    }
}

pub fn voxelize(grid: &SphericalGrid, cloud: &PointCloud) -> Voxelization {
    let mut voxels: BTreeMap<VoxelIndex, VoxelCell> = BTreeMap::new();
    let mut sums: BTreeMap<VoxelIndex, [f64; 4]> = BTreeMap::new();
    let mut out_of_range = Vec::new();
    for (n, p) in cloud.points.iter().enumerate() {
        let s = to_spherical(p);
        match grid.voxel_of(&s) {
            Some(idx) => {
                let cell = voxels.entry(idx).or_insert_with(|| VoxelCell {
                    points: Vec::new(),
                    mean: Point::default(),
                    min_r: f64::INFINITY,
                });
                cell.points.push(n);
                cell.min_r = cell.min_r.min(s.r);
                let acc = sums.entry(idx).or_insert([0.0; 4]);
                acc[0] += p.x;
                acc[1] += p.y;
                acc[2] += p.z;
                acc[3] += p.intensity;
            }
            None => out_of_range.push(n),
        }
    }
    for (idx, cell) in voxels.iter_mut() {
        let acc = sums[idx];
        let n = cell.points.len() as f64;
        cell.mean = Point::new(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n);
    }
    Voxelization { voxels, out_of_range }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}
