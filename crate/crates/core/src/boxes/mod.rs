//! Oriented 3D boxes and the detection box math built on them: IoU, anchor
//! matching, residual encodings, losses and RoI grid geometry.

mod anchors;
mod encoding;
mod iou;
pub mod loss;
mod roi;

pub use anchors::{assign_anchors, AnchorAssignment, AnchorSet, IouKind, MatchThresholds};
pub use encoding::{decode_refine, decode_rpn, encode_refine, encode_rpn, BoxResidual};
pub use iou::{bev_intersection_area, clip_convex, iou_3d, iou_bev, polygon_area};
pub use roi::{roi_local_grid, RoiGrid, RoiGridParams, ShiftConvention};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
    /// Any other labeled category (van, truck, tram, ...). Kept so that such
    /// objects still count as occluders and labeled regions.
    Other,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [Self::Car, Self::Pedestrian, Self::Cyclist, Self::Other];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Car => "Car",
            Self::Pedestrian => "Pedestrian",
            Self::Cyclist => "Cyclist",
            Self::Other => "Other",
        }
    }

    /// Whether objects of this class are mirrored about their middle plane.
    pub fn is_symmetric(&self) -> bool {
        matches!(self, Self::Car | Self::Cyclist)
    }

    pub fn code(&self) -> u8 {
        match self {
            Self::Car => 0,
            Self::Pedestrian => 1,
            Self::Cyclist => 2,
            Self::Other => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Car" => Self::Car,
            "Pedestrian" => Self::Pedestrian,
            "Cyclist" => Self::Cyclist,
            "Other" => Self::Other,
            _ => return Err(format!("unknown class {s:?}")),
        })
    }
}

/// Oriented box in the LiDAR frame. `yaw` rotates the box's length axis away
/// from +x about +z; `l` runs along the heading, `w` across it, `h` is vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox3D {
    pub center: [f64; 3],
    /// `(l, w, h)`.
    pub size: [f64; 3],
    pub yaw: f64,
    pub class: ObjectClass,
    /// KITTI occlusion level (0..=3), when known.
    pub occlusion: Option<u8>,
}

impl LabeledBox3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class: ObjectClass) -> Self {
        Self { center, size, yaw: wrap_angle(yaw), class, occlusion: None }
    }

    pub fn is_valid(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.size.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.yaw.is_finite()
            && self.yaw > -PI
            && self.yaw <= PI
    }

    pub fn l(&self) -> f64 {
        self.size[0]
    }

    pub fn w(&self) -> f64 {
        self.size[1]
    }

    pub fn h(&self) -> f64 {
        self.size[2]
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Same box with every dimension multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut b = *self;
        b.size = [self.size[0] * factor, self.size[1] * factor, self.size[2] * factor];
        b
    }

    /// World point into the box frame (origin at center, +x along heading).
    pub fn to_local(&self, p: &Point) -> Point {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.center[0];
        let dy = p.y - self.center[1];
        Point::new(c * dx + s * dy, -s * dx + c * dy, p.z - self.center[2], p.intensity)
    }

    pub fn to_world(&self, p: &Point) -> Point {
        let (s, c) = self.yaw.sin_cos();
        Point::new(
            c * p.x - s * p.y + self.center[0],
            s * p.x + c * p.y + self.center[1],
            p.z + self.center[2],
            p.intensity,
        )
    }

    /// Containment of a box-frame point; faces count as inside.
    pub fn contains_local(&self, q: &Point) -> bool {
        q.x.abs() <= 0.5 * self.size[0] && q.y.abs() <= 0.5 * self.size[1] && q.z.abs() <= 0.5 * self.size[2]
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.contains_local(&self.to_local(p))
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.size[0], 0.5 * self.size[1]);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| [c * x - s * y + self.center[0], s * x + c * y + self.center[1]])
    }

    pub fn corners(&self) -> [Point; 8] {
        let b = self.bev_corners();
        let (z0, z1) = self.z_extent();
        [
            Point::xyz(b[0][0], b[0][1], z0),
            Point::xyz(b[1][0], b[1][1], z0),
            Point::xyz(b[2][0], b[2][1], z0),
            Point::xyz(b[3][0], b[3][1], z0),
            Point::xyz(b[0][0], b[0][1], z1),
            Point::xyz(b[1][0], b[1][1], z1),
            Point::xyz(b[2][0], b[2][1], z1),
            Point::xyz(b[3][0], b[3][1], z1),
        ]
    }

    pub fn z_extent(&self) -> (f64, f64) {
        (self.center[2] - 0.5 * self.size[2], self.center[2] + 0.5 * self.size[2])
    }

    /// Parameter interval `[t0, t1]` over which the ray `origin + t * dir`
    /// lies inside the box, clipped to `t >= 0`.
    pub fn ray_interval(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64)> {
        let o = self.to_local(&Point::xyz(origin[0], origin[1], origin[2]));
        let (s, c) = self.yaw.sin_cos();
        let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
        let o = [o.x, o.y, o.z];
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let half = 0.5 * self.size[a];
            if d[a] == 0.0 {
                if o[a].abs() > half {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((-half - o[a]) * inv, (half - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Smooth-L1 with unit transition point.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_world_round_trip() {
        let b = LabeledBox3D::new([3.0, -2.0, 0.5], [4.0, 2.0, 1.5], 0.7, ObjectClass::Car);
        let p = Point::new(1.0, 2.0, 3.0, 0.25);
        let q = b.to_world(&b.to_local(&p));
        assert!(p.distance(&q) < 1e-12);
        assert_eq!(q.intensity, 0.25);
    }

    #[test]
    fn yaw_quarter_turn_heading_is_local_x() {
        let b = LabeledBox3D::new([0.0; 3], [4.0, 2.0, 1.5], PI / 2.0, ObjectClass::Car);
        let q = b.to_local(&Point::xyz(0.0, 1.0, 0.0));
        assert!((q.x - 1.0).abs() < 1e-12 && q.y.abs() < 1e-12 && q.z.abs() < 1e-12);
    }

    #[test]
    fn ray_interval_axis_aligned() {
        let b = LabeledBox3D::new([10.0, 0.0, 0.0], [2.0, 2.0, 2.0], 0.0, ObjectClass::Car);
        let (t0, t1) = b.ray_interval([0.0; 3], [1.0, 0.0, 0.0]).unwrap();
        assert!((t0 - 9.0).abs() < 1e-12 && (t1 - 11.0).abs() < 1e-12);
        assert!(b.ray_interval([0.0; 3], [0.0, 1.0, 0.0]).is_none());
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert_eq!(smooth_l1(1.0), 0.5);
    }

    #[test]
    fn yaw_normalized_on_construction() {
        let b = LabeledBox3D::new([0.0; 3], [1.0; 3], -PI, ObjectClass::Car);
        assert_eq!(b.yaw, PI);
        assert!(b.is_valid());
    }
}
