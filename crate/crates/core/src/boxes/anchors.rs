use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::{iou_3d, iou_bev, LabeledBox3D, ObjectClass};

/// IoU thresholds for anchor matching. An anchor is foreground above `fg`,
/// background below `bg`, and ignored in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholds {
    pub fg: f64,
    pub bg: f64,
}

impl MatchThresholds {
    pub fn new(fg: f64, bg: f64) -> Option<Self> {
        (0.0 <= bg && bg < fg && fg <= 1.0).then_some(Self { fg, bg })
    }

    /// Cars use 0.6 / 0.45; pedestrians and cyclists 0.5 / 0.35.
    pub fn kitti(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Car | ObjectClass::Other => Self { fg: 0.6, bg: 0.45 },
            ObjectClass::Pedestrian | ObjectClass::Cyclist => Self { fg: 0.5, bg: 0.35 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum IouKind {
    #[default]
    ThreeD,
    Bev,
}

impl IouKind {
    pub fn eval(&self, a: &LabeledBox3D, b: &LabeledBox3D) -> f64 {
        match self {
            Self::ThreeD => iou_3d(a, b),
            Self::Bev => iou_bev(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorAssignment {
    Foreground(usize),
    Background,
    Ignored,
}

impl AnchorAssignment {
    pub fn is_foreground(&self) -> bool {
        matches!(self, Self::Foreground(_))
    }
}

/// Per-class anchors: one size, yaws 0 and pi/2, on a regular BEV lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub class: ObjectClass,
    /// `(l, w, h)`.
    pub size: [f64; 3],
    pub z_center: f64,
    pub yaws: Vec<f64>,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub stride: f64,
}

impl AnchorSet {
    /// KITTI-average object sizes on a 0.4 m lattice over the usual volume.
    pub fn kitti(class: ObjectClass) -> Self {
        let (size, z_center) = match class {
            ObjectClass::Car | ObjectClass::Other => ([3.9, 1.6, 1.56], -1.0),
            ObjectClass::Pedestrian => ([0.8, 0.6, 1.73], -0.6),
            ObjectClass::Cyclist => ([1.76, 0.6, 1.73], -0.6),
        };
        Self {
            class,
            size,
            z_center,
            yaws: vec![0.0, FRAC_PI_2],
            x_range: [0.0, 70.4],
            y_range: [-40.0, 40.0],
            stride: 0.4,
        }
    }

    /// Anchor boxes in (x, y, yaw) order, cell centers of the lattice.
    pub fn generate(&self) -> Vec<LabeledBox3D> {
        let nx = ((self.x_range[1] - self.x_range[0]) / self.stride).round() as usize;
        let ny = ((self.y_range[1] - self.y_range[0]) / self.stride).round() as usize;
        let mut out = Vec::with_capacity(nx * ny * self.yaws.len());
        for ix in 0..nx {
            let x = self.x_range[0] + (ix as f64 + 0.5) * self.stride;
            for iy in 0..ny {
                let y = self.y_range[0] + (iy as f64 + 0.5) * self.stride;
                for &yaw in &self.yaws {
                    out.push(LabeledBox3D::new([x, y, self.z_center], self.size, yaw, self.class));
                }
            }
        }
        out
    }
}

/// Matches anchors to ground truth of the same class.
///
/// With `claim_best` set, every ground-truth box also takes its single best
/// anchor (lowest index on ties) as foreground, even when that IoU is under
/// the threshold, as long as it is positive.
pub fn assign_anchors<F>(
    anchors: &[LabeledBox3D],
    gts: &[LabeledBox3D],
    thresholds: F,
    kind: IouKind,
    claim_best: bool,
) -> Vec<AnchorAssignment>
where
    F: Fn(ObjectClass) -> MatchThresholds,
{
    let mut out = Vec::with_capacity(anchors.len());
    let mut best_for_gt: Vec<(f64, Option<usize>)> = vec![(0.0, None); gts.len()];
    for (ai, a) in anchors.iter().enumerate() {
        let mut best = (0.0f64, None);
        for (gi, g) in gts.iter().enumerate() {
            if g.class != a.class {
                continue;
            }
            let v = kind.eval(a, g);
            if best.1.is_none() || v > best.0 {
                best = (v, Some(gi));
            }
            if v > best_for_gt[gi].0 {
                best_for_gt[gi] = (v, Some(ai));
            }
        }
        let t = thresholds(a.class);
        out.push(match best {
            (v, Some(gi)) if v > t.fg => AnchorAssignment::Foreground(gi),
            (v, _) if v < t.bg => AnchorAssignment::Background,
            _ => AnchorAssignment::Ignored,
        });
    }
    if claim_best {
        for (gi, (_, anchor)) in best_for_gt.into_iter().enumerate() {
            if let Some(ai) = anchor {
                out[ai] = AnchorAssignment::Foreground(gi);
            }
        }
    }
    out
}
