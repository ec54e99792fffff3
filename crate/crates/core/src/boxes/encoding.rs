use serde::{Deserialize, Serialize};

use super::LabeledBox3D;
use crate::geom::wrap_angle;

/// Encoded box offsets `(x, y, z, w, l, h, theta)` relative to a reference
/// box (an anchor for the RPN, a proposal for refinement).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxResidual {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
}

impl BoxResidual {
    pub fn to_array(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.w, self.l, self.h, self.theta]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self { x: a[0], y: a[1], z: a[2], w: a[3], l: a[4], h: a[5], theta: a[6] }
    }

    /// The six location/size components, without the angle.
    pub fn location_size(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.w, self.l, self.h]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn encode(gt: &LabeledBox3D, reference: &LabeledBox3D) -> BoxResidual {
    let diag = reference.l().hypot(reference.w());
    BoxResidual {
        x: (gt.center[0] - reference.center[0]) / diag,
        y: (gt.center[1] - reference.center[1]) / diag,
        z: (gt.center[2] - reference.center[2]) / reference.h(),
        w: (gt.w() / reference.w()).ln(),
        l: (gt.l() / reference.l()).ln(),
        h: (gt.h() / reference.h()).ln(),
        theta: gt.yaw - reference.yaw,
    }
}

fn decode(res: &BoxResidual, reference: &LabeledBox3D) -> LabeledBox3D {
    let diag = reference.l().hypot(reference.w());
    let mut b = LabeledBox3D::new(
        [
            res.x * diag + reference.center[0],
            res.y * diag + reference.center[1],
            res.z * reference.h() + reference.center[2],
        ],
        [res.l.exp() * reference.l(), res.w.exp() * reference.w(), res.h.exp() * reference.h()],
        wrap_angle(res.theta + reference.yaw),
        reference.class,
    );
    b.occlusion = reference.occlusion;
    b
}

/// Residual of a ground-truth box against an anchor. Centers are scaled by the
/// anchor's BEV diagonal (x, y) and height (z); sizes are log ratios.
pub fn encode_rpn(gt: &LabeledBox3D, anchor: &LabeledBox3D) -> BoxResidual {
    encode(gt, anchor)
}

pub fn decode_rpn(res: &BoxResidual, anchor: &LabeledBox3D) -> LabeledBox3D {
    decode(res, anchor)
}

/// Residual of a ground-truth box against a proposal.
pub fn encode_refine(gt: &LabeledBox3D, proposal: &LabeledBox3D) -> BoxResidual {
    encode(gt, proposal)
}

pub fn decode_refine(res: &BoxResidual, proposal: &LabeledBox3D) -> LabeledBox3D {
    decode(res, proposal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::ObjectClass;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn bx(c: [f64; 3], s: [f64; 3], yaw: f64) -> LabeledBox3D {
        LabeledBox3D::new(c, s, yaw, ObjectClass::Car)
    }

    #[test]
    fn identity_is_zero() {
        let a = bx([1.0, 2.0, -1.0], [4.0, 2.0, 1.5], 0.4);
        assert_eq!(encode_rpn(&a, &a), BoxResidual::default());
        assert_eq!(encode_refine(&a, &a), BoxResidual::default());
    }

    #[test]
    fn x_offset_scaled_by_diagonal() {
        let anchor = bx([0.0; 3], [4.0, 2.0, 1.5], 0.0);
        let gt = bx([1.0, 0.0, 0.0], [4.0, 2.0, 1.5], 0.0);
        let r = encode_rpn(&gt, &anchor);
        assert!((r.x - 1.0 / 20f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.y, 0.0);
        let r = encode_refine(&gt, &anchor);
        assert!((r.x - 1.0 / 20f64.sqrt()).abs() < 1e-15);
    }

    fn angle_gap(a: f64, b: f64) -> f64 {
        wrap_angle(a - b).abs()
    }

    proptest! {
        #[test]
        fn round_trip(
            gx in -50.0f64..50.0, gy in -50.0f64..50.0, gz in -3.0f64..2.0,
            gl in 0.3f64..8.0, gw in 0.3f64..3.0, gh in 0.3f64..3.0, gyaw in -PI..PI,
            ax in -50.0f64..50.0, ay in -50.0f64..50.0, az in -3.0f64..2.0,
            al in 0.3f64..8.0, aw in 0.3f64..3.0, ah in 0.3f64..3.0, ayaw in -PI..PI,
        ) {
            let g = bx([gx, gy, gz], [gl, gw, gh], gyaw);
            let a = bx([ax, ay, az], [al, aw, ah], ayaw);
            for (enc, dec) in [
                (encode_rpn as fn(&_, &_) -> _, decode_rpn as fn(&_, &_) -> _),
                (encode_refine, decode_refine),
            ] {
                let back = dec(&enc(&g, &a), &a);
                for n in 0..3 {
                    prop_assert!((back.center[n] - g.center[n]).abs() < 1e-9);
                    prop_assert!((back.size[n] - g.size[n]).abs() < 1e-9);
                }
                prop_assert!(angle_gap(back.yaw, g.yaw) < 1e-9);
            }
        }
    }
}
