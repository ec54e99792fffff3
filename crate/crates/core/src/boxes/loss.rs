//! Detection losses: RPN (focal classification, sine angle, residual
//! regression, direction bin) and proposal refinement (IoU-guided confidence,
//! residual regression), plus their weighted total.

use serde::{Deserialize, Serialize};

use super::{smooth_l1, AnchorAssignment, BoxResidual};

/// Lower/upper clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Smooth-L1 of `sin(pred - target)`; blind to a difference of pi.
pub fn angle_loss(theta_pred: f64, theta_target: f64) -> f64 {
    smooth_l1((theta_pred - theta_target).sin())
}

/// Alpha-balanced focal loss on a foreground score.
pub fn detection_focal(p_pred: f64, foreground: bool, alpha: f64, gamma: f64) -> f64 {
    let p = clamp_prob(p_pred);
    let (p_t, alpha_t) = if foreground { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -alpha_t * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// IoU-driven confidence target: 0 up to 0.25, linear `2*iou - 0.5` up to
/// 0.75, then 1.
pub fn confidence_target(iou: f64) -> f64 {
    if iou > 0.75 {
        1.0
    } else if iou > 0.25 {
        2.0 * iou - 0.5
    } else {
        0.0
    }
}

/// Binary cross-entropy with a soft target.
pub fn binary_ce(p_pred: f64, target: f64) -> f64 {
    let p = clamp_prob(p_pred);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Two direction bins split at zero of the encoded angle.
pub fn direction_bin(theta_t: f64) -> usize {
    usize::from(theta_t >= 0.0)
}

pub fn softmax_ce(logits: [f64; 2], target: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[target]
}

fn regression_loss(pred: &BoxResidual, target: &BoxResidual) -> f64 {
    pred.location_size().iter().zip(target.location_size()).map(|(p, t)| smooth_l1(p - t)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpnLossParams {
    pub alpha: f64,
    pub gamma: f64,
    pub box_weight: f64,
    pub dir_weight: f64,
}

impl Default for RpnLossParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0, box_weight: 2.0, dir_weight: 0.2 }
    }
}

/// One anchor's prediction and target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSample {
    pub assignment: AnchorAssignment,
    pub score: f64,
    pub pred: BoxResidual,
    pub target: BoxResidual,
    pub dir_logits: [f64; 2],
}

/// Mean over sampled (non-ignored) anchors. An empty sample set gives zero.
pub fn rpn_loss(batch: &[AnchorSample], params: &RpnLossParams) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in batch {
        let fg = match s.assignment {
            AnchorAssignment::Ignored => continue,
            AnchorAssignment::Foreground(_) => true,
            AnchorAssignment::Background => false,
        };
        n += 1;
        let mut l = detection_focal(s.score, fg, params.alpha, params.gamma);
        if fg {
            let geo = angle_loss(s.pred.theta, s.target.theta) + regression_loss(&s.pred, &s.target);
            let dir = softmax_ce(s.dir_logits, direction_bin(s.target.theta));
            l += params.box_weight * geo + params.dir_weight * dir;
        }
        sum += l;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalSample {
    pub score: f64,
    /// IoU of the proposal with its ground-truth box.
    pub iou: f64,
    pub pred: BoxResidual,
    pub target: BoxResidual,
}

/// Proposals at or above this IoU receive regression loss.
pub const REFINE_REG_IOU: f64 = 0.55;

pub fn refine_loss(batch: &[ProposalSample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let sum: f64 = batch
        .iter()
        .map(|s| {
            let mut l = binary_ce(s.score, confidence_target(s.iou));
            if s.iou >= REFINE_REG_IOU {
                l += angle_loss(s.pred.theta, s.target.theta) + regression_loss(&s.pred, &s.target);
            }
            l
        })
        .sum();
    sum / batch.len() as f64
}

pub const SHAPE_LOSS_WEIGHT: f64 = 0.3;

pub fn total_loss(shape: f64, rpn: f64, refine: f64) -> f64 {
    SHAPE_LOSS_WEIGHT * shape + rpn + refine
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    #[test]
    fn angle_loss_values() {
        assert_eq!(angle_loss(0.3, 0.3), 0.0);
        assert!(angle_loss(0.3 + PI, 0.3) < 1e-30);
        assert!((angle_loss(PI / 6.0, 0.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn focal_closed_forms() {
        assert!((detection_focal(0.5, true, 0.25, 2.0) - 0.25 * 0.25 * LN_2).abs() < 1e-15);
        assert!(detection_focal(1.0, true, 0.25, 2.0) < 1e-20);
        assert!((detection_focal(0.5, false, 0.25, 2.0) - 0.75 * 0.25 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn confidence_target_branches() {
        assert_eq!(confidence_target(0.8), 1.0);
        assert_eq!(confidence_target(0.5), 0.5);
        assert_eq!(confidence_target(0.25), 0.0);
        assert_eq!(confidence_target(0.75), 1.0);
        assert_eq!(confidence_target(0.0), 0.0);
    }

    #[test]
    fn total_loss_weights() {
        assert_eq!(total_loss(0.0, 0.0, 0.0), 0.0);
        assert!((total_loss(1.0, 2.0, 3.0) - 5.3).abs() < 1e-15);
        assert!((total_loss(2.0, 1.0, 3.0) - total_loss(1.0, 2.0, 3.0)).abs() > 0.1);
        assert_eq!(total_loss(1.0, 2.0, 2.0), total_loss(1.0, 2.0, 2.0));
    }

    #[test]
    fn softmax_ce_is_stable() {
        assert!(softmax_ce([1000.0, -1000.0], 0) < 1e-300);
        assert!((softmax_ce([0.0, 0.0], 1) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn rpn_background_only_is_classification() {
        let r = BoxResidual::default();
        let batch: Vec<_> = [0.1, 0.3, 0.7]
            .iter()
            .map(|&p| AnchorSample {
                assignment: AnchorAssignment::Background,
                score: p,
                pred: BoxResidual { x: 5.0, ..r },
                target: r,
                dir_logits: [0.0, 3.0],
            })
            .collect();
        let expect: f64 = [0.1, 0.3, 0.7].iter().map(|&p| detection_focal(p, false, 0.25, 2.0)).sum::<f64>() / 3.0;
        assert!((rpn_loss(&batch, &RpnLossParams::default()) - expect).abs() < 1e-15);
    }

    #[test]
    fn rpn_perfect_predictions() {
        let t = BoxResidual { x: 0.1, y: -0.2, z: 0.05, w: 0.1, l: -0.1, h: 0.0, theta: 0.3 };
        let batch = [
            AnchorSample {
                assignment: AnchorAssignment::Foreground(0),
                score: 1.0,
                pred: t,
                target: t,
                dir_logits: [-50.0, 50.0],
            },
            AnchorSample {
                assignment: AnchorAssignment::Background,
                score: 0.0,
                pred: t,
                target: t,
                dir_logits: [0.0, 0.0],
            },
            AnchorSample {
                assignment: AnchorAssignment::Ignored,
                score: 0.5,
                pred: t,
                target: t,
                dir_logits: [0.0, 0.0],
            },
        ];
        assert!(rpn_loss(&batch, &RpnLossParams::default()) < 1e-20);
        assert_eq!(rpn_loss(&[], &RpnLossParams::default()), 0.0);
    }

    #[test]
    fn refine_perfect_and_classification_only() {
        let t = BoxResidual { x: 0.1, theta: -0.2, ..Default::default() };
        let perfect = [ProposalSample { score: 1.0, iou: 0.9, pred: t, target: t }];
        assert!(refine_loss(&perfect) < 2e-7);
        let low = [ProposalSample { score: 0.3, iou: 0.5, pred: BoxResidual { x: 9.0, ..t }, target: t }];
        assert!((refine_loss(&low) - binary_ce(0.3, 0.5)).abs() < 1e-15);
    }
}
