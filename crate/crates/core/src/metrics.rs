//! Occupancy-prediction metrics and shape-miss recovery scenarios.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::AssembledShape;
use crate::boxes::LabeledBox3D;
use crate::geom::{voxelize, Point, PointCloud, VoxelGrid, VoxelIndex};
use crate::occlusion::{cause_wrt_box, Cause, ColumnHits, RegionMask};
use crate::occupancy::{OccupancyError, OccupancyGrid};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// Voxel counts over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 1 with no predicted and no labeled positives, 0 with only the latter.
    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 if self.fn_ == 0 => 1.0,
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        }
    }

    /// 1 with no labeled positives.
    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => 1.0,
            n => self.tp as f64 / n as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// 1 on an empty domain.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 1.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }

    fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub object_coverage: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub boxes_covered: u64,
    pub boxes_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub frames: u64,
    pub rows: Vec<ThresholdRow>,
}

impl OccupancyReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames: {}", self.frames);
        let _ = writeln!(
            s,
            "{:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "threshold", "precision", "recall", "f1", "accuracy", "coverage"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>9.2} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                r.threshold, r.precision, r.recall, r.f1, r.accuracy, r.object_coverage
            );
        }
        s
    }
}

/// Domain-wide confusion plus per-box coverage, summed over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportAccumulator {
    thresholds: Vec<f64>,
    frames: u64,
    confusion: Vec<Confusion>,
    covered: Vec<u64>,
    boxes: u64,
}

impl ReportAccumulator {
    pub fn new(thresholds: &[f64]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            frames: 0,
            confusion: vec![Confusion::default(); thresholds.len()],
            covered: vec![0; thresholds.len()],
            boxes: 0,
        }
    }

    pub fn add_frame(
        &mut self,
        pred: &OccupancyGrid,
        target: &OccupancyGrid,
        boxes: &[LabeledBox3D],
    ) -> Result<(), OccupancyError> {
        if pred.grid != target.grid {
            return Err(OccupancyError::GridMismatch);
        }
        if !pred.same_domain(target) {
            return Err(OccupancyError::DomainMismatch);
        }
        self.frames += 1;
        self.boxes += boxes.len() as u64;
        for (t, &tau) in self.thresholds.iter().enumerate() {
            let c = &mut self.confusion[t];
            let mut positive_centers: Vec<Point> = Vec::new();
            for ((idx, p), (_, y)) in pred.cells.iter().zip(&target.cells) {
                let hit = p.value > tau;
                match (hit, y.value >= 0.5) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, false) => c.tn += 1,
                    (false, true) => c.fn_ += 1,
                }
                if hit && !boxes.is_empty() {
                    positive_centers.push(pred.grid.center(*idx));
                }
            }
            self.covered[t] += boxes.iter().filter(|b| positive_centers.iter().any(|p| b.contains(p))).count() as u64;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ReportAccumulator) {
        assert_eq!(self.thresholds, other.thresholds, "merging reports over different thresholds");
        self.frames += other.frames;
        self.boxes += other.boxes;
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            a.add(b);
        }
        for (a, b) in self.covered.iter_mut().zip(&other.covered) {
            *a += b;
        }
    }

    pub fn finish(&self) -> OccupancyReport {
        let rows = self
            .thresholds
            .iter()
            .zip(&self.confusion)
            .zip(&self.covered)
            .map(|((&threshold, c), &covered)| ThresholdRow {
                threshold,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                accuracy: c.accuracy(),
                object_coverage: if self.boxes == 0 { 1.0 } else { covered as f64 / self.boxes as f64 },
                confusion: *c,
                boxes_covered: covered,
                boxes_total: self.boxes,
            })
            .collect();
        OccupancyReport { frames: self.frames, rows }
    }
}

/// Positives are domain voxels with prediction strictly above the threshold;
/// labels are target values of at least 0.5. A box is covered when the center
/// of some positive voxel lies in it.
pub fn evaluate_occupancy(
    pred: &OccupancyGrid,
    target: &OccupancyGrid,
    boxes: &[LabeledBox3D],
    thresholds: &[f64],
) -> Result<OccupancyReport, OccupancyError> {
    let mut acc = ReportAccumulator::new(thresholds);
    acc.add_frame(pred, target, boxes)?;
    Ok(acc.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecoveryScenario {
    #[serde(rename = "NR")]
    Nr,
    #[serde(rename = "EO")]
    Eo,
    #[serde(rename = "EO+SM")]
    EoSm,
    #[serde(rename = "EO+SM+SO")]
    EoSmSo,
}

impl RecoveryScenario {
    pub const ALL: [Self; 4] = [Self::Nr, Self::Eo, Self::EoSm, Self::EoSmSo];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Nr => "NR",
            Self::Eo => "EO",
            Self::EoSm => "EO+SM",
            Self::EoSmSo => "EO+SM+SO",
        }
    }

    pub fn restores(&self, c: Cause) -> bool {
        match c {
            Cause::ExternalOcclusion => *self != Self::Nr,
            Cause::SignalMiss => matches!(self, Self::EoSm | Self::EoSmSo),
            Cause::SelfOcclusion => *self == Self::EoSmSo,
            Cause::Observed | Cause::None => false,
        }
    }
}

impl fmt::Display for RecoveryScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecoveryScenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown scenario {s:?} (expected NR, EO, EO+SM or EO+SM+SO)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    /// Add the assembled points themselves.
    #[default]
    Points,
    /// Add one point at the center of each restored voxel.
    VoxelCenters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryParams {
    pub intensity: f64,
    pub mode: RecoveryMode,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self { intensity: 0.5, mode: RecoveryMode::Points }
    }
}

/// The input cloud followed by the added points.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCloud {
    pub cloud: PointCloud,
    /// Set for every appended point.
    pub added: Vec<bool>,
}

impl RecoveredCloud {
    pub fn added_points(&self) -> impl Iterator<Item = &Point> {
        self.cloud.iter().zip(&self.added).filter(|(_, a)| **a).map(|(p, _)| p)
    }
}

/// Adds assembled-shape points that fall in voxels whose cause the scenario
/// restores. A voxel's cause is taken with respect to the box of the shape
/// the point belongs to, so voxels straddling a box face count as well.
pub fn recover_scenario(
    cloud: &PointCloud,
    shapes: &[AssembledShape],
    mask: &RegionMask,
    scenario: RecoveryScenario,
    params: &RecoveryParams,
) -> RecoveredCloud {
    let mut points = cloud.points.clone();
    let mut added = vec![false; points.len()];
    if scenario != RecoveryScenario::Nr && !shapes.is_empty() {
        let grid = &mask.grid;
        let vox = voxelize(grid, cloud);
        let hits = ColumnHits::new(grid, &vox);
        let mut seen: BTreeSet<VoxelIndex> = BTreeSet::new();
        for s in shapes {
            for (p, _) in s.world_points() {
                let Some(idx) = grid.locate(&p) else { continue };
                let cause =
                    cause_wrt_box(grid, &mask.first_return, &mask.signal_miss, &hits, &vox, cloud, &s.box3d, idx);
                if !scenario.restores(cause) {
                    continue;
                }
                let q = match params.mode {
                    RecoveryMode::Points => Point::new(p.x, p.y, p.z, params.intensity),
                    RecoveryMode::VoxelCenters => {
                        if !seen.insert(idx) {
                            continue;
                        }
                        let c = grid.center(idx);
                        Point::new(c.x, c.y, c.z, params.intensity)
                    }
                };
                points.push(q);
                added.push(true);
            }
        }
    }
    RecoveredCloud { cloud: PointCloud::new(points), added }
}
