//! Per-frame stages shared by the subcommands.

use rayon::prelude::*;
use shapemiss::assembly::{
    assemble, extract_objects, prepare, select_sources, AssembledShape, IndexedObject, ObjectInstance, SourceMatch,
};
use shapemiss::dataio::FrameBundle;
use shapemiss::geom::Voxelization;
use shapemiss::occlusion::{analyze_frame, cause_wrt_box, ColumnHits, RegionMask};
use shapemiss::occupancy::{make_targets, OccupancyGrid};
use shapemiss::{Point, SphericalGrid, VoxelGrid};

use crate::config::PipelineConfig;

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub grid: SphericalGrid,
}

/// Region analysis of one frame.
pub struct Analysis {
    pub mask: RegionMask,
    pub vox: Voxelization,
    /// Boxes without any voxel inside.
    pub empty_boxes: Vec<usize>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, crate::config::ConfigError> {
        let grid = cfg.spherical_grid()?;
        Ok(Self { cfg, grid })
    }

    pub fn analyze(&self, frame: &FrameBundle) -> Analysis {
        let (mask, vox, empty_boxes) =
            analyze_frame(&self.grid, &frame.cloud, &frame.boxes, &self.cfg.signal_miss_params());
        Analysis { mask, vox, empty_boxes }
    }

    /// Prepared, indexed source bank: every object of `frames` plus `extra`.
    pub fn build_bank<'a>(
        &self,
        frames: impl IntoIterator<Item = &'a FrameBundle>,
        extra: &[ObjectInstance],
    ) -> Vec<IndexedObject> {
        let h = self.cfg.heuristic();
        let mut objects: Vec<ObjectInstance> =
            frames.into_iter().flat_map(|f| extract_objects(&f.id, &f.cloud, &f.boxes).0).collect();
        objects.extend(extra.iter().cloned());
        objects.par_iter().map(|o| IndexedObject::new(prepare(o, &h), &h)).collect()
    }

    /// One assembled shape per labeled box, in box order.
    pub fn assemble_frame(
        &self,
        frame: &FrameBundle,
        analysis: &Analysis,
        bank: &[IndexedObject],
    ) -> Vec<(AssembledShape, Vec<SourceMatch>)> {
        let h = self.cfg.heuristic();
        let (targets, _) = extract_objects(&frame.id, &frame.cloud, &frame.boxes);
        let hits = self.cfg.assembly.strict_fill.then(|| ColumnHits::new(&self.grid, &analysis.vox));
        targets
            .par_iter()
            .map(|t| {
                let prepared = IndexedObject::new(prepare(t, &h), &h);
                let picks = select_sources(&prepared, bank, &h);
                let sources: Vec<&ObjectInstance> = picks.iter().map(|m| &bank[m.index].object).collect();
                let shape = match &hits {
                    None => assemble(&prepared.object, &sources, &h, None),
                    Some(hits) => {
                        let b = t.box3d;
                        let accept = |p: &Point| {
                            let mask = &analysis.mask;
                            self.grid.locate(&b.to_world(p)).is_some_and(|idx| {
                                cause_wrt_box(
                                    &self.grid,
                                    &mask.first_return,
                                    &mask.signal_miss,
                                    hits,
                                    &analysis.vox,
                                    &frame.cloud,
                                    &b,
                                    idx,
                                )
                                .is_shape_miss()
                            })
                        };
                        assemble(&prepared.object, &sources, &h, Some(&accept))
                    }
                };
                (shape, picks)
            })
            .collect()
    }

    pub fn shapes(&self, frame: &FrameBundle, analysis: &Analysis, bank: &[IndexedObject]) -> Vec<AssembledShape> {
        self.assemble_frame(frame, analysis, bank).into_iter().map(|(s, _)| s).collect()
    }

    pub fn targets(&self, analysis: &Analysis, shapes: &[AssembledShape]) -> OccupancyGrid {
        make_targets(&analysis.mask, shapes, &self.cfg.shape_loss_params())
    }
}
