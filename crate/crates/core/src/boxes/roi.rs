use serde::{Deserialize, Serialize};

use super::LabeledBox3D;
use crate::geom::Point;

/// Which proposal dimension scales the shift along each local axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ShiftConvention {
    /// x shifts by `w`, y by `l`, z by `h`.
    #[default]
    WidthLengthHeight,
    /// x shifts by `l`, y by `w`, z by `h` (length along the heading axis).
    LengthWidthHeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiGridParams {
    /// Grid size relative to the proposal.
    pub size_factor: f64,
    /// Shift magnitude as a fraction of the proposal dimension.
    pub shift: f64,
    /// Cells along local `(x, y, z)`.
    pub dims: [usize; 3],
    pub convention: ShiftConvention,
}

impl Default for RoiGridParams {
    fn default() -> Self {
        Self { size_factor: 1.05, shift: 0.25, dims: [12, 4, 2], convention: ShiftConvention::default() }
    }
}

/// One shifted local grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiGrid {
    /// Shift multipliers in `{-1, 0, 1}` per local axis.
    pub shift: [i8; 3],
    /// World-frame grid center.
    pub center: Point,
    /// World-frame cell centers, x-major: index `(a * ny + b) * nz + c`.
    pub cells: Vec<Point>,
}

/// The 27 heading-aligned local grids around a proposal, ordered by shift
/// multipliers `(sx, sy, sz)` lexicographically from `(-1, -1, -1)`.
pub fn roi_local_grid(proposal: &LabeledBox3D, params: &RoiGridParams) -> Vec<RoiGrid> {
    let [l, w, h] = proposal.size;
    let grid_size = [params.size_factor * l, params.size_factor * w, params.size_factor * h];
    let shift_dims = match params.convention {
        ShiftConvention::WidthLengthHeight => [w, l, h],
        ShiftConvention::LengthWidthHeight => [l, w, h],
    };
    let [nx, ny, nz] = params.dims;
    let cell = [grid_size[0] / nx as f64, grid_size[1] / ny as f64, grid_size[2] / nz as f64];
    let mut out = Vec::with_capacity(27);
    for sx in -1i8..=1 {
        for sy in -1i8..=1 {
            for sz in -1i8..=1 {
                let off = [
                    sx as f64 * params.shift * shift_dims[0],
                    sy as f64 * params.shift * shift_dims[1],
                    sz as f64 * params.shift * shift_dims[2],
                ];
                let mut cells = Vec::with_capacity(nx * ny * nz);
                for a in 0..nx {
                    for b in 0..ny {
                        for c in 0..nz {
                            let local = Point::xyz(
                                off[0] - 0.5 * grid_size[0] + (a as f64 + 0.5) * cell[0],
                                off[1] - 0.5 * grid_size[1] + (b as f64 + 0.5) * cell[1],
                                off[2] - 0.5 * grid_size[2] + (c as f64 + 0.5) * cell[2],
                            );
                            cells.push(proposal.to_world(&local));
                        }
                    }
                }
                out.push(RoiGrid {
                    shift: [sx, sy, sz],
                    center: proposal.to_world(&Point::xyz(off[0], off[1], off[2])),
                    cells,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::ObjectClass;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn unit_box_nearest_cell_within_half_diagonal() {
        let b = LabeledBox3D::new([0.0; 3], [1.0; 3], 0.0, ObjectClass::Car);
        let p = RoiGridParams { size_factor: 1.0, shift: 0.0, ..Default::default() };
        let grids = roi_local_grid(&b, &p);
        assert_eq!(grids.len(), 27);
        let unshifted = grids.iter().find(|g| g.shift == [0, 0, 0]).unwrap();
        assert_eq!(unshifted.cells.len(), 96);
        let nearest = unshifted.cells.iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
        let half_diag = 0.5 * ((1.0f64 / 12.0).powi(2) + 0.25f64.powi(2) + 0.5f64.powi(2)).sqrt();
        // even cell counts put the box center on a cell corner
        assert!(nearest <= half_diag + 1e-12);
    }

    #[test]
    fn quarter_turn_rotates_cells() {
        let p = RoiGridParams::default();
        let a = LabeledBox3D::new([2.0, 1.0, 0.0], [4.0, 2.0, 1.5], 0.0, ObjectClass::Car);
        let mut b = a;
        b.yaw = FRAC_PI_2;
        let ga = roi_local_grid(&a, &p);
        let gb = roi_local_grid(&b, &p);
        for (x, y) in ga.iter().zip(&gb) {
            for (ca, cb) in x.cells.iter().zip(&y.cells) {
                // rotate ca by +90 deg about the proposal center
                let dx = ca.x - 2.0;
                let dy = ca.y - 1.0;
                assert!((cb.x - (2.0 - dy)).abs() < 1e-12);
                assert!((cb.y - (1.0 + dx)).abs() < 1e-12);
                assert!((cb.z - ca.z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_uses_width_along_x_by_default() {
        let b = LabeledBox3D::new([0.0; 3], [4.0, 2.0, 1.0], 0.0, ObjectClass::Car);
        let g = roi_local_grid(&b, &RoiGridParams::default());
        let plus_x = g.iter().find(|g| g.shift == [1, 0, 0]).unwrap();
        assert!((plus_x.center.x - 0.25 * 2.0).abs() < 1e-12);
        let p = RoiGridParams { convention: ShiftConvention::LengthWidthHeight, ..Default::default() };
        let g = roi_local_grid(&b, &p);
        let plus_x = g.iter().find(|g| g.shift == [1, 0, 0]).unwrap();
        assert!((plus_x.center.x - 0.25 * 4.0).abs() < 1e-12);
    }
}
