//! Region-mask file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "SMRM" | u32 version
//! 3 x (f64 lo, f64 size, u32 bins)                 grid axes r, phi, theta
//! u64 column count (= phi bins * theta bins)
//! per column: u32 first return, u32 sm lo, u32 sm hi  (u32::MAX = none)
//! u64 occupied count | per voxel: u32 i, j, k          strictly ascending
//! u64 label count    | per voxel: u32 i, j, k, u32 box, u8 cause code
//! ```

use std::path::Path;

use super::{ByteReader, DataError};
use crate::geom::{Axis, SphericalGrid, VoxelGrid, VoxelIndex};
use crate::occlusion::{Cause, CauseLabel, RegionMask};

pub const MASK_MAGIC: &[u8; 4] = b"SMRM";
pub const MASK_VERSION: u32 = 1;
const NONE: u32 = u32::MAX;

pub fn encode_mask(mask: &RegionMask) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MASK_MAGIC);
    b.extend_from_slice(&MASK_VERSION.to_le_bytes());
    for a in mask.grid.axes() {
        b.extend_from_slice(&a.lo.to_le_bytes());
        b.extend_from_slice(&a.size.to_le_bytes());
        b.extend_from_slice(&a.bins.to_le_bytes());
    }
    b.extend_from_slice(&(mask.first_return.len() as u64).to_le_bytes());
    for (f, sm) in mask.first_return.iter().zip(&mask.signal_miss) {
        let (lo, hi) = sm.unwrap_or((NONE, NONE));
        for v in [f.unwrap_or(NONE), lo, hi] {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b.extend_from_slice(&(mask.occupied.len() as u64).to_le_bytes());
    for v in &mask.occupied {
        for c in v.as_array() {
            b.extend_from_slice(&c.to_le_bytes());
        }
    }
    b.extend_from_slice(&(mask.causes.len() as u64).to_le_bytes());
    for (v, l) in &mask.causes {
        for c in v.as_array() {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b.extend_from_slice(&l.box_id.to_le_bytes());
        b.push(l.cause.code());
    }
    b
}

pub fn write_mask(path: &Path, mask: &RegionMask) -> Result<(), DataError> {
    super::write_file(path, &encode_mask(mask))
}

pub fn parse_mask(bytes: &[u8]) -> Result<RegionMask, DataError> {
    let bad = |m: &str| DataError::Mask(m.to_string());
    let mut c = ByteReader::new(bytes);
    if c.take(4).map_err(|_| bad("bad magic"))? != MASK_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != MASK_VERSION {
        return Err(DataError::Mask(format!("unsupported version {version}")));
    }
    let mut axes = Vec::with_capacity(3);
    for n in 0..3 {
        let (lo, size, bins) = (c.f64()?, c.f64()?, c.u32()?);
        axes.push(Axis::from_parts(n, lo, size, bins).map_err(|e| DataError::Mask(e.to_string()))?);
    }
    let grid = SphericalGrid::from_axes([axes[0], axes[1], axes[2]]);
    let [n_r, _, _] = grid.dims();
    let cols = c.u64()?;
    if cols != grid.column_count() as u64 {
        return Err(bad("column count does not match grid"));
    }
    c.expect_records(cols, 12)?;
    let mut first_return = Vec::with_capacity(cols as usize);
    let mut signal_miss = Vec::with_capacity(cols as usize);
    for _ in 0..cols {
        let (f, lo, hi) = (c.u32()?, c.u32()?, c.u32()?);
        first_return.push(match f {
            NONE => None,
            f if f < n_r => Some(f),
            _ => return Err(bad("first return out of range")),
        });
        signal_miss.push(match (lo, hi) {
            (NONE, NONE) => None,
            (lo, hi) if lo <= hi && hi < n_r => Some((lo, hi)),
            _ => return Err(bad("signal-miss interval out of range")),
        });
    }
    let index = |c: &mut ByteReader| -> Result<VoxelIndex, DataError> {
        let v = VoxelIndex::new(c.u32()?, c.u32()?, c.u32()?);
        if grid.contains_index(v) {
            Ok(v)
        } else {
            Err(DataError::Mask(format!("voxel {:?} outside grid", v.as_array())))
        }
    };
    let n_occ = c.u64()?;
    c.expect_records(n_occ, 12)?;
    let mut occupied: Vec<VoxelIndex> = Vec::with_capacity(n_occ as usize);
    for _ in 0..n_occ {
        let v = index(&mut c)?;
        if occupied.last().is_some_and(|p| *p >= v) {
            return Err(bad("occupied voxels not strictly ascending"));
        }
        occupied.push(v);
    }
    let n_lab = c.u64()?;
    c.expect_records(n_lab, 17)?;
    let mut causes = std::collections::BTreeMap::new();
    let mut last: Option<VoxelIndex> = None;
    for _ in 0..n_lab {
        let v = index(&mut c)?;
        if last.is_some_and(|p| p >= v) {
            return Err(bad("labels not strictly ascending"));
        }
        last = Some(v);
        let box_id = c.u32()?;
        let code = c.u8()?;
        let cause = Cause::from_code(code).ok_or_else(|| DataError::Mask(format!("cause code {code}")))?;
        causes.insert(v, CauseLabel { box_id, cause });
    }
    if !c.is_done() {
        return Err(bad("trailing bytes"));
    }
    Ok(RegionMask { grid, first_return, signal_miss, occupied, causes })
}

pub fn read_mask(path: &Path) -> Result<RegionMask, DataError> {
    parse_mask(&super::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::{LabeledBox3D, ObjectClass};
    use crate::geom::{Point, PointCloud};
    use crate::occlusion::{analyze_frame, SignalMissParams};

    #[test]
    fn round_trip_and_corruption() {
        let g = SphericalGrid::from_degrees([2.0, 20.0], [-10.0, 10.0], [-5.0, 5.0], [0.5, 1.0, 1.0]).unwrap();
        let cloud = PointCloud::new(vec![Point::new(10.0, 0.1, 0.1, 0.5), Point::new(10.0, 0.3, 0.1, 0.5)]);
        let boxes = [LabeledBox3D::new([10.5, 0.2, 0.0], [2.0, 1.0, 1.0], 0.0, ObjectClass::Car)];
        let (mask, _, _) = analyze_frame(&g, &cloud, &boxes, &SignalMissParams::default());
        assert!(!mask.causes.is_empty());
        let bytes = encode_mask(&mask);
        assert_eq!(parse_mask(&bytes).unwrap(), mask);
        assert!(matches!(parse_mask(&bytes[..bytes.len() - 1]), Err(DataError::Truncated)));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(parse_mask(&extra).is_err());
        let mut bad_cause = bytes.clone();
        *bad_cause.last_mut().unwrap() = 9;
        assert!(matches!(parse_mask(&bad_cause), Err(DataError::Mask(_))));
        assert!(parse_mask(b"SMRX").is_err());
    }
}
