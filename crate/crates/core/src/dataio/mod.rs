//! File formats: KITTI inputs, region masks and PLY exports.
//!
//! Every reader is total: malformed input of any kind yields a
//! [`DataError`], never a panic.
//!
//! A KITTI-layout directory holds `velodyne/<id>.bin`, `calib/<id>.txt` and
//! optionally `label_2/<id>.txt`; a frame without a label file has no boxes.

mod kitti;
mod mask;
mod ply;

pub use kitti::{
    encode_points, format_labels, kitti_class, nominal_yaw, parse_calib, parse_labels, parse_points, read_calib,
    read_labels, read_points, write_labels, write_points, Calibration, CameraBox, POINT_RECORD,
};
pub use mask::{encode_mask, parse_mask, read_mask, write_mask, MASK_MAGIC, MASK_VERSION};
pub use ply::{cause_color, format_ply, parse_ply, probability_gray, read_ply, write_ply, Rgb};

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::boxes::LabeledBox3D;
use crate::geom::PointCloud;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("length {len} is not a multiple of {record} bytes")]
    Length { len: usize, record: usize },
    #[error("point {index} is not finite")]
    NonFinite { index: usize },
    #[error("line {line}: invalid UTF-8")]
    Utf8 { line: usize },
    #[error("label line {line}: {msg}")]
    Label { line: usize, msg: String },
    #[error("calib line {line}: {msg}")]
    Calib { line: usize, msg: String },
    #[error("calib file lacks {0}")]
    MissingCalib(&'static str),
    #[error("ply line {line}: {msg}")]
    Ply { line: usize, msg: String },
    #[error("mask: {0}")]
    Mask(String),
    #[error("truncated file")]
    Truncated,
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).ok_or(DataError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(DataError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    /// Fails early when `count` records of `size` bytes cannot fit.
    pub fn expect_records(&self, count: u64, size: u64) -> Result<(), DataError> {
        match count.checked_mul(size) {
            Some(b) if b <= (self.data.len() - self.pos) as u64 => Ok(()),
            _ => Err(DataError::Truncated),
        }
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.data.len()
    }

    pub fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// One frame with its boxes in the LiDAR frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub id: String,
    pub cloud: PointCloud,
    pub boxes: Vec<LabeledBox3D>,
    pub calib: Calibration,
}

pub fn frame_paths(root: &Path, id: &str) -> [PathBuf; 3] {
    [
        root.join("velodyne").join(format!("{id}.bin")),
        root.join("calib").join(format!("{id}.txt")),
        root.join("label_2").join(format!("{id}.txt")),
    ]
}

pub fn load_frame(root: &Path, id: &str) -> Result<FrameBundle, DataError> {
    let [velo, calib, label] = frame_paths(root, id);
    let cloud = read_points(&velo)?;
    let calib = read_calib(&calib)?;
    let boxes = if label.exists() { read_labels(&label, &calib)? } else { Vec::new() };
    Ok(FrameBundle { id: id.to_string(), cloud, boxes, calib })
}

pub fn write_frame(root: &Path, frame: &FrameBundle) -> Result<(), DataError> {
    let [velo, calib, label] = frame_paths(root, &frame.id);
    write_points(&velo, &frame.cloud)?;
    write_file(&calib, frame.calib.to_text().as_bytes())?;
    write_labels(&label, &frame.boxes, &frame.calib)
}

/// Frame ids of a KITTI-layout directory: stems of `velodyne/*.bin`, sorted.
pub fn list_frames(root: &Path) -> Result<Vec<String>, DataError> {
    let dir = root.join("velodyne");
    let io = |source| DataError::Io { path: dir.clone(), source };
    let mut ids = Vec::new();
    for e in fs::read_dir(&dir).map_err(io)? {
        let p = e.map_err(io)?.path();
        if p.extension().is_some_and(|x| x == "bin") {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(s.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::ObjectClass;
    use crate::geom::Point;

    #[test]
    fn frame_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frame = FrameBundle {
            id: "000007".into(),
            cloud: PointCloud::new(vec![Point::new(5.0, 1.0, -1.0, 0.25)]),
            boxes: vec![{
                let mut b = LabeledBox3D::new([12.0, -3.0, -0.8], [4.0, 1.7, 1.5], 0.3, ObjectClass::Car);
                b.occlusion = Some(0);
                b
            }],
            calib: Calibration::nominal(),
        };
        write_frame(dir.path(), &frame).unwrap();
        let back = load_frame(dir.path(), "000007").unwrap();
        assert_eq!(back.cloud, frame.cloud);
        assert_eq!(back.boxes.len(), 1);
        for a in 0..3 {
            assert!((back.boxes[0].center[a] - frame.boxes[0].center[a]).abs() < 1e-12);
        }
        assert_eq!(list_frames(dir.path()).unwrap(), vec!["000007".to_string()]);
        assert!(matches!(load_frame(dir.path(), "missing"), Err(DataError::Io { .. })));
    }
}
