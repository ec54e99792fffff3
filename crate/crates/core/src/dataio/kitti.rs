//! KITTI velodyne scans, calibration files and `label_2` rows.
//!
//! Labels live in the rectified camera frame (x right, y down, z forward)
//! with the box location at the bottom face center. Loading maps them into
//! the LiDAR frame with `inverse(R0_rect * Tr_velo_to_cam)` and moves the
//! center up by half the height, so boxes are geometric-center, z-up.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use super::DataError;
use crate::boxes::{LabeledBox3D, ObjectClass};
use crate::geom::{wrap_angle, Point, PointCloud};

/// Bytes per velodyne record: four little-endian `f32`.
pub const POINT_RECORD: usize = 16;

pub fn parse_points(bytes: &[u8]) -> Result<PointCloud, DataError> {
    if !bytes.len().is_multiple_of(POINT_RECORD) {
        return Err(DataError::Length { len: bytes.len(), record: POINT_RECORD });
    }
    let mut pts = Vec::with_capacity(bytes.len() / POINT_RECORD);
    for (n, rec) in bytes.chunks_exact(POINT_RECORD).enumerate() {
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
        let p = Point::new(f(0), f(4), f(8), f(12));
        if !p.is_finite() {
            return Err(DataError::NonFinite { index: n });
        }
        pts.push(p);
    }
    Ok(PointCloud::new(pts))
}

pub fn read_points(path: &Path) -> Result<PointCloud, DataError> {
    parse_points(&super::read_file(path)?)
}

/// Encodes as `f32`; coordinates are rounded to single precision.
pub fn encode_points(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_RECORD);
    for p in cloud.iter() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_points(path: &Path, cloud: &PointCloud) -> Result<(), DataError> {
    super::write_file(path, &encode_points(cloud))
}

/// Camera/LiDAR calibration of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub r0_rect: Matrix3<f64>,
    /// 3x4 rigid transform, stored homogeneous.
    pub velo_to_cam: Matrix4<f64>,
    /// Left color camera projection, kept for writing calib files back out.
    pub p2: Option<[f64; 12]>,
    velo_to_rect: Matrix4<f64>,
    rect_to_velo: Matrix4<f64>,
}

impl Calibration {
    pub fn new(r0_rect: Matrix3<f64>, velo_to_cam: Matrix4<f64>) -> Result<Self, DataError> {
        let mut r0 = Matrix4::identity();
        r0.fixed_view_mut::<3, 3>(0, 0).copy_from(&r0_rect);
        let velo_to_rect = r0 * velo_to_cam;
        let rect_to_velo = velo_to_rect
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| DataError::Calib { line: 0, msg: "R0_rect * Tr_velo_to_cam is singular".into() })?;
        Ok(Self { r0_rect, velo_to_cam, p2: None, velo_to_rect, rect_to_velo })
    }

    /// No rectification and the nominal axis remap between LiDAR
    /// (x forward, y left, z up) and camera (x right, y down, z forward)
    /// with coincident origins.
    pub fn nominal() -> Self {
        #[rustfmt::skip]
        let remap = Matrix4::new(
            0.0, -1.0, 0.0, 0.0,
            0.0, 0.0, -1.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        Self::new(Matrix3::identity(), remap).expect("remap is invertible")
    }

    pub fn cam_to_lidar(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rect_to_velo * Vector4::new(p[0], p[1], p[2], 1.0);
        [v[0], v[1], v[2]]
    }

    pub fn lidar_to_cam(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.velo_to_rect * Vector4::new(p[0], p[1], p[2], 1.0);
        [v[0], v[1], v[2]]
    }

    fn dir_to_lidar(&self, d: Vector3<f64>) -> Vector3<f64> {
        self.rect_to_velo.fixed_view::<3, 3>(0, 0) * d
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p2 = self.p2.unwrap_or([0.0; 12]);
        for name in ["P0", "P1", "P2", "P3"] {
            write_row(&mut s, name, &p2);
        }
        let r0: Vec<f64> =
            (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| self.r0_rect[(r, c)]).collect();
        write_row(&mut s, "R0_rect", &r0);
        let tr: Vec<f64> =
            (0..3).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| self.velo_to_cam[(r, c)]).collect();
        write_row(&mut s, "Tr_velo_to_cam", &tr);
        s
    }
}

fn write_row(s: &mut String, name: &str, vals: &[f64]) {
    s.push_str(name);
    s.push(':');
    for v in vals {
        let _ = write!(s, " {v:?}");
    }
    s.push('\n');
}

fn text(bytes: &[u8]) -> Result<&str, DataError> {
    std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        DataError::Utf8 { line }
    })
}

fn parse_floats(s: &str, line: usize, err: impl Fn(usize, String) -> DataError) -> Result<Vec<f64>, DataError> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(line, format!("bad number {t:?}"))))
        .collect()
}

/// Parses a KITTI object calib file. Also accepts the tracking-benchmark key
/// names `R_rect` and `Tr_velo_cam`.
pub fn parse_calib(bytes: &[u8]) -> Result<Calibration, DataError> {
    let calib_err = |line, msg| DataError::Calib { line, msg };
    let mut r0 = None;
    let mut tr = None;
    let mut p2 = None;
    for (n, raw) in text(bytes)?.lines().enumerate() {
        let line = n + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let (key, rest) = raw.split_once(':').ok_or_else(|| calib_err(line, "expected `key: values`".into()))?;
        let vals = parse_floats(rest, line, calib_err)?;
        let want = |k: usize| {
            if vals.len() == k {
                Ok(())
            } else {
                Err(calib_err(line, format!("{} needs {k} values, got {}", key.trim(), vals.len())))
            }
        };
        match key.trim() {
            "R0_rect" | "R_rect" => {
                want(9)?;
                r0 = Some(Matrix3::from_row_slice(&vals));
            }
            "Tr_velo_to_cam" | "Tr_velo_cam" => {
                want(12)?;
                let mut m = Matrix4::identity();
                for r in 0..3 {
                    for c in 0..4 {
                        m[(r, c)] = vals[r * 4 + c];
                    }
                }
                tr = Some(m);
            }
            "P2" => {
                want(12)?;
                p2 = Some(vals.as_slice().try_into().expect("12 values"));
            }
            _ => {}
        }
    }
    let r0 = r0.ok_or(DataError::MissingCalib("R0_rect"))?;
    let tr = tr.ok_or(DataError::MissingCalib("Tr_velo_to_cam"))?;
    let mut c = Calibration::new(r0, tr)?;
    c.p2 = p2;
    Ok(c)
}

pub fn read_calib(path: &Path) -> Result<Calibration, DataError> {
    parse_calib(&super::read_file(path)?)
}

/// Object type column to class. `None` marks rows that are skipped.
pub fn kitti_class(name: &str) -> Result<Option<ObjectClass>, String> {
    Ok(Some(match name {
        "Car" => ObjectClass::Car,
        "Pedestrian" => ObjectClass::Pedestrian,
        "Cyclist" => ObjectClass::Cyclist,
        "Van" | "Truck" | "Person_sitting" | "Tram" | "Misc" => ObjectClass::Other,
        "DontCare" => return Ok(None),
        _ => return Err(format!("unknown object type {name:?}")),
    }))
}

/// Camera-frame label fields of one box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBox {
    /// Bottom face center, rectified camera frame.
    pub location: [f64; 3],
    /// `(h, w, l)` as in the label file.
    pub hwl: [f64; 3],
    pub rotation_y: f64,
}

impl CameraBox {
    pub fn to_lidar(&self, calib: &Calibration, class: ObjectClass) -> LabeledBox3D {
        let [h, w, l] = self.hwl;
        let [x, y, z] = self.location;
        // camera y points down, so the geometric center is above the location
        let center = calib.cam_to_lidar([x, y - h / 2.0, z]);
        let (s, c) = self.rotation_y.sin_cos();
        let heading = calib.dir_to_lidar(Vector3::new(c, 0.0, -s));
        LabeledBox3D::new(center, [l, w, h], heading[1].atan2(heading[0]), class)
    }

    pub fn from_lidar(b: &LabeledBox3D, calib: &Calibration) -> Self {
        let [l, w, h] = b.size;
        let c = calib.lidar_to_cam(b.center);
        // Camera yaw axis and LiDAR up differ slightly under real calibrations;
        // pick the ry whose LiDAR heading has exactly this box's yaw.
        let (s, co) = b.yaw.sin_cos();
        let a = calib.dir_to_lidar(Vector3::new(1.0, 0.0, 0.0));
        let bb = calib.dir_to_lidar(Vector3::new(0.0, 0.0, -1.0));
        let mut ry = (-(a[0] * s - a[1] * co)).atan2(bb[0] * s - bb[1] * co);
        let (sr, cr) = ry.sin_cos();
        if (a * cr + bb * sr).dot(&Vector3::new(co, s, 0.0)) < 0.0 {
            ry += std::f64::consts::PI;
        }
        Self { location: [c[0], c[1] + h / 2.0, c[2]], hwl: [h, w, l], rotation_y: wrap_angle(ry) }
    }
}

/// For the nominal calibration this is `-ry - pi/2`.
pub fn nominal_yaw(rotation_y: f64) -> f64 {
    wrap_angle(-rotation_y - FRAC_PI_2)
}

pub fn parse_labels(bytes: &[u8], calib: &Calibration) -> Result<Vec<LabeledBox3D>, DataError> {
    let label_err = |line, msg| DataError::Label { line, msg };
    let mut out = Vec::new();
    for (n, raw) in text(bytes)?.lines().enumerate() {
        let line = n + 1;
        let mut fields = raw.split_whitespace();
        let Some(kind) = fields.next() else { continue };
        let class = kitti_class(kind).map_err(|m| label_err(line, m))?;
        let vals = parse_floats(&fields.collect::<Vec<_>>().join(" "), line, label_err)?;
        if vals.len() != 14 && vals.len() != 15 {
            return Err(label_err(line, format!("expected 15 or 16 fields, got {}", vals.len() + 1)));
        }
        let Some(class) = class else { continue };
        let occ = vals[1];
        if !(occ == occ.trunc() && (0.0..=3.0).contains(&occ)) {
            return Err(label_err(line, format!("occlusion level {occ} not in 0..=3")));
        }
        let hwl = [vals[7], vals[8], vals[9]];
        if hwl.iter().any(|&v| v <= 0.0) {
            return Err(label_err(line, "non-positive dimension".into()));
        }
        let cam = CameraBox { location: [vals[10], vals[11], vals[12]], hwl, rotation_y: vals[13] };
        let mut b = cam.to_lidar(calib, class);
        if !b.is_valid() {
            return Err(label_err(line, "box not finite after calibration".into()));
        }
        b.occlusion = Some(occ as u8);
        out.push(b);
    }
    Ok(out)
}

pub fn read_labels(path: &Path, calib: &Calibration) -> Result<Vec<LabeledBox3D>, DataError> {
    parse_labels(&super::read_file(path)?, calib)
}

/// One row per box in `label_2` layout. Truncation is 0 and the 2D box is
/// zero; `Other` is written as `Misc`.
pub fn format_labels(boxes: &[LabeledBox3D], calib: &Calibration) -> String {
    let mut s = String::new();
    for b in boxes {
        let cam = CameraBox::from_lidar(b, calib);
        let kind = match b.class {
            ObjectClass::Other => "Misc",
            c => c.name(),
        };
        let [x, y, z] = cam.location;
        let alpha = wrap_angle(cam.rotation_y - x.atan2(z));
        let [h, w, l] = cam.hwl;
        let _ = writeln!(
            s,
            "{kind} 0 {} {alpha:?} 0 0 0 0 {h:?} {w:?} {l:?} {x:?} {y:?} {z:?} {:?}",
            b.occlusion.unwrap_or(0),
            cam.rotation_y
        );
    }
    s
}

pub fn write_labels(path: &Path, boxes: &[LabeledBox3D], calib: &Calibration) -> Result<(), DataError> {
    super::write_file(path, format_labels(boxes, calib).as_bytes())
}
