//! Source-bank cache.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "SBNK" | u32 version | u32 object count
//! per object:
//!   u32 frame-id byte length | frame id (UTF-8) | u32 box id | u8 class code
//!   f64 x 7 (center xyz, size lwh, yaw) | u8 occlusion level (255 = none)
//!   u32 point count | f64 x 4 per point (x, y, z, intensity)
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ObjectInstance, ObjectKey};
use crate::boxes::{LabeledBox3D, ObjectClass};
use crate::geom::Point;

pub const BANK_MAGIC: &[u8; 4] = b"SBNK";
pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a source bank (bad magic)")]
    BadMagic,
    #[error("unsupported bank version {0}")]
    Version(u32),
    #[error("truncated bank")]
    Truncated,
    #[error("object {0}: {1}")]
    Corrupt(usize, String),
}

pub fn write_bank<W: Write>(mut w: W, objects: &[ObjectInstance]) -> Result<(), BankError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BANK_MAGIC);
    buf.extend_from_slice(&BANK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(objects.len() as u32).to_le_bytes());
    for o in objects {
        let id = o.key.frame.as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&o.key.box_id.to_le_bytes());
        buf.push(o.class.code());
        let b = &o.box3d;
        for v in b.center.iter().chain(&b.size).chain(std::iter::once(&b.yaw)) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(b.occlusion.unwrap_or(u8::MAX));
        buf.extend_from_slice(&(o.points.len() as u32).to_le_bytes());
        for p in &o.points {
            for v in [p.x, p.y, p.z, p.intensity] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BankError> {
        let end = self.pos.checked_add(n).ok_or(BankError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(BankError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BankError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, BankError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, BankError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_bank<R: Read>(mut r: R) -> Result<Vec<ObjectInstance>, BankError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(4).map_err(|_| BankError::BadMagic)? != BANK_MAGIC {
        return Err(BankError::BadMagic);
    }
    let version = c.u32()?;
    if version != BANK_VERSION {
        return Err(BankError::Version(version));
    }
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for i in 0..n {
        let len = c.u32()? as usize;
        let frame = std::str::from_utf8(c.take(len)?).map_err(|e| BankError::Corrupt(i, e.to_string()))?.to_string();
        let box_id = c.u32()?;
        let code = c.u8()?;
        let class = ObjectClass::from_code(code).ok_or_else(|| BankError::Corrupt(i, format!("class code {code}")))?;
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = c.f64()?;
        }
        let occ = c.u8()?;
        let mut box3d = LabeledBox3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6], class);
        box3d.yaw = v[6];
        box3d.occlusion = (occ != u8::MAX).then_some(occ);
        if !box3d.is_valid() {
            return Err(BankError::Corrupt(i, "invalid box".into()));
        }
        let count = c.u32()? as usize;
        if count.checked_mul(32).is_none_or(|b| b > data.len()) {
            return Err(BankError::Truncated);
        }
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let p = Point::new(c.f64()?, c.f64()?, c.f64()?, c.f64()?);
            if !p.is_finite() {
                return Err(BankError::Corrupt(i, "non-finite point".into()));
            }
            points.push(p);
        }
        out.push(ObjectInstance { key: ObjectKey { frame, box_id }, class, box3d, points });
    }
    if c.pos != data.len() {
        return Err(BankError::Corrupt(n, "trailing bytes".into()));
    }
    Ok(out)
}
