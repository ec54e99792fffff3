//! ASCII PLY for inspecting clouds in external viewers.

use std::fmt::Write as _;
use std::path::Path;

use super::DataError;
use crate::geom::{Point, PointCloud};
use crate::occlusion::Cause;

pub type Rgb = [u8; 3];

pub fn cause_color(c: Cause) -> Rgb {
    match c {
        Cause::Observed => [210, 210, 210],
        Cause::ExternalOcclusion => [230, 40, 40],
        Cause::SignalMiss => [40, 90, 230],
        Cause::SelfOcclusion => [40, 180, 60],
        Cause::None => [90, 90, 90],
    }
}

/// Probability as opacity on a white background: 0 is white, 1 is black.
pub fn probability_gray(p: f64) -> Rgb {
    let v = (255.0 * (1.0 - p.clamp(0.0, 1.0))).round() as u8;
    [v, v, v]
}

/// `colors`, when given, must have one entry per point.
pub fn format_ply(cloud: &PointCloud, colors: Option<&[Rgb]>) -> Result<String, DataError> {
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(DataError::Ply { line: 0, msg: format!("{} colors for {} points", c.len(), cloud.len()) });
        }
    }
    let mut s = String::from("ply\nformat ascii 1.0\ncomment shapemiss export\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for p in ["x", "y", "z", "intensity"] {
        let _ = writeln!(s, "property double {p}");
    }
    if colors.is_some() {
        for p in ["red", "green", "blue"] {
            let _ = writeln!(s, "property uchar {p}");
        }
    }
    s.push_str("end_header\n");
    for (n, p) in cloud.iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?} {:?}", p.x, p.y, p.z, p.intensity);
        if let Some(c) = colors {
            let [r, g, b] = c[n];
            let _ = write!(s, " {r} {g} {b}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_ply(path: &Path, cloud: &PointCloud, colors: Option<&[Rgb]>) -> Result<(), DataError> {
    super::write_file(path, format_ply(cloud, colors)?.as_bytes())
}

/// Reads ASCII PLY vertices. Needs `x`, `y`, `z`; picks up `intensity` and
/// `red`/`green`/`blue` when present and ignores other properties and
/// elements after the vertices.
pub fn parse_ply(bytes: &[u8]) -> Result<(PointCloud, Option<Vec<Rgb>>), DataError> {
    let err = |line: usize, msg: &str| DataError::Ply { line, msg: msg.to_string() };
    let text = std::str::from_utf8(bytes)
        .map_err(|e| DataError::Utf8 { line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1 })?;
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    if lines.next().map(|l| l.1) != Some("ply") {
        return Err(err(1, "missing `ply` magic"));
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_end = None;
    for (line, l) in lines.by_ref() {
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", ..] => return Err(err(line, "only `format ascii 1.0` is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    if count.is_some() {
                        return Err(err(line, "duplicate vertex element"));
                    }
                    count = Some(n.parse().map_err(|_| err(line, "bad vertex count"))?);
                }
            }
            ["property", "list", ..] if in_vertex => return Err(err(line, "list properties on vertices")),
            ["property", _ty, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["property", "list", _, _, _] => {}
            ["end_header"] => {
                header_end = Some(line);
                break;
            }
            _ => return Err(err(line, "unrecognised header line")),
        }
    }
    let header_end = header_end.ok_or_else(|| err(0, "missing end_header"))?;
    let count = count.ok_or_else(|| err(header_end, "no vertex element"))?;
    let pos = |name: &str| props.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (pos("x"), pos("y"), pos("z")) else {
        return Err(err(header_end, "vertex element lacks x/y/z"));
    };
    let ii = pos("intensity");
    let rgb = match (pos("red"), pos("green"), pos("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err(err(header_end, "partial color properties")),
    };
    let mut pts = Vec::with_capacity(count.min(1 << 20));
    let mut colors = rgb.map(|_| Vec::with_capacity(count.min(1 << 20)));
    for _ in 0..count {
        let (line, l) = lines.next().ok_or_else(|| err(0, "fewer vertex rows than declared"))?;
        let vals: Vec<&str> = l.split_whitespace().collect();
        if vals.len() != props.len() {
            return Err(err(line, "wrong number of values"));
        }
        let f = |i: usize| vals[i].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(line, "bad number"));
        let p = Point::new(f(ix)?, f(iy)?, f(iz)?, ii.map(f).transpose()?.unwrap_or(0.0));
        pts.push(p);
        if let (Some(idx), Some(out)) = (rgb, colors.as_mut()) {
            let mut c = [0u8; 3];
            for (slot, i) in c.iter_mut().zip(idx) {
                *slot = vals[i].parse().map_err(|_| err(line, "bad color"))?;
            }
            out.push(c);
        }
    }
    Ok((PointCloud::new(pts), colors))
}

pub fn read_ply(path: &Path) -> Result<(PointCloud, Option<Vec<Rgb>>), DataError> {
    parse_ply(&super::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_only_and_single_red_point() {
        let empty = format_ply(&PointCloud::default(), None).unwrap();
        assert!(empty.ends_with("end_header\n"));
        assert!(empty.contains("element vertex 0\n"));
        let one = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
        let s = format_ply(&one, Some(&[[255, 0, 0]])).unwrap();
        let rows: Vec<&str> = s.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(rows, vec!["1.0 2.0 3.0 0.5 255 0 0"]);
        assert!(format_ply(&one, Some(&[])).is_err());
    }

    #[test]
    fn rejects_binary_and_garbage() {
        assert!(parse_ply(b"").is_err());
        assert!(parse_ply(b"ply\nformat binary_little_endian 1.0\n").is_err());
        assert!(parse_ply(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").is_err());
        assert_eq!(probability_gray(1.0), [0, 0, 0]);
        assert_eq!(probability_gray(0.0), [255, 255, 255]);
    }

    proptest! {
        #[test]
        fn round_trip(v in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3, 0.0f64..1.0, any::<[u8; 3]>()), 0..50), with_color: bool) {
            let cloud = PointCloud::new(v.iter().map(|t| Point::new(t.0, t.1, t.2, t.3)).collect());
            let colors: Vec<Rgb> = v.iter().map(|t| t.4).collect();
            let s = format_ply(&cloud, with_color.then_some(&colors[..])).unwrap();
            let (back, bc) = parse_ply(s.as_bytes()).unwrap();
            prop_assert_eq!(back, cloud);
            prop_assert_eq!(bc, with_color.then_some(colors));
        }
    }
}
