use serde::{Deserialize, Serialize};

use crate::boxes::ObjectClass;
use crate::geom::Point;

/// Axis-aligned block in normalized box coordinates, each axis in `[-0.5, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

const fn part(min: [f64; 3], max: [f64; 3]) -> Part {
    Part { min, max }
}

/// Parametric object model: a union of blocks scaled to an instance size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrototype {
    pub name: String,
    pub class: ObjectClass,
    /// Nominal `(l, w, h)` in meters.
    pub nominal_size: [f64; 3],
    pub parts: Vec<Part>,
}

/// Blocks of one instance in meters, in the object frame (origin at the
/// center of the object's extent).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledShape {
    pub blocks: Vec<([f64; 3], [f64; 3])>,
}

impl ScenePrototype {
    pub fn scaled(&self, size: [f64; 3]) -> ScaledShape {
        ScaledShape {
            blocks: self
                .parts
                .iter()
                .map(|p| {
                    (
                        [p.min[0] * size[0], p.min[1] * size[1], p.min[2] * size[2]],
                        [p.max[0] * size[0], p.max[1] * size[1], p.max[2] * size[2]],
                    )
                })
                .collect(),
        }
    }
}

impl ScaledShape {
    /// Nearest entry distance of a ray (object frame) into any block.
    pub fn ray_hit(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (lo, hi) in &self.blocks {
            let mut t0 = 0.0f64;
            let mut t1 = f64::INFINITY;
            let mut hit = true;
            for a in 0..3 {
                if d[a] == 0.0 {
                    if o[a] < lo[a] || o[a] > hi[a] {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let (mut ta, mut tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    hit = false;
                    break;
                }
            }
            if hit && t0 > 0.0 {
                best = Some(best.map_or(t0, |b| b.min(t0)));
            }
        }
        best
    }

    /// Ray parameters where the ray crosses the outer surface: the ends of
    /// the merged block intervals, ascending, `t > 0` only.
    pub fn ray_crossings(&self, o: [f64; 3], d: [f64; 3]) -> Vec<f64> {
        let mut spans: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in &self.blocks {
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut hit = true;
            for a in 0..3 {
                if d[a] == 0.0 {
                    if o[a] < lo[a] || o[a] > hi[a] {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let (mut ta, mut tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
            if hit && t0 <= t1 {
                spans.push((t0, t1));
            }
        }
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in spans {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        merged.into_iter().flat_map(|(a, b)| [a, b]).filter(|&t| t > 0.0).collect()
    }

    fn inside_any(&self, p: [f64; 3]) -> bool {
        self.blocks.iter().any(|(lo, hi)| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]))
    }

    /// Regular samples of the outer surface, at most `spacing` apart along
    /// each face. Face points whose outward neighbourhood lies inside another
    /// block are internal and dropped.
    pub fn sample_surface(&self, spacing: f64, intensity: f64) -> Vec<Point> {
        const NUDGE: f64 = 1e-6;
        let mut out = Vec::new();
        for (lo, hi) in &self.blocks {
            for axis in 0..3 {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let nu = ((hi[u] - lo[u]) / spacing).ceil().max(1.0) as usize;
                let nv = ((hi[v] - lo[v]) / spacing).ceil().max(1.0) as usize;
                for (side, sign) in [(lo[axis], -1.0), (hi[axis], 1.0)] {
                    for a in 0..=nu {
                        for b in 0..=nv {
                            let mut p = [0.0; 3];
                            p[axis] = side;
                            p[u] = lo[u] + (hi[u] - lo[u]) * a as f64 / nu as f64;
                            p[v] = lo[v] + (hi[v] - lo[v]) * b as f64 / nv as f64;
                            let mut probe = p;
                            probe[axis] += sign * NUDGE;
                            if self.inside_any(probe) {
                                continue;
                            }
                            out.push(Point::new(p[0], p[1], p[2], intensity));
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.coords().partial_cmp(&b.coords()).expect("finite surface samples"));
        out.dedup_by(|a, b| a.coords() == b.coords());
        out
    }
}

/// Three car-like, two pedestrian-like and two cyclist-like models, all
/// mirror-symmetric across their length axis.
pub fn default_prototypes() -> Vec<ScenePrototype> {
    let proto = |name: &str, class, size, parts: Vec<Part>| ScenePrototype {
        name: name.to_string(),
        class,
        nominal_size: size,
        parts,
    };
    vec![
        proto(
            "sedan",
            ObjectClass::Car,
            [4.2, 1.8, 1.5],
            vec![part([-0.5, -0.5, -0.5], [0.5, 0.5, 0.1]), part([-0.25, -0.45, 0.1], [0.2, 0.45, 0.5])],
        ),
        proto(
            "hatchback",
            ObjectClass::Car,
            [3.9, 1.75, 1.5],
            vec![part([-0.5, -0.5, -0.5], [0.5, 0.5, 0.05]), part([-0.5, -0.42, 0.05], [0.15, 0.42, 0.5])],
        ),
        proto(
            "van",
            ObjectClass::Car,
            [4.8, 1.9, 1.9],
            vec![part([-0.5, -0.5, -0.5], [0.3, 0.5, 0.5]), part([0.3, -0.5, -0.5], [0.5, 0.5, 0.0])],
        ),
        proto(
            "walker",
            ObjectClass::Pedestrian,
            [0.8, 0.6, 1.75],
            vec![
                part([-0.2, -0.35, -0.5], [0.2, -0.05, -0.05]),
                part([-0.2, 0.05, -0.5], [0.2, 0.35, -0.05]),
                part([-0.3, -0.5, -0.05], [0.3, 0.5, 0.35]),
                part([-0.2, -0.2, 0.35], [0.2, 0.2, 0.5]),
            ],
        ),
        proto(
            "stander",
            ObjectClass::Pedestrian,
            [0.6, 0.6, 1.7],
            vec![part([-0.4, -0.4, -0.5], [0.4, 0.4, 0.35]), part([-0.25, -0.25, 0.35], [0.25, 0.25, 0.5])],
        ),
        proto(
            "road_bike",
            ObjectClass::Cyclist,
            [1.8, 0.6, 1.75],
            vec![
                part([-0.5, -0.1, -0.5], [-0.1, 0.1, -0.1]),
                part([0.1, -0.1, -0.5], [0.5, 0.1, -0.1]),
                part([-0.3, -0.1, -0.15], [0.3, 0.1, 0.0]),
                part([-0.25, -0.5, 0.0], [0.1, 0.5, 0.5]),
            ],
        ),
        proto(
            "city_bike",
            ObjectClass::Cyclist,
            [1.7, 0.55, 1.7],
            vec![part([-0.5, -0.12, -0.5], [0.5, 0.12, -0.15]), part([-0.3, -0.5, -0.15], [0.15, 0.5, 0.5])],
        ),
    ]
}
