/// Exact nearest-neighbour index over 3D points.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

const LEAF_SIZE: usize = 12;

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut t = Self { points: points.to_vec(), nodes: Vec::new() };
        if !t.points.is_empty() {
            let n = t.points.len();
            t.build(0, n);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        self.points[start..end].select_nth_unstable_by(mid - start, |a, b| a[axis].total_cmp(&b[axis]));
        let value = self.points[mid][axis];
        self.nodes.push(Node::Split { axis, value, left: 0, right: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Squared distance to the nearest stored point, `None` when empty.
    pub fn nearest_sq(&self, q: [f64; 3]) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        Some(best)
    }

    pub fn nearest_distance(&self, q: [f64; 3]) -> Option<f64> {
        self.nearest_sq(q).map(f64::sqrt)
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut f64) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for p in &self.points[start..end] {
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                // left holds coordinates <= value, right >= value
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[[f64; 3]], q: [f64; 3]) -> f64 {
        points
            .iter()
            .map(|p| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn empty_and_duplicates() {
        assert_eq!(KdTree::new(&[]).nearest_sq([0.0; 3]), None);
        let pts = vec![[1.0, 1.0, 1.0]; 40];
        assert_eq!(KdTree::new(&pts).nearest_sq([1.0, 1.0, 2.0]), Some(1.0));
    }

    proptest! {
        #[test]
        fn matches_linear_scan(
            pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..300),
            qs in prop::collection::vec(prop::array::uniform3(-6.0f64..6.0), 1..20),
        ) {
            let t = KdTree::new(&pts);
            for q in qs {
                prop_assert_eq!(t.nearest_sq(q).unwrap(), brute(&pts, q));
            }
        }
    }
}
