use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree for nearest-neighbor queries over a point set.
pub struct PointIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut index = PointIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    /// Index and distance of the nearest stored point. Ties go to the lowest
    /// index.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, usize::MAX, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    /// Nearest neighbor of stored point `i` among the other stored points.
    pub fn nearest_other(&self, i: usize) -> Option<(usize, f64)> {
        if self.points.len() < 2 {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, &self.points[i], i, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn search(&self, node: usize, q: &Vector3<f64>, skip: usize, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if i == skip {
                        continue;
                    }
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip, best);
                if diff * diff <= best.1 {
                    self.search(far, q, skip, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.1))
            .collect();
        let index = PointIndex::new(&pts);
        for _ in 0..200 {
            let q = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            let (i, d) = index.nearest(&q).unwrap();
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(k, p)| (k, (p - q).norm()))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            assert_eq!(i, bi);
            assert!((d - bd).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_index_has_no_neighbor() {
        assert!(PointIndex::new(&[]).nearest(&Vector3::zeros()).is_none());
    }

    #[test]
    fn nearest_other_skips_self() {
        let pts = vec![Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.5, 0.0, 0.0)];
        let index = PointIndex::new(&pts);
        assert_eq!(index.nearest_other(0), Some((2, 0.5)));
        assert_eq!(index.nearest_other(1).unwrap().0, 2);
        assert!(PointIndex::new(&pts[..1]).nearest_other(0).is_none());
    }
}
