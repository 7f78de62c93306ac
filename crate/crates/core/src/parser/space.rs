use std::collections::HashMap;

use nalgebra::Vector3;
use rand::seq::index::sample;

use crate::geom::{Aabb, Plane, PointIndex, Primitive};
use crate::synth::rng;

/// Similarity map from object coordinates into the fitting frame, where the
/// longest bounding-box side has a fixed length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub center: Vector3<f64>,
    pub scale: f64,
}

impl Frame {
    pub fn fit(bounds: &Aabb, extent: f64) -> Frame {
        let longest = bounds.extent().max();
        let scale = if longest > 0.0 { extent / longest } else { 1.0 };
        Frame {
            center: bounds.center(),
            scale,
        }
    }

    pub fn to_work(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center) * self.scale
    }

    pub fn prim_to_work(&self, p: &Primitive) -> Primitive {
        let mut out = *p;
        out.scale = p.scale * self.scale;
        out.translation = self.to_work(&p.translation);
        out
    }

    pub fn prim_to_world(&self, p: &Primitive) -> Primitive {
        let mut out = *p;
        out.scale = p.scale / self.scale;
        out.translation = p.translation / self.scale + self.center;
        out
    }

    pub fn plane_to_world(&self, plane: &Plane) -> Plane {
        let a = plane.axis.index();
        Plane::new(plane.axis, plane.offset / self.scale + self.center[a])
    }

    pub fn plane_to_work(&self, plane: &Plane) -> Plane {
        let a = plane.axis.index();
        Plane::new(plane.axis, (plane.offset - self.center[a]) * self.scale)
    }
}

/// Median distance from a point to its nearest neighbor, estimated on up to
/// 512 evenly strided points.
pub fn median_spacing(index: &PointIndex) -> f64 {
    let n = index.len();
    if n < 2 {
        return 0.0;
    }
    let stride = n.div_ceil(512).max(1);
    let mut d: Vec<f64> = (0..n)
        .step_by(stride)
        .filter_map(|i| index.nearest_other(i).map(|(_, d)| d))
        .collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Free-space samples: centers of cubic cells (side `longest extent / res`)
/// tiling the cloud's bounding box extended by `pad` cells on every side,
/// keeping those with no cloud point within `radius`. Returns the cells
/// inside the box and the padding shell separately.
pub fn free_space(
    points: &[Vector3<f64>],
    index: &PointIndex,
    res: usize,
    pad: usize,
    radius: f64,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let Some(bounds) = Aabb::from_points(points) else {
        return (Vec::new(), Vec::new());
    };
    let longest = bounds.extent().max();
    if res == 0 || !(longest > 0.0) {
        return (Vec::new(), Vec::new());
    }
    let cell = longest / res as f64;
    let inner = bounds.extent().map(|e| ((e / cell).round() as usize).max(1));
    let dims = inner.map(|n| n + 2 * pad);
    // center the inner block of cells on the box
    let origin = bounds.center() - inner.map(|n| n as f64 * cell / 2.0);
    let offset = |v: usize| v as f64 - pad as f64 + 0.5;
    let (mut inside, mut shell) = (Vec::new(), Vec::new());
    for i in 0..dims.x {
        for j in 0..dims.y {
            for k in 0..dims.z {
                let c = origin + Vector3::new(offset(i), offset(j), offset(k)) * cell;
                if !index.nearest(&c).is_some_and(|(_, d)| d > radius) {
                    continue;
                }
                let interior = [i, j, k].iter().zip(inner.iter()).all(|(&v, &n)| v >= pad && v < n + pad);
                if interior {
                    inside.push(c);
                } else {
                    shell.push(c);
                }
            }
        }
    }
    (inside, shell)
}

/// Sorted deterministic subset of `0..n` of size at most `cap`.
pub fn subsample(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = sample(&mut rng(seed), n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// Indices of `points` within `distance` of the primitive's solid.
pub fn assign_within(points: &[Vector3<f64>], prim: &Primitive, distance: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| prim.distance(&points[i]) <= distance)
        .collect()
}

/// Indices of the largest group of points connected by links no longer than
/// `link` (ties go to the group holding the lowest index).
pub fn largest_component(points: &[Vector3<f64>], link: f64) -> Vec<usize> {
    let n = points.len();
    if n == 0 || !(link > 0.0) {
        return (0..n).collect();
    }
    let key = |p: &Vector3<f64>| p.map(|v| (v / link).floor() as i64);
    let mut grid: HashMap<Vector3<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, p) in points.iter().enumerate() {
        let c = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = grid.get(&(c + Vector3::new(dx, dy, dz))) else {
                        continue;
                    };
                    for &j in cell {
                        if j > i && (points[j] - p).norm() <= link {
                            let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                            if a != b {
                                parent[a.max(b)] = a.min(b);
                            }
                        }
                    }
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| root(&mut parent, i)).collect();
    let mut size = vec![0usize; n];
    roots.iter().for_each(|&r| size[r] += 1);
    let best = (0..n).max_by_key(|&r| (size[r], std::cmp::Reverse(r))).unwrap_or(0);
    (0..n).filter(|&i| roots[i] == best).collect()
}
