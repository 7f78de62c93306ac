use nalgebra::Vector3;

/// Regular `m × m × m` grid over the canonical cube `[-0.5, 0.5]³`.
///
/// With `m ≥ 2` the samples include the cube faces; `m = 1` is the single
/// center point.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeLattice {
    per_axis: usize,
    points: Vec<Vector3<f64>>,
}

impl CubeLattice {
    pub const DEFAULT_PER_AXIS: usize = 7;

    pub fn new(per_axis: usize) -> Self {
        assert!(per_axis >= 1, "lattice needs at least one sample per axis");
        let coord = |i: usize| {
            if per_axis == 1 {
                0.0
            } else {
                -0.5 + i as f64 / (per_axis - 1) as f64
            }
        };
        let mut points = Vec::with_capacity(per_axis.pow(3));
        for i in 0..per_axis {
            for j in 0..per_axis {
                for k in 0..per_axis {
                    points.push(Vector3::new(coord(i), coord(j), coord(k)));
                }
            }
        }
        CubeLattice { per_axis, points }
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
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
}

impl Default for CubeLattice {
    fn default() -> Self {
        Self::new(Self::DEFAULT_PER_AXIS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Primitive;

    #[test]
    fn default_lattice_has_343_points_in_cube() {
        let l = CubeLattice::default();
        assert_eq!(l.len(), 343);
        assert!(l.points().iter().all(|p| p.amax() <= 0.5));
    }

    #[test]
    fn identity_transform_keeps_lattice() {
        let l = CubeLattice::default();
        let p = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::zeros());
        assert_eq!(p.transform_lattice(&l), l.points().to_vec());
    }

    #[test]
    fn pure_scaling_stretches_x_extent() {
        let l = CubeLattice::default();
        let p = Primitive::axis_aligned(Vector3::new(2.0, 1.0, 1.0), Vector3::zeros());
        let pts = p.transform_lattice(&l);
        let lo = pts.iter().map(|q| q.x).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (-1.0, 1.0));
    }

    #[test]
    fn random_transform_matches_per_point_matrix_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let l = CubeLattice::default();
        for _ in 0..20 {
            let mut r = || -> f64 { rng.random_range(-1.5..1.5) };
            let theta = Vector3::new(r(), r(), r());
            let t = Vector3::new(r(), r(), r());
            let s = Vector3::new(r().abs() + 0.1, r().abs() + 0.1, r().abs() + 0.1);
            let p = Primitive::new(s, t, theta);
            let got = p.transform_lattice(&l);
            // explicit elementwise evaluation of Rz·Ry·Rx·diag(S)·p + T
            let (sx, cx) = theta.x.sin_cos();
            let (sy, cy) = theta.y.sin_cos();
            let (sz, cz) = theta.z.sin_cos();
            for (q, p0) in got.iter().zip(l.points()) {
                let a = Vector3::new(s.x * p0.x, s.y * p0.y, s.z * p0.z);
                let a = Vector3::new(a.x, cx * a.y - sx * a.z, sx * a.y + cx * a.z);
                let a = Vector3::new(cy * a.x + sy * a.z, a.y, -sy * a.x + cy * a.z);
                let a = Vector3::new(cz * a.x - sz * a.y, sz * a.x + cz * a.y, a.z);
                assert!((q - (a + t)).amax() < 1e-12);
            }
        }
    }
}
