//! Synthetic cuboid shapes and clouds with known ground truth.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{mirror_primitive, Aabb, Axis, Plane, Primitive, TriangleMesh};

/// Mixes a base seed with a path of integers into an independent stream
/// seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        h = h.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random cuboid with side lengths in `[0.3, 1.0]`, centered near the
/// origin, optionally rotated by up to 45° about one random axis.
pub fn random_cuboid(rng: &mut impl Rng, rotated: bool) -> Primitive {
    let scale = Vector3::new(
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
    );
    let translation = Vector3::new(
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
    );
    let mut rotation = Vector3::zeros();
    if rotated {
        let axis = rng.random_range(0..3);
        let mut a: f64 = rng.random_range(PI / 36.0..PI / 4.0);
        if rng.random::<bool>() {
            a = -a;
        }
        rotation[axis] = a;
    }
    Primitive::new(scale, translation, rotation)
}

/// Uniform samples over the union of the primitives' volumes on a jittered
/// grid: roughly `count` points with no large holes.
pub fn solid_cloud(prims: &[Primitive], count: usize, seed: u64) -> Vec<Vector3<f64>> {
    let total: f64 = prims.iter().map(|p| p.volume()).sum();
    if prims.is_empty() || count == 0 || total <= 0.0 {
        return Vec::new();
    }
    let spacing = (total / count as f64).cbrt();
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for (k, p) in prims.iter().enumerate() {
        let n = [0, 1, 2].map(|a| ((p.scale[a] / spacing).round() as usize).max(1));
        for i in 0..n[0] {
            for j in 0..n[1] {
                for l in 0..n[2] {
                    let u = Vector3::new(
                        (i as f64 + rng.random::<f64>()) / n[0] as f64 - 0.5,
                        (j as f64 + rng.random::<f64>()) / n[1] as f64 - 0.5,
                        (l as f64 + rng.random::<f64>()) / n[2] as f64 - 0.5,
                    );
                    let w = p.apply(&u);
                    // earlier primitives own their volume; keeps density uniform on overlaps
                    if !prims[..k].iter().any(|o| o.contains(&w)) {
                        out.push(w);
                    }
                }
            }
        }
    }
    out
}

pub fn mesh_of(prims: &[Primitive]) -> TriangleMesh {
    let parts: Vec<_> = prims.iter().map(TriangleMesh::from_primitive).collect();
    TriangleMesh::merge(&parts, true)
}

/// Furniture-like arrangement of 3 to 5 touching axis-aligned cuboids,
/// mirror-symmetric about `x = 0`, with `z` up.
pub fn furniture(rng: &mut impl Rng) -> Vec<Primitive> {
    let b = |s: [f64; 3], t: [f64; 3]| Primitive::axis_aligned(s.into(), t.into());
    let mirror = |p: Primitive| mirror_primitive(&p, &Plane::new(Axis::X, 0.0));
    let w = rng.random_range(0.8..1.4);
    let d = rng.random_range(0.5..0.9);
    let h = rng.random_range(0.5..0.9);
    let t = rng.random_range(0.06..0.12);
    match rng.random_range(0..4) {
        // table with four legs
        0 => {
            let leg = rng.random_range(0.08..0.14);
            let top = b([w, d, t], [0.0, 0.0, h + t / 2.0]);
            let l1 = b([leg, leg, h], [-(w - leg) / 2.0, -(d - leg) / 2.0, h / 2.0]);
            let l2 = b([leg, leg, h], [-(w - leg) / 2.0, (d - leg) / 2.0, h / 2.0]);
            vec![top, l1, mirror(l1), l2, mirror(l2)]
        }
        // bench on two slab legs
        1 => {
            let top = b([w, d, t], [0.0, 0.0, h + t / 2.0]);
            let l = b([t, d, h], [-(w - t) / 2.0, 0.0, h / 2.0]);
            vec![top, l, mirror(l)]
        }
        // chair: seat, back, two side slabs
        2 => {
            let seat = b([w, d, t], [0.0, 0.0, h + t / 2.0]);
            let bh = rng.random_range(0.5..0.9);
            let back = b([w, t, bh], [0.0, (d - t) / 2.0, h + t + bh / 2.0]);
            let l = b([t, d, h], [-(w - t) / 2.0, 0.0, h / 2.0]);
            vec![seat, back, l, mirror(l)]
        }
        // open shelf: two sides, top, bottom
        _ => {
            let hh = h + 0.5;
            let side = b([t, d, hh], [-(w - t) / 2.0, 0.0, hh / 2.0]);
            let inner = w - 2.0 * t;
            let top = b([inner, d, t], [0.0, 0.0, hh - t / 2.0]);
            let bottom = b([inner, d, t], [0.0, 0.0, t / 2.0]);
            vec![top, side, mirror(side), bottom]
        }
    }
}

pub fn bounds_of(prims: &[Primitive]) -> Option<Aabb> {
    prims.iter().map(|p| p.bounds()).reduce(|a, b| a.union(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3, 4]), derive_seed(7, &[3, 4]));
    }

    #[test]
    fn solid_cloud_stays_inside() {
        let mut r = rng(2);
        let p = random_cuboid(&mut r, true);
        let pts = solid_cloud(&[p], 1000, 3);
        assert!(pts.len() > 500 && pts.len() < 2000);
        assert!(pts.iter().all(|q| p.distance(q) < 1e-12));
    }

    #[test]
    fn furniture_has_three_to_five_parts() {
        let mut r = rng(5);
        for _ in 0..20 {
            let f = furniture(&mut r);
            assert!((3..=5).contains(&f.len()));
        }
    }
}
