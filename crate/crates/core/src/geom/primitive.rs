use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::{rotation_matrix, wrap_angle};
use super::{Aabb, CubeLattice};
use crate::error::{Error, Result};

/// An oriented cuboid: the canonical cube `[-0.5, 0.5]³` scaled by `scale`,
/// rotated by the Euler angles `rotation` and moved to `translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PrimitiveRecord", try_from = "PrimitiveRecord")]
pub struct Primitive {
    pub scale: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
    /// Whether the primitive carries a rotation about each axis.
    pub axis_flags: [bool; 3],
    /// Set on primitives that belong to a mirrored pair.
    pub symmetric: bool,
}

impl Primitive {
    pub fn new(scale: Vector3<f64>, translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        let axis_flags = [rotation.x != 0.0, rotation.y != 0.0, rotation.z != 0.0];
        Primitive {
            scale,
            translation,
            rotation,
            axis_flags,
            symmetric: false,
        }
    }

    pub fn axis_aligned(scale: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(scale, translation, Vector3::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::invalid(format!("non-positive scale {:?}", self.scale)));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::invalid("non-finite translation"));
        }
        for i in 0..3 {
            let a = self.rotation[i];
            if !a.is_finite() || a <= -PI || a > PI {
                return Err(Error::invalid(format!("rotation component {a} outside (-π, π]")));
            }
            if !self.axis_flags[i] && a != 0.0 {
                return Err(Error::invalid(format!("axis {i} unflagged but rotated by {a}")));
            }
        }
        Ok(())
    }

    /// Wraps the angles into `(-π, π]` and zeroes components smaller than
    /// `snap` radians, updating the axis flags to match.
    pub fn normalize_rotation(&mut self, snap: f64) {
        for i in 0..3 {
            let a = wrap_angle(self.rotation[i]);
            if a.abs() <= snap {
                self.rotation[i] = 0.0;
                self.axis_flags[i] = false;
            } else {
                self.rotation[i] = a;
                self.axis_flags[i] = true;
            }
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(&self.rotation)
    }

    pub fn volume(&self) -> f64 {
        self.scale.x * self.scale.y * self.scale.z
    }

    /// Maps a point of the canonical cube to world space: `R·diag(S)·p + T`.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * self.scale.component_mul(p) + self.translation
    }

    /// World point to canonical cube coordinates.
    pub fn to_local(&self, c: &Vector3<f64>) -> Vector3<f64> {
        (self.rotation_matrix().transpose() * (c - self.translation)).component_div(&self.scale)
    }

    pub fn contains(&self, c: &Vector3<f64>) -> bool {
        self.to_local(c).amax() <= 0.5
    }

    /// Euclidean distance from `c` to the solid cuboid, zero inside.
    pub fn distance(&self, c: &Vector3<f64>) -> f64 {
        let local = self.rotation_matrix().transpose() * (c - self.translation);
        let half = self.scale * 0.5;
        let mut d2 = 0.0;
        for i in 0..3 {
            let excess = local[i].abs() - half[i];
            if excess > 0.0 {
                d2 += excess * excess;
            }
        }
        d2.sqrt()
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let r = self.rotation_matrix();
        let mut out = [Vector3::zeros(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            let p = Vector3::new(
                if k & 1 == 0 { -0.5 } else { 0.5 },
                if k & 2 == 0 { -0.5 } else { 0.5 },
                if k & 4 == 0 { -0.5 } else { 0.5 },
            );
            *c = r * self.scale.component_mul(&p) + self.translation;
        }
        out
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.corners().iter()).expect("eight corners")
    }

    /// The canonical lattice mapped into world space.
    pub fn transform_lattice(&self, lattice: &CubeLattice) -> Vec<Vector3<f64>> {
        let r = self.rotation_matrix();
        lattice
            .points()
            .iter()
            .map(|p| r * self.scale.component_mul(p) + self.translation)
            .collect()
    }

    pub fn surface_area(&self) -> f64 {
        let s = &self.scale;
        2.0 * (s.x * s.y + s.y * s.z + s.x * s.z)
    }
}

/// Coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Self::ALL[i % 3]
    }
}

/// Axis-aligned plane `{ p : p[axis] = offset }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub axis: Axis,
    pub offset: f64,
}

impl Plane {
    pub fn new(axis: Axis, offset: f64) -> Self {
        Plane { axis, offset }
    }

    pub fn reflect(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut q = *p;
        let i = self.axis.index();
        q[i] = 2.0 * self.offset - q[i];
        q
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        p[self.axis.index()] - self.offset
    }
}

/// Reflection of `prim` across an axis-aligned plane.
///
/// Reflecting across the plane normal to axis `k` conjugates each axis
/// rotation: the angle about `k` is kept and the two in-plane angles change
/// sign. The canonical lattice is symmetric, so the reflected point set is the
/// lattice of the returned primitive.
pub fn mirror_primitive(prim: &Primitive, plane: &Plane) -> Primitive {
    let mut out = *prim;
    out.translation = plane.reflect(&prim.translation);
    let k = plane.axis.index();
    for i in 0..3 {
        if i != k && prim.rotation[i] != 0.0 {
            out.rotation[i] = wrap_angle(-prim.rotation[i]);
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct PrimitiveRecord {
    scale: [f64; 3],
    translation: [f64; 3],
    rotation: [f64; 3],
    axis_flags: [u8; 3],
    symmetric: bool,
}

impl From<Primitive> for PrimitiveRecord {
    fn from(p: Primitive) -> Self {
        PrimitiveRecord {
            scale: p.scale.into(),
            translation: p.translation.into(),
            rotation: p.rotation.into(),
            axis_flags: p.axis_flags.map(u8::from),
            symmetric: p.symmetric,
        }
    }
}

impl TryFrom<PrimitiveRecord> for Primitive {
    type Error = String;

    fn try_from(r: PrimitiveRecord) -> std::result::Result<Self, String> {
        let mut flags = [false; 3];
        for (f, v) in flags.iter_mut().zip(r.axis_flags) {
            *f = match v {
                0 => false,
                1 => true,
                other => return Err(format!("axis flag must be 0 or 1, got {other}")),
            };
        }
        Ok(Primitive {
            scale: r.scale.into(),
            translation: r.translation.into(),
            rotation: r.rotation.into(),
            axis_flags: flags,
            symmetric: r.symmetric,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prim_strategy() -> impl Strategy<Value = Primitive> {
        (
            prop::array::uniform3(0.1f64..3.0),
            prop::array::uniform3(-5.0f64..5.0),
            prop::array::uniform3(-3.1f64..3.1),
        )
            .prop_map(|(s, t, r)| Primitive::new(s.into(), t.into(), r.into()))
    }

    #[test]
    fn mirror_on_plane_is_identity() {
        let p = Primitive::axis_aligned(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.0, 1.0, -1.0));
        assert_eq!(mirror_primitive(&p, &Plane::new(Axis::X, 0.0)), p);
    }

    #[test]
    fn mirror_reflects_translation() {
        let p = Primitive::axis_aligned(Vector3::new(1.0, 1.0, 1.0), Vector3::new(1.0, 0.0, 0.0));
        let m = mirror_primitive(&p, &Plane::new(Axis::X, 0.0));
        assert_eq!(m.translation, Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn distance_is_zero_inside_and_euclidean_outside() {
        let p = Primitive::axis_aligned(Vector3::new(2.0, 2.0, 2.0), Vector3::zeros());
        assert_eq!(p.distance(&Vector3::new(0.5, 0.5, 0.5)), 0.0);
        assert!((p.distance(&Vector3::new(4.0, 0.0, 0.0)) - 3.0).abs() < 1e-12);
        assert!((p.distance(&Vector3::new(2.0, 2.0, 1.0)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn record_rejects_bad_flags() {
        let json = r#"{"scale":[1,1,1],"translation":[0,0,0],"rotation":[0,0,0],"axis_flags":[0,2,0],"symmetric":false}"#;
        assert!(serde_json::from_str::<Primitive>(json).is_err());
    }

    proptest! {
        #[test]
        fn mirror_is_involution(p in prim_strategy(), axis in 0usize..3, off in -2.0f64..2.0) {
            let plane = Plane::new(Axis::from_index(axis), off);
            let back = mirror_primitive(&mirror_primitive(&p, &plane), &plane);
            prop_assert!((back.translation - p.translation).amax() < 1e-12);
            prop_assert!((back.rotation - p.rotation).amax() < 1e-12);
            prop_assert_eq!(back.scale, p.scale);
        }

        #[test]
        fn mirrored_lattice_is_reflected_lattice(p in prim_strategy(), axis in 0usize..3, off in -2.0f64..2.0) {
            let lattice = CubeLattice::new(4);
            let plane = Plane::new(Axis::from_index(axis), off);
            let reflected: Vec<_> = p.transform_lattice(&lattice).iter().map(|q| plane.reflect(q)).collect();
            let mirrored = mirror_primitive(&p, &plane).transform_lattice(&lattice);
            // set equality: every reflected point has a partner and vice versa
            for a in &reflected {
                let best = mirrored.iter().map(|b| (a - b).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(best < 1e-9);
            }
            for b in &mirrored {
                let best = reflected.iter().map(|a| (a - b).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(best < 1e-9);
            }
        }

        #[test]
        fn serde_round_trip(p in prim_strategy()) {
            let s = serde_json::to_string(&p).unwrap();
            let back: Primitive = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
