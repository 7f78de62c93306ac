use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aabb, PointCloud, Primitive};
use crate::error::{Error, Result};

/// Indexed triangle mesh with optional per-face part labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub labels: Option<Vec<u32>>,
}

/// Surface samples together with the face each one was drawn from.
#[derive(Debug, Clone)]
pub struct SurfaceSamples {
    pub points: Vec<Vector3<f64>>,
    pub faces: Vec<usize>,
}

impl TriangleMesh {
    /// Builds a mesh, rejecting out-of-range indices and dropping zero-area
    /// faces (and their labels).
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != faces.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} faces",
                    l.len(),
                    faces.len()
                )));
            }
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::invalid(format!(
                "face {f:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        let mut mesh = TriangleMesh {
            vertices,
            faces,
            labels,
        };
        mesh.drop_degenerate_faces();
        Ok(mesh)
    }

    fn drop_degenerate_faces(&mut self) {
        let scale = Aabb::from_points(&self.vertices).map_or(0.0, |b| b.diagonal());
        let tol = f64::EPSILON * scale * scale;
        let keep: Vec<bool> = (0..self.faces.len()).map(|f| self.face_area(f) > tol).collect();
        let mut k = keep.iter();
        self.faces.retain(|_| *k.next().unwrap());
        if let Some(labels) = &mut self.labels {
            let mut k = keep.iter();
            labels.retain(|_| *k.next().unwrap());
        }
    }

    /// Closed box mesh of a primitive (12 triangles, outward winding).
    pub fn from_primitive(prim: &Primitive) -> TriangleMesh {
        let c = prim.corners();
        // corner k has bit0 → +x, bit1 → +y, bit2 → +z
        const QUADS: [[usize; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        let mut faces = Vec::with_capacity(12);
        for q in QUADS {
            faces.push([q[0], q[1], q[2]]);
            faces.push([q[0], q[2], q[3]]);
        }
        TriangleMesh {
            vertices: c.to_vec(),
            faces,
            labels: None,
        }
    }

    /// Concatenates meshes, labelling each input's faces with its position
    /// in `parts` when `label_parts` is set.
    pub fn merge(parts: &[TriangleMesh], label_parts: bool) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        let mut labels = Vec::new();
        for (k, m) in parts.iter().enumerate() {
            let base = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.faces
                .extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
            labels.extend(std::iter::repeat_n(k as u32, m.faces.len()));
        }
        if label_parts {
            out.labels = Some(labels);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Box around the vertices referenced by faces.
    pub fn bounds(&self) -> Option<Aabb> {
        let used = self.faces.iter().flat_map(|f| f.iter().map(|&i| &self.vertices[i]));
        Aabb::from_points(used)
    }

    /// Area-weighted uniform samples on the surface, reproducible from `seed`.
    pub fn sample_surface_with_faces(&self, count: usize, seed: u64) -> Result<SurfaceSamples> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in 0..self.faces.len() {
            acc += self.face_area(f);
            cumulative.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let mut faces = Vec::with_capacity(count);
        for _ in 0..count {
            let u = rng.random::<f64>() * acc;
            let f = cumulative
                .partition_point(|&c| c <= u)
                .min(self.faces.len() - 1);
            let [a, b, c] = self.triangle(f);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
            faces.push(f);
        }
        Ok(SurfaceSamples { points, faces })
    }

    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<PointCloud> {
        Ok(PointCloud::new(self.sample_surface_with_faces(count, seed)?.points))
    }

    /// Generalized winding number of the surface around `p`: ~1 inside a
    /// closed outward-oriented surface, ~0 outside. Overlapping closed
    /// components add up.
    pub fn winding_number(&self, p: &Vector3<f64>) -> f64 {
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let (a, b, c) = (a - p, b - p, c - p);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let det = a.dot(&b.cross(&c));
            let div = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * det.atan2(div);
        }
        total / (4.0 * PI)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.winding_number(p) >= 0.5
    }
}
