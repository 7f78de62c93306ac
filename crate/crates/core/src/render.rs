//! Orthographic depth rendering of meshes from random near-horizontal views.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::{DepthImage, DEPTH_SIZE};
use crate::error::{Error, Result};
use crate::geom::TriangleMesh;
use crate::synth::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub views: usize,
    /// Largest accepted angle between the view direction and the
    /// horizontal (xy) plane, in degrees.
    pub max_elevation_deg: f64,
    /// Fraction of the frame width covered by the bounding sphere.
    pub fill: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            views: 5,
            max_elevation_deg: 20.0,
            fill: 0.8,
        }
    }
}

/// Uniform directions on the unit sphere, rejected until their elevation is
/// within the band.
pub fn sample_view_directions(n: usize, max_elevation_deg: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut r = rng(seed);
    let limit = max_elevation_deg.to_radians().sin();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Vector3::new(
            r.sample::<f64, _>(StandardNormal),
            r.sample::<f64, _>(StandardNormal),
            r.sample::<f64, _>(StandardNormal),
        );
        let len = v.norm();
        if len < 1e-12 {
            continue;
        }
        let v = v / len;
        if v.z.abs() <= limit {
            out.push(v);
        }
    }
    out
}

fn bounding_sphere(mesh: &TriangleMesh) -> Result<(Vector3<f64>, f64)> {
    let b = mesh.bounds().ok_or(Error::EmptyMesh)?;
    let c = b.center();
    let r = mesh.vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
    if !(r > 0.0) {
        return Err(Error::EmptyMesh);
    }
    Ok((c, r))
}

/// Image-plane frame for a camera looking along `-dir`: (right, up).
fn camera_frame(dir: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let world_up = if dir.z.abs() < 0.99 { Vector3::z() } else { Vector3::y() };
    let right = world_up.cross(dir).normalize();
    let up = dir.cross(&right);
    (right, up)
}

/// Depth of `mesh` seen from direction `dir` (pointing from the shape
/// toward the camera). The camera plane sits `2r` from the bounding-sphere
/// center; hit distances over the sphere's depth range `[r, 3r]` map
/// linearly to values from 1 (nearest) to 0, and misses are 0. Pixel
/// values equal a ray cast through each pixel center.
pub fn render_view(mesh: &TriangleMesh, dir: &Vector3<f64>, fill: f64) -> Result<DepthImage> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !(fill > 0.0 && fill <= 1.0) {
        return Err(Error::invalid("fill must lie in (0, 1]"));
    }
    let dir = dir.normalize();
    let (c, r) = bounding_sphere(mesh)?;
    let (right, up) = camera_frame(&dir);
    let half = r / fill;
    let n = DEPTH_SIZE as f64;
    // pixel coordinates (continuous, pixel centers at k + 0.5) and distance
    let project = |p: &Vector3<f64>| {
        let d = p - c;
        let col = (d.dot(&right) / half + 1.0) * 0.5 * n;
        let row = (1.0 - d.dot(&up) / half) * 0.5 * n;
        (col, row, 2.0 * r - d.dot(&dir))
    };
    let proj: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(project).collect();
    let mut zbuf = vec![f64::INFINITY; DEPTH_SIZE * DEPTH_SIZE];
    for f in &mesh.faces {
        let [a, b, cc] = f.map(|i| proj[i]);
        let area = (b.0 - a.0) * (cc.1 - a.1) - (b.1 - a.1) * (cc.0 - a.0);
        if area.abs() < 1e-14 {
            continue; // edge-on
        }
        let lo_c = a.0.min(b.0).min(cc.0).floor().max(0.0) as usize;
        let hi_c = (a.0.max(b.0).max(cc.0).ceil().min(n) as usize).min(DEPTH_SIZE);
        let lo_r = a.1.min(b.1).min(cc.1).floor().max(0.0) as usize;
        let hi_r = (a.1.max(b.1).max(cc.1).ceil().min(n) as usize).min(DEPTH_SIZE);
        for row in lo_r..hi_r {
            let y = row as f64 + 0.5;
            for col in lo_c..hi_c {
                let x = col as f64 + 0.5;
                let w0 = ((b.0 - x) * (cc.1 - y) - (b.1 - y) * (cc.0 - x)) / area;
                let w1 = ((cc.0 - x) * (a.1 - y) - (cc.1 - y) * (a.0 - x)) / area;
                let w2 = 1.0 - w0 - w1;
                let eps = -1e-9;
                if w0 < eps || w1 < eps || w2 < eps {
                    continue;
                }
                let t = w0 * a.2 + w1 * b.2 + w2 * cc.2;
                let k = row * DEPTH_SIZE + col;
                if t < zbuf[k] {
                    zbuf[k] = t;
                }
            }
        }
    }
    let values = zbuf
        .into_iter()
        .map(|t| if t.is_finite() { depth_value(t, r) } else { 0.0 })
        .collect();
    DepthImage::new(values)
}

/// Stored value for a hit at distance `t` from the camera plane.
pub fn depth_value(t: f64, radius: f64) -> f64 {
    (1.0 - (t - radius) / (2.0 * radius)).clamp(0.0, 1.0)
}

/// `cfg.views` depth images from seeded random directions.
pub fn render_depth(mesh: &TriangleMesh, cfg: &RenderConfig, seed: u64) -> Result<Vec<DepthImage>> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    sample_view_directions(cfg.views, cfg.max_elevation_deg, seed)
        .iter()
        .map(|d| render_view(mesh, d, cfg.fill))
        .collect()
}
