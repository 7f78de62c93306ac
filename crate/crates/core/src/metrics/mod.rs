//! Volumetric IoU, normalized surface distance and face-labeling accuracy.

mod hungarian;
mod report;

use std::collections::BTreeMap;

use nalgebra::Vector3;

pub use hungarian::hungarian;
pub use report::{ClassSummary, EvalReport, ShapeEval};

use crate::error::{Error, Result};
use crate::geom::{occupancy_on, Aabb, GridSpec, PointIndex, Primitive, Solid, TriangleMesh, VoxelGrid};

/// Grid resolution of the IoU voxelization.
pub const IOU_RES: usize = 30;
/// Surface samples per side for the surface distance.
pub const SURFACE_SAMPLES: usize = 5000;

/// `|A ∩ B| / |A ∪ B|` of two occupancy grids; 0 for an empty union.
pub fn iou_grids(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.cells.len() != b.cells.len() {
        return Err(Error::ShapeMismatch("occupancy grids differ in size".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.cells.iter().zip(&b.cells) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// IoU of `pred` against a solid ground truth on a `res³` grid over the
/// ground truth's bounding box. Predicted volume outside that box is clipped.
pub fn iou_solid(pred: &[Primitive], gt: Solid<'_>, res: usize) -> Result<f64> {
    let spec = GridSpec::new(gt.bounds()?, res)?;
    let g = occupancy_on(gt, &spec)?;
    let p = if pred.is_empty() {
        VoxelGrid::from_fn(spec, |_| false)
    } else {
        occupancy_on(Solid::Primitives(pred), &spec)?
    };
    iou_grids(&p, &g)
}

/// IoU of a primitive set against a ground-truth mesh at 30³.
pub fn iou(pred: &[Primitive], gt: &TriangleMesh) -> Result<f64> {
    iou_solid(pred, Solid::Mesh(gt), IOU_RES)
}

/// Which nearest-neighbor directions enter the surface distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Symmetric,
    PredToGt,
    GtToPred,
}

fn mean_nn(from: &[Vector3<f64>], to: &PointIndex) -> f64 {
    let s: f64 = from.iter().map(|p| to.nearest(p).map_or(0.0, |(_, d)| d)).sum();
    s / from.len() as f64
}

/// Mean nearest-neighbor distance between surface samples of the
/// primitives and of `gt`, divided by the ground truth's bounding-box
/// diagonal (the diameter of its box's circumsphere).
pub fn surface_distance_with(
    pred: &[Primitive],
    gt: &TriangleMesh,
    n_samples: usize,
    seed: u64,
    direction: Direction,
) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyPrimitiveSet);
    }
    let diameter = gt.bounds().ok_or(Error::EmptyMesh)?.diagonal();
    let parts: Vec<_> = pred.iter().map(TriangleMesh::from_primitive).collect();
    let pm = TriangleMesh::merge(&parts, false);
    let a = pm.sample_surface(n_samples, seed)?.points;
    let b = gt.sample_surface(n_samples, seed.wrapping_add(1))?.points;
    let d = match direction {
        Direction::PredToGt => mean_nn(&a, &PointIndex::new(&b)),
        Direction::GtToPred => mean_nn(&b, &PointIndex::new(&a)),
        Direction::Symmetric => {
            0.5 * (mean_nn(&a, &PointIndex::new(&b)) + mean_nn(&b, &PointIndex::new(&a)))
        }
    };
    Ok(if diameter > 0.0 { d / diameter } else { d })
}

pub fn surface_distance(pred: &[Primitive], gt: &TriangleMesh, n_samples: usize, seed: u64) -> Result<f64> {
    surface_distance_with(pred, gt, n_samples, seed, Direction::Symmetric)
}

/// Most frequent key, ties to the smallest.
fn majority(counts: &BTreeMap<u32, usize>) -> Option<u32> {
    counts
        .iter()
        .fold(None, |best: Option<(u32, usize)>, (&k, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .map(|(k, _)| k)
}

/// Index of the primitive nearest to `p` (distance to the solid), ties to
/// the lowest index.
pub fn nearest_primitive(prims: &[Primitive], p: &Vector3<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, q) in prims.iter().enumerate() {
        let d = q.distance(p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Face-labeling accuracy of a labeled primitive segmentation.
///
/// Samples `10 × faces` surface points, labels each with the segment of
/// its nearest primitive, takes a per-face majority vote, maps every
/// predicted segment to the ground-truth label most common among its faces,
/// and returns the fraction of faces labeled correctly. Faces that receive
/// no sample vote with their centroid.
pub fn face_label_accuracy(
    pred: &[Primitive],
    pred_labels: &[u32],
    gt: &TriangleMesh,
    seed: u64,
) -> Result<f64> {
    let gt_labels = gt.labels.as_ref().ok_or(Error::Unlabeled)?;
    if pred.is_empty() {
        return Err(Error::EmptyPrimitiveSet);
    }
    if pred_labels.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} primitives",
            pred_labels.len(),
            pred.len()
        )));
    }
    let nf = gt.faces.len();
    let samples = gt.sample_surface_with_faces(10 * nf, seed)?;
    let mut votes: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); nf];
    for (p, &f) in samples.points.iter().zip(&samples.faces) {
        *votes[f].entry(pred_labels[nearest_primitive(pred, p)]).or_default() += 1;
    }
    let face_pred: Vec<u32> = (0..nf)
        .map(|f| {
            majority(&votes[f]).unwrap_or_else(|| {
                let [a, b, c] = gt.triangle(f);
                pred_labels[nearest_primitive(pred, &((a + b + c) / 3.0))]
            })
        })
        .collect();
    let mut by_segment: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for f in 0..nf {
        *by_segment.entry(face_pred[f]).or_default().entry(gt_labels[f]).or_default() += 1;
    }
    let relabel: BTreeMap<u32, u32> = by_segment
        .iter()
        .map(|(&s, c)| (s, majority(c).expect("segment has faces")))
        .collect();
    let correct = (0..nf).filter(|&f| relabel[&face_pred[f]] == gt_labels[f]).count();
    Ok(correct as f64 / nf as f64)
}

/// Distance from each generator cuboid's center to its Hungarian-matched
/// predicted center (`None` for unmatched generator cuboids when fewer
/// primitives were predicted).
pub fn matched_center_errors(pred: &[Primitive], gt: &[Primitive]) -> Vec<Option<f64>> {
    if pred.is_empty() {
        return vec![None; gt.len()];
    }
    let dist = |a: &Primitive, b: &Primitive| (a.translation - b.translation).norm();
    if gt.len() <= pred.len() {
        let cost: Vec<Vec<f64>> = gt.iter().map(|g| pred.iter().map(|p| dist(g, p)).collect()).collect();
        hungarian(&cost)
            .into_iter()
            .enumerate()
            .map(|(i, j)| Some(cost[i][j]))
            .collect()
    } else {
        let cost: Vec<Vec<f64>> = pred.iter().map(|p| gt.iter().map(|g| dist(g, p)).collect()).collect();
        let mut out = vec![None; gt.len()];
        for (i, j) in hungarian(&cost).into_iter().enumerate() {
            out[j] = Some(cost[i][j]);
        }
        out
    }
}

/// Bounding box of a primitive set.
pub fn primitive_bounds(prims: &[Primitive]) -> Option<Aabb> {
    prims.iter().map(|p| p.bounds()).reduce(|a, b| a.union(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{mesh_of, random_cuboid, rng};

    fn cube(t: [f64; 3], s: [f64; 3]) -> Primitive {
        Primitive::axis_aligned(s.into(), t.into())
    }

    #[test]
    fn identity_and_disjoint() {
        let p = [cube([0.0; 3], [1.0, 2.0, 0.5])];
        let m = mesh_of(&p);
        assert_eq!(iou(&p, &m).unwrap(), 1.0);
        assert_eq!(iou(&[cube([5.0, 0.0, 0.0], [1.0; 3])], &m).unwrap(), 0.0);
        assert_eq!(iou(&[], &m).unwrap(), 0.0);
    }

    #[test]
    fn iou_matches_cell_counting() {
        let mut r = rng(31);
        for _ in 0..5 {
            let a = random_cuboid(&mut r, true);
            let b = random_cuboid(&mut r, true);
            let spec = GridSpec::new(a.bounds(), 30).unwrap();
            let (mut i, mut u) = (0, 0);
            for c in spec.centers() {
                let (x, y) = (a.contains(&c), b.contains(&c));
                i += usize::from(x && y);
                u += usize::from(x || y);
            }
            let got = iou_solid(&[b], Solid::Primitives(&[a]), 30).unwrap();
            assert_eq!(got, i as f64 / u as f64);
            assert_eq!(got, iou(&[b], &mesh_of(&[a])).unwrap());
        }
    }

    #[test]
    fn grid_iou_symmetric() {
        let mut r = rng(3);
        let (a, b) = (random_cuboid(&mut r, true), random_cuboid(&mut r, false));
        let spec = GridSpec::new(a.bounds().union(&b.bounds()), 20).unwrap();
        let ga = occupancy_on(Solid::Primitives(&[a]), &spec).unwrap();
        let gb = occupancy_on(Solid::Primitives(&[b]), &spec).unwrap();
        assert_eq!(iou_grids(&ga, &gb).unwrap(), iou_grids(&gb, &ga).unwrap());
        assert_eq!(iou_grids(&ga, &ga).unwrap(), 1.0);
    }

    #[test]
    fn coincident_surfaces_are_close() {
        let p = [cube([0.0; 3], [1.0, 0.6, 0.3])];
        let d = surface_distance(&p, &mesh_of(&p), SURFACE_SAMPLES, 4).unwrap();
        assert!(d < 0.01, "{d}");
    }

    #[test]
    fn slab_gap_matches_analytic_offset() {
        // two thin slabs stacked with a gap g along z
        let (w, h, g) = (1.0, 0.002, 0.1);
        let gt = [cube([0.0; 3], [w, w, h])];
        let pred = [cube([0.0, 0.0, g], [w, w, h])];
        let diam = mesh_of(&gt).bounds().unwrap().diagonal();
        let d = surface_distance(&pred, &mesh_of(&gt), SURFACE_SAMPLES, 1).unwrap();
        let expect = g / diam;
        assert!((d - expect).abs() < 0.1 * expect, "{d} vs {expect}");
    }

    #[test]
    fn sample_count_convergence() {
        let mut r = rng(8);
        for _ in 0..3 {
            let a = random_cuboid(&mut r, true);
            let b = random_cuboid(&mut r, true);
            let m = mesh_of(&[a]);
            let d1 = surface_distance(&[b], &m, 5000, 2).unwrap();
            let d2 = surface_distance(&[b], &m, 10000, 3).unwrap();
            assert!((d1 - d2).abs() < 0.05 * d1, "{d1} {d2}");
        }
    }

    #[test]
    fn empty_prediction_is_an_error() {
        let m = mesh_of(&[cube([0.0; 3], [1.0; 3])]);
        assert!(surface_distance(&[], &m, 10, 0).is_err());
    }

    fn two_part() -> ([Primitive; 2], TriangleMesh) {
        let parts = [cube([-0.6, 0.0, 0.0], [1.0; 3]), cube([0.6, 0.0, 0.0], [1.0; 3])];
        (parts, mesh_of(&parts))
    }

    #[test]
    fn exact_segmentation_scores_one() {
        let (parts, mesh) = two_part();
        assert_eq!(face_label_accuracy(&parts, &[0, 1], &mesh, 3).unwrap(), 1.0);
        // permuted segment ids are absorbed by the relabeling
        assert_eq!(face_label_accuracy(&parts, &[7, 2], &mesh, 3).unwrap(), 1.0);
    }

    #[test]
    fn single_primitive_scores_majority_share() {
        // 7 faces labeled 0, 3 labeled 1
        let v = (0..30).map(|i| Vector3::new(i as f64, (i % 3) as f64 * 0.5, (i % 2) as f64)).collect();
        let faces: Vec<[usize; 3]> = (0..10).map(|f| [3 * f, 3 * f + 1, 3 * f + 2]).collect();
        let labels = (0..10).map(|f| u32::from(f >= 7)).collect();
        let mesh = TriangleMesh::new(v, faces, Some(labels)).unwrap();
        let all = [cube([15.0, 0.5, 0.5], [40.0, 2.0, 2.0])];
        assert_eq!(mesh.faces.len(), 10);
        assert_eq!(face_label_accuracy(&all, &[0], &mesh, 1).unwrap(), 0.7);
    }

    #[test]
    fn unlabeled_ground_truth_is_an_error() {
        let (parts, mut mesh) = two_part();
        mesh.labels = None;
        assert!(matches!(face_label_accuracy(&parts, &[0, 1], &mesh, 0), Err(Error::Unlabeled)));
    }

    #[test]
    fn segmentation_matches_direct_recount() {
        let (parts, mesh) = two_part();
        // a split plane shifted off the true boundary
        let pred = [cube([-0.4, 0.0, 0.0], [1.2, 1.0, 1.0]), cube([0.6, 0.0, 0.0], [0.8, 1.0, 1.0])];
        let got = face_label_accuracy(&pred, &[0, 1], &mesh, 5).unwrap();
        // independent recount
        let labels = mesh.labels.as_ref().unwrap();
        let s = mesh.sample_surface_with_faces(10 * mesh.faces.len(), 5).unwrap();
        let nf = mesh.faces.len();
        let mut c = vec![[0usize; 2]; nf];
        for (p, &f) in s.points.iter().zip(&s.faces) {
            let d: Vec<f64> = pred.iter().map(|q| q.distance(p)).collect();
            c[f][usize::from(d[1] < d[0])] += 1;
        }
        let fp: Vec<usize> = (0..nf)
            .map(|f| {
                if c[f] == [0, 0] {
                    let [a, b, cc] = mesh.triangle(f);
                    let m = (a + b + cc) / 3.0;
                    usize::from(pred[1].distance(&m) < pred[0].distance(&m))
                } else {
                    usize::from(c[f][1] > c[f][0])
                }
            })
            .collect();
        let mut seg = [[0usize; 2]; 2];
        for f in 0..nf {
            seg[fp[f]][labels[f] as usize] += 1;
        }
        let map = [0, 1].map(|s| u32::from(seg[s][1] > seg[s][0]));
        let want = (0..nf).filter(|&f| map[fp[f]] == labels[f]).count() as f64 / nf as f64;
        assert_eq!(got, want);
        let _ = parts;
    }

    #[test]
    fn center_matching() {
        let gt = [cube([0.0; 3], [1.0; 3]), cube([3.0, 0.0, 0.0], [1.0; 3])];
        let pred = [cube([3.1, 0.0, 0.0], [1.0; 3]), cube([0.0, 0.2, 0.0], [1.0; 3]), cube([9.0; 3], [1.0; 3])];
        let e = matched_center_errors(&pred, &gt);
        assert!((e[0].unwrap() - 0.2).abs() < 1e-12);
        assert!((e[1].unwrap() - 0.1).abs() < 1e-12);
        let e = matched_center_errors(&pred[..1], &gt);
        assert_eq!(e[0], None);
    }
}
