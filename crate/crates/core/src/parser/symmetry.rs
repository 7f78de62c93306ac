use nalgebra::Vector3;

use crate::geom::{Aabb, Axis, Plane, PointIndex};

/// Mean distance from each reflected point to its nearest original point.
pub fn reflection_distance(points: &[Vector3<f64>], index: &PointIndex, plane: &Plane) -> f64 {
    let total: f64 = points
        .iter()
        .map(|p| index.nearest(&plane.reflect(p)).map_or(0.0, |(_, d)| d))
        .sum();
    total / points.len().max(1) as f64
}

/// Global mirror plane `x = median_x` when the cloud matches its reflection.
///
/// The cloud is symmetric when the mean reflection distance exceeds the
/// cloud's own median point spacing by less than `threshold` times the
/// bounding-box diagonal.
pub fn detect_symmetry(points: &[Vector3<f64>], threshold: f64) -> Option<Plane> {
    let bounds = Aabb::from_points(points)?;
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let median = if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    };
    let plane = Plane::new(Axis::X, median);
    let index = PointIndex::new(points);
    let spacing = super::space::median_spacing(&index);
    let d = reflection_distance(points, &index, &plane);
    (d <= spacing + threshold * bounds.diagonal()).then_some(plane)
}
