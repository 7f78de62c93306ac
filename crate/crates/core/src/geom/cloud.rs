use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    /// Tight box around the points, `None` when the iterator is empty or any
    /// coordinate is non-finite.
    pub fn from_points<'a, I>(points: I) -> Option<Aabb>
    where
        I: IntoIterator<Item = &'a Vector3<f64>>,
    {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb::new(*first, *first);
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        let finite = b.min.iter().chain(b.max.iter()).all(|v| v.is_finite());
        finite.then_some(b)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Distance from `p` to the box, zero inside.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let e = (self.min[i] - p[i]).max(p[i] - self.max[i]).max(0.0);
            d2 += e * e;
        }
        d2.sqrt()
    }
}

/// Positive shape samples plus optional free-space samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub negatives: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            negatives: Vec::new(),
        }
    }

    pub fn with_negatives(points: Vec<Vector3<f64>>, negatives: Vec<Vector3<f64>>) -> Self {
        PointCloud { points, negatives }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    /// Checks that the cloud is nonempty, finite, and that no negative sample
    /// coincides with a positive one.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyTargetCloud);
        }
        let all = self.points.iter().chain(&self.negatives);
        if !all.flat_map(|p| p.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite point coordinate"));
        }
        if !self.negatives.is_empty() {
            let index = super::PointIndex::new(&self.points);
            for n in &self.negatives {
                if let Some((_, d)) = index.nearest(n) {
                    if d <= 1e-9 {
                        return Err(Error::invalid("negative sample coincides with a shape point"));
                    }
                }
            }
        }
        Ok(())
    }
}
