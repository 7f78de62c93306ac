use nalgebra::Vector3;

use super::{Aabb, Primitive, TriangleMesh};
use crate::error::{Error, Result};

/// `res³` cells covering a box; cell `(i, j, k)` is centered at
/// `min + (idx + 0.5) · cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub bounds: Aabb,
    pub res: usize,
}

impl GridSpec {
    pub fn new(bounds: Aabb, res: usize) -> Result<Self> {
        if res == 0 {
            return Err(Error::invalid("voxel resolution must be at least 1"));
        }
        Ok(GridSpec { bounds, res })
    }

    pub fn cell_size(&self) -> Vector3<f64> {
        self.bounds.extent() / self.res as f64
    }

    pub fn len(&self) -> usize {
        self.res.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.res == 0
    }

    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.res + j) * self.res + k
    }

    pub fn unlinear(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.res;
        let j = (idx / self.res) % self.res;
        let i = idx / (self.res * self.res);
        [i, j, k]
    }

    pub fn center(&self, idx: usize) -> Vector3<f64> {
        let [i, j, k] = self.unlinear(idx);
        let cell = self.cell_size();
        self.bounds.min
            + Vector3::new(
                (i as f64 + 0.5) * cell.x,
                (j as f64 + 0.5) * cell.y,
                (k as f64 + 0.5) * cell.z,
            )
    }

    /// Cell containing `p`, `None` outside the box. Points on the max faces
    /// belong to the last cell.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        let cell = self.cell_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            idx[a] = if cell[a] > 0.0 {
                (((p[a] - self.bounds.min[a]) / cell[a]) as usize).min(self.res - 1)
            } else {
                0
            };
        }
        Some(self.linear(idx[0], idx[1], idx[2]))
    }

    pub fn centers(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..self.len()).map(move |i| self.center(i))
    }
}

/// Boolean occupancy over a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub cells: Vec<bool>,
}

impl VoxelGrid {
    pub fn from_fn(spec: GridSpec, inside: impl Fn(&Vector3<f64>) -> bool) -> Self {
        let cells = (0..spec.len()).map(|i| inside(&spec.center(i))).collect();
        VoxelGrid { spec, cells }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Plain-text dump: a `res` header line, then one row of `0`/`1` per
    /// `(i, j)` pair listing the `k` cells.
    pub fn to_text(&self) -> String {
        let r = self.spec.res;
        let mut s = format!("{r}\n");
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    s.push(if self.cells[self.spec.linear(i, j, k)] { '1' } else { '0' });
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Solid whose interior can be voxelized.
#[derive(Debug, Clone, Copy)]
pub enum Solid<'a> {
    Mesh(&'a TriangleMesh),
    Primitives(&'a [Primitive]),
}

impl Solid<'_> {
    pub fn bounds(&self) -> Result<Aabb> {
        match self {
            Solid::Mesh(m) => m.bounds().ok_or(Error::EmptyMesh),
            Solid::Primitives(ps) => ps
                .iter()
                .map(|p| p.bounds())
                .reduce(|a, b| a.union(&b))
                .ok_or(Error::EmptyPrimitiveSet),
        }
    }

    pub fn contains(&self, c: &Vector3<f64>) -> bool {
        match self {
            Solid::Mesh(m) => m.contains(c),
            Solid::Primitives(ps) => ps.iter().any(|p| p.contains(c)),
        }
    }
}

/// Occupancy of `source` on a `res³` grid over its own tight bounding box.
pub fn voxel_occupancy(source: Solid<'_>, res: usize) -> Result<VoxelGrid> {
    let spec = GridSpec::new(source.bounds()?, res)?;
    occupancy_on(source, &spec)
}

/// Occupancy of `source` sampled at the cell centers of `spec`.
pub fn occupancy_on(source: Solid<'_>, spec: &GridSpec) -> Result<VoxelGrid> {
    match source {
        Solid::Mesh(m) if m.is_empty() => return Err(Error::EmptyMesh),
        Solid::Primitives([]) => return Err(Error::EmptyPrimitiveSet),
        _ => {}
    }
    Ok(VoxelGrid::from_fn(*spec, |c| source.contains(c)))
}
