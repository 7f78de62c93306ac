//! Cuboid primitives, rotations, the canonical sample lattice, meshes and
//! voxel grids.

mod cloud;
mod lattice;
mod mesh;
mod primitive;
mod rotation;
mod spatial;
mod voxel;

pub use cloud::{Aabb, PointCloud};
pub use lattice::CubeLattice;
pub use mesh::{SurfaceSamples, TriangleMesh};
pub use primitive::{mirror_primitive, Axis, Plane, Primitive};
pub use rotation::{rot_x, rot_y, rot_z, rotation_jacobian, rotation_matrix, wrap_angle};
pub use spatial::PointIndex;
pub use voxel::{occupancy_on, voxel_occupancy, GridSpec, Solid, VoxelGrid};

pub type Vec3 = nalgebra::Vector3<f64>;
