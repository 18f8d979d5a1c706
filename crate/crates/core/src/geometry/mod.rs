//! Point clouds, meshes, rigid transforms and synthetic observations.

mod cloud;
pub mod io;
mod mesh;
mod rigid;
mod scan;
mod voxel;

pub use cloud::PointCloud;
pub use io::{load_mesh, load_point_cloud, save_mesh, save_point_cloud, Rgb};
pub use mesh::TriangleMesh;
pub use rigid::{apply_rigid, RigidParams};
pub use scan::{
    single_view_scan, tessellated_sphere, virtual_scan, Camera, ScanSettings, DEFAULT_FOV,
    DEFAULT_RESOLUTION, DEFAULT_SUBDIVISIONS,
};
pub use voxel::{voxel_downsample, DEFAULT_LEAF};
