//! Ray-cast "virtual scanning" of meshes from pinhole cameras.

use nalgebra::{UnitQuaternion, Vector3};

use super::mesh::icosphere_unit;
use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub const DEFAULT_SUBDIVISIONS: usize = 1;
pub const DEFAULT_RESOLUTION: usize = 160;
/// Full field of view of the scanning camera, in radians (90°).
pub const DEFAULT_FOV: f64 = std::f64::consts::FRAC_PI_2;

/// Pinhole camera. The camera looks along its local +z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T: Real> {
    pub position: Vector3<T>,
    /// Camera-to-world rotation.
    pub orientation: UnitQuaternion<T>,
}

impl<T: Real> Camera<T> {
    /// Camera at `position` looking at `target`.
    pub fn looking_at(position: Vector3<T>, target: Vector3<T>) -> Result<Self> {
        let dir = target - position;
        if !(dir.norm() > lit(1e-12)) {
            return Err(Error::invalid("camera position coincides with its target"));
        }
        let up = if dir.normalize().z.abs() > lit(0.9) {
            Vector3::x()
        } else {
            Vector3::z()
        };
        Ok(Self {
            position,
            orientation: UnitQuaternion::face_towards(&dir, &up),
        })
    }

    pub fn view_axis(&self) -> Vector3<T> {
        self.orientation * Vector3::z()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSettings<T: Real> {
    /// Rays per image axis.
    pub resolution: usize,
    /// Full field of view in radians.
    pub fov: T,
}

impl<T: Real> Default for ScanSettings<T> {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            fov: lit(DEFAULT_FOV),
        }
    }
}

/// Cameras on the vertices of a subdivided icosahedron of radius `radius`,
/// each aimed at the origin. Subdivision `s` yields `10·4^s + 2` cameras.
pub fn tessellated_sphere<T: Real>(subdivisions: usize, radius: T) -> Result<Vec<Camera<T>>> {
    if subdivisions > 3 {
        return Err(Error::invalid("sphere subdivisions must be in 0..=3"));
    }
    if !(radius > T::zero()) {
        return Err(Error::invalid("camera sphere radius must be positive"));
    }
    let (dirs, _) = icosphere_unit::<T>(subdivisions);
    dirs.into_iter()
        .map(|d| Camera::looking_at(d * radius, Vector3::zeros()))
        .collect()
}

/// Union of the first ray hits over all cameras, concatenated in camera
/// order.
pub fn virtual_scan<T: Real>(
    mesh: &TriangleMesh<T>,
    cameras: &[Camera<T>],
    settings: &ScanSettings<T>,
) -> Result<PointCloud<T>> {
    if cameras.is_empty() {
        return Err(Error::invalid("virtual scan needs at least one camera"));
    }
    if settings.resolution == 0 || !(settings.fov > T::zero() && settings.fov < T::pi()) {
        return Err(Error::invalid(
            "scan resolution must be positive and fov in (0, π)",
        ));
    }
    let bvh = Bvh::build(mesh);
    let mut hits = Vec::new();
    for camera in cameras {
        scan_camera(&bvh, camera, settings, &mut hits);
    }
    if hits.is_empty() {
        return Err(Error::invalid(
            "no ray hit the mesh; check camera placement",
        ));
    }
    PointCloud::new(hits)
}

/// A single partial view: what one camera sees.
pub fn single_view_scan<T: Real>(
    mesh: &TriangleMesh<T>,
    camera: &Camera<T>,
    settings: &ScanSettings<T>,
) -> Result<PointCloud<T>> {
    virtual_scan(mesh, std::slice::from_ref(camera), settings)
}

fn scan_camera<T: Real>(
    bvh: &Bvh<T>,
    camera: &Camera<T>,
    settings: &ScanSettings<T>,
    out: &mut Vec<Vector3<T>>,
) {
    let res = settings.resolution;
    let half = (settings.fov * lit(0.5)).tan();
    let inv = lit::<T>(1.0 / res as f64);
    for row in 0..res {
        let v = (lit::<T>(2.0 * row as f64 + 1.0) * inv - T::one()) * half;
        for col in 0..res {
            let u = (lit::<T>(2.0 * col as f64 + 1.0) * inv - T::one()) * half;
            let dir = camera.orientation * Vector3::new(u, v, T::one()).normalize();
            if let Some(t) = bvh.first_hit(&camera.position, &dir) {
                out.push(camera.position + dir * t);
            }
        }
    }
}

struct Node<T: Real> {
    lo: Vector3<T>,
    hi: Vector3<T>,
    /// Leaf: range into `order`. Inner: child indices.
    kind: NodeKind,
}

enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

/// Bounding-volume hierarchy over triangles, split at the centroid median.
struct Bvh<T: Real> {
    triangles: Vec<[Vector3<T>; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

const LEAF_SIZE: usize = 4;

impl<T: Real> Bvh<T> {
    fn build(mesh: &TriangleMesh<T>) -> Self {
        let triangles: Vec<_> = mesh.triangles().collect();
        let centroids: Vec<Vector3<T>> = triangles
            .iter()
            .map(|[a, b, c]| (a + b + c) / lit::<T>(3.0))
            .collect();
        let mut bvh = Self {
            order: (0..triangles.len()).collect(),
            triangles,
            nodes: Vec::new(),
        };
        let n = bvh.order.len();
        bvh.build_node(&centroids, 0, n);
        bvh
    }

    fn build_node(&mut self, centroids: &[Vector3<T>], start: usize, end: usize) -> usize {
        let (mut lo, mut hi) = (
            self.triangles[self.order[start]][0],
            self.triangles[self.order[start]][0],
        );
        for &t in &self.order[start..end] {
            for v in &self.triangles[t] {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start > LEAF_SIZE {
            let extent = hi - lo;
            let axis = extent.imax();
            let mid = (start + end) / 2;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                centroids[a][axis]
                    .partial_cmp(&centroids[b][axis])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let left = self.build_node(centroids, start, mid);
            let right = self.build_node(centroids, mid, end);
            self.nodes[id].kind = NodeKind::Inner { left, right };
        }
        id
    }

    fn first_hit(&self, origin: &Vector3<T>, dir: &Vector3<T>) -> Option<T> {
        let inv = dir.map(|d| T::one() / d);
        let mut best: Option<T> = None;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let limit = best.unwrap_or_else(|| T::max_value().unwrap());
            if !slab_hit(&node.lo, &node.hi, origin, &inv, limit) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &t in &self.order[start..end] {
                        if let Some(d) = ray_triangle(origin, dir, &self.triangles[t]) {
                            if best.is_none_or(|b| d < b) {
                                best = Some(d);
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        best
    }
}

fn slab_hit<T: Real>(
    lo: &Vector3<T>,
    hi: &Vector3<T>,
    origin: &Vector3<T>,
    inv: &Vector3<T>,
    limit: T,
) -> bool {
    let mut tmin = T::zero();
    let mut tmax = limit;
    for k in 0..3 {
        let t1 = (lo[k] - origin[k]) * inv[k];
        let t2 = (hi[k] - origin[k]) * inv[k];
        // NaN (0·∞ on a slab boundary) falls through min/max as "no constraint".
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmin <= tmax
}

/// Möller–Trumbore; returns the ray parameter of a hit in front of the
/// origin.
fn ray_triangle<T: Real>(
    origin: &Vector3<T>,
    dir: &Vector3<T>,
    tri: &[Vector3<T>; 3],
) -> Option<T> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < lit(1e-14) {
        return None;
    }
    let inv_det = T::one() / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > lit(1e-9)).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_camera_counts() {
        assert_eq!(tessellated_sphere(0, 2.0f64).unwrap().len(), 12);
        assert_eq!(tessellated_sphere(1, 2.0f64).unwrap().len(), 42);
        assert!(tessellated_sphere(4, 2.0f64).is_err());
    }

    #[test]
    fn cameras_aim_at_origin() {
        for cam in tessellated_sphere(1, 1.5f64).unwrap() {
            assert!((cam.position.norm() - 1.5).abs() < 1e-12);
            // Distance from the origin to the view line.
            let off = cam.position.cross(&cam.view_axis()).norm();
            assert!(off < 1e-9, "{off}");
            assert!(cam.view_axis().dot(&cam.position) < 0.0);
        }
    }

    #[test]
    fn ray_hits_triangle_interior_only() {
        let tri = [
            Vector3::new(0.0f64, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
        ];
        let o = Vector3::new(0.2, 0.2, 0.0);
        assert!((ray_triangle(&o, &Vector3::z(), &tri).unwrap() - 1.0).abs() < 1e-12);
        assert!(ray_triangle(&Vector3::new(0.8, 0.8, 0.0), &Vector3::z(), &tri).is_none());
        assert!(ray_triangle(&o, &-Vector3::z(), &tri).is_none());
    }

    #[test]
    fn scan_is_deterministic() {
        let mesh = TriangleMesh::icosphere(Vector3::zeros(), 0.1f64, 2).unwrap();
        let cam = Camera::looking_at(Vector3::new(0.0, 0.0, 0.5), Vector3::zeros()).unwrap();
        let settings = ScanSettings {
            resolution: 40,
            ..Default::default()
        };
        let a = single_view_scan(&mesh, &cam, &settings).unwrap();
        let b = single_view_scan(&mesh, &cam, &settings).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_mesh_is_an_error() {
        let mesh = TriangleMesh::icosphere(Vector3::new(10.0, 0.0, 0.0), 0.1f64, 1).unwrap();
        let cam = Camera::looking_at(Vector3::new(0.0, 0.0, 0.5), Vector3::zeros()).unwrap();
        let settings = ScanSettings {
            resolution: 20,
            ..Default::default()
        };
        assert!(single_view_scan(&mesh, &cam, &settings).is_err());
    }
}
