use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Indexed triangle mesh. Faces are validated and zero-area faces dropped
/// on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh<T: Real> {
    vertices: Vec<Vector3<T>>,
    faces: Vec<[usize; 3]>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn new(vertices: Vec<Vector3<T>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::invalid(format!("mesh vertex {i} is not finite")));
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::invalid(format!(
                    "face {f} references vertex {bad} but mesh has {} vertices",
                    vertices.len()
                )));
            }
        }
        let faces: Vec<_> = faces
            .into_iter()
            .filter(|f| {
                let [a, b, c] = f.map(|i| vertices[i]);
                (b - a).cross(&(c - a)).norm() > lit(1e-15)
            })
            .collect();
        if faces.is_empty() {
            return Err(Error::invalid("mesh has no non-degenerate faces"));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Vector3<T>; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Vector3<T>; 3]> + '_ {
        (0..self.faces.len()).map(|f| self.triangle(f))
    }

    pub fn merge(meshes: &[Self]) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for m in meshes {
            let offset = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| f.map(|i| i + offset)));
        }
        Self::new(vertices, faces)
    }

    pub fn transformed(&self, f: impl Fn(&Vector3<T>) -> Vector3<T>) -> Result<Self> {
        Self::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vector3<T>, max: Vector3<T>) -> Result<Self> {
        let corner = |i: usize| {
            Vector3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        };
        let vertices = (0..8).map(corner).collect();
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3], // z min
            [4, 5, 6],
            [5, 7, 6], // z max
            [0, 1, 4],
            [1, 5, 4], // y min
            [2, 6, 3],
            [3, 6, 7], // y max
            [0, 4, 2],
            [2, 4, 6], // x min
            [1, 3, 5],
            [3, 7, 5], // x max
        ];
        Self::new(vertices, faces)
    }

    /// Closed cylinder along +z starting at `base`.
    pub fn cylinder(base: Vector3<T>, radius: T, height: T, segments: usize) -> Result<Self> {
        if segments < 3 {
            return Err(Error::invalid("cylinder needs at least 3 segments"));
        }
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for k in 0..segments {
            let a = lit::<T>(std::f64::consts::TAU * k as f64 / segments as f64);
            let ring = Vector3::new(radius * a.cos(), radius * a.sin(), T::zero());
            vertices.push(base + ring);
            vertices.push(base + ring + Vector3::new(T::zero(), T::zero(), height));
        }
        let bottom = vertices.len();
        vertices.push(base);
        let top = vertices.len();
        vertices.push(base + Vector3::new(T::zero(), T::zero(), height));
        let mut faces = Vec::with_capacity(4 * segments);
        for k in 0..segments {
            let (b0, t0) = (2 * k, 2 * k + 1);
            let (b1, t1) = (2 * ((k + 1) % segments), 2 * ((k + 1) % segments) + 1);
            faces.push([b0, b1, t0]);
            faces.push([t0, b1, t1]);
            faces.push([bottom, b1, b0]);
            faces.push([top, t0, t1]);
        }
        Self::new(vertices, faces)
    }

    /// Subdivided icosahedron projected onto a sphere.
    pub fn icosphere(center: Vector3<T>, radius: T, subdivisions: usize) -> Result<Self> {
        let (dirs, faces) = icosphere_unit::<T>(subdivisions);
        Self::new(
            dirs.into_iter().map(|d| center + d * radius).collect(),
            faces,
        )
    }

    /// Unsigned distance from `p` to the closest point of the surface.
    pub fn distance_to(&self, p: &Vector3<T>) -> T {
        self.triangles()
            .map(|[a, b, c]| (closest_point_on_triangle(p, &a, &b, &c) - p).norm())
            .fold(T::max_value().unwrap(), |m, d| m.min(d))
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub(crate) fn closest_point_on_triangle<T: Real>(
    p: &Vector3<T>,
    a: &Vector3<T>,
    b: &Vector3<T>,
    c: &Vector3<T>,
) -> Vector3<T> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= T::zero() && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= T::zero() && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = T::one() / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Unit icosphere: vertex directions and faces. Vertex count is
/// `10·4^s + 2`.
pub(crate) fn icosphere_unit<T: Real>(subdivisions: usize) -> (Vec<Vector3<T>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut verts: Vec<Vector3<f64>> = raw
        .iter()
        .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts.into_iter().map(|v| v.cast::<T>()).collect(), faces)
}
