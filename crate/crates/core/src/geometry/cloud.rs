use nalgebra::{Matrix3xX, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Ordered, non-empty set of finite 3D points, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    points: Vec<Vector3<T>>,
    frame_id: String,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud has no points"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            points,
            frame_id: String::new(),
        })
    }

    pub fn from_arrays(points: &[[T; 3]]) -> Result<Self> {
        Self::new(
            points
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
        )
    }

    pub fn with_frame(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector3<T>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false: a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vector3<T>> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Vector3<T> {
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        sum / lit::<T>(self.points.len() as f64)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Vector3<T>, Vector3<T>) {
        let first = self.points[0];
        self.points[1..]
            .iter()
            .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)))
    }

    /// Points as the columns of a 3×N matrix.
    pub fn to_matrix(&self) -> Matrix3xX<T> {
        Matrix3xX::from_columns(&self.points)
    }

    /// Applies `f` to every point, keeping the frame label.
    pub fn map(&self, f: impl FnMut(&Vector3<T>) -> Vector3<T>) -> Result<Self> {
        let points = self.points.iter().map(f).collect();
        Ok(Self::new(points)?.with_frame(self.frame_id.clone()))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        Ok(Self::new(points)?.with_frame(self.frame_id.clone()))
    }

    /// Concatenates clouds in order; the frame label of the first is kept.
    pub fn concat(clouds: &[Self]) -> Result<Self> {
        let points: Vec<_> = clouds
            .iter()
            .flat_map(|c| c.points.iter().copied())
            .collect();
        let frame = clouds
            .first()
            .map(|c| c.frame_id.clone())
            .unwrap_or_default();
        Ok(Self::new(points)?.with_frame(frame))
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|c| lit::<U>(to_f64(c))))
                .collect(),
            frame_id: self.frame_id.clone(),
        }
    }
}

impl<'a, T: Real> IntoIterator for &'a PointCloud<T> {
    type Item = &'a Vector3<T>;
    type IntoIter = std::slice::Iter<'a, Vector3<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}
