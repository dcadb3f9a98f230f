use std::collections::HashSet;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Mask2D};

/// Image coordinate of the pixel a point was measured at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub u: u32,
    pub v: u32,
}

/// Ordered 3D points in meters, optionally tagged with their source pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    pixels: Option<Vec<Pixel>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self, GeometryError> {
        check_finite(&points)?;
        Ok(Self {
            points,
            pixels: None,
        })
    }

    pub fn with_pixels(points: Vec<Point3<f64>>, pixels: Vec<Pixel>) -> Result<Self, GeometryError> {
        check_finite(&points)?;
        if pixels.len() != points.len() {
            return Err(GeometryError::InvalidCloud(format!(
                "{} pixels for {} points",
                pixels.len(),
                points.len()
            )));
        }
        let mut seen = HashSet::with_capacity(pixels.len());
        if let Some(dup) = pixels.iter().find(|p| !seen.insert(**p)) {
            return Err(GeometryError::InvalidCloud(format!("duplicate source pixel {dup:?}")));
        }
        Ok(Self {
            points,
            pixels: Some(pixels),
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn pixels(&self) -> Option<&[Pixel]> {
        self.pixels.as_deref()
    }

    /// Sub-cloud made of the given indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            pixels: self
                .pixels
                .as_ref()
                .map(|px| indices.iter().map(|&i| px[i]).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Rasterizes the source pixels into a mask; `None` when the cloud carries no pixels.
    pub fn to_mask(&self, width: usize, height: usize) -> Option<Mask2D> {
        let pixels = self.pixels.as_ref()?;
        let mut mask = Mask2D::new(width, height);
        for p in pixels {
            mask.set(p.u as usize, p.v as usize, true);
        }
        Some(mask)
    }

    /// Smallest distance from `query` to any point of the cloud.
    pub fn min_distance(&self, query: &Point3<f64>) -> Option<f64> {
        self.points
            .iter()
            .map(|p| (p - query).norm_squared())
            .min_by(f64::total_cmp)
            .map(f64::sqrt)
    }
}

fn check_finite(points: &[Point3<f64>]) -> Result<(), GeometryError> {
    match points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
        Some(i) => Err(GeometryError::InvalidCloud(format!("non-finite point at index {i}"))),
        None => Ok(()),
    }
}
