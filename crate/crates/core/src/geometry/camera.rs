use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Mask2D, Pixel, PointCloud};

/// Pinhole intrinsics of a calibrated RGB-D sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Projects a camera-frame point to the nearest pixel, if it lands inside the image.
    pub fn project(&self, p: &Point3<f64>) -> Option<Pixel> {
        if p.z <= 0.0 {
            return None;
        }
        let u = (p.x * self.fx / p.z + self.cx).round();
        let v = (p.y * self.fy / p.z + self.cy).round();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some(Pixel {
            u: u as u32,
            v: v as u32,
        })
    }
}

/// Metric depth image; zero marks a missing measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    meters: Vec<f64>,
}

impl DepthImage {
    pub fn from_meters(width: usize, height: usize, meters: Vec<f64>) -> Result<Self, GeometryError> {
        if meters.len() != width * height {
            return Err(GeometryError::DimensionMismatch {
                expected: (width, height),
                found: (meters.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            meters,
        })
    }

    pub fn from_millimeters(width: usize, height: usize, mm: &[u16]) -> Result<Self, GeometryError> {
        Self::from_meters(width, height, mm.iter().map(|&d| d as f64 / 1000.0).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.meters[v * self.width + u]
    }

    /// Loads a 16-bit single-channel PNG holding millimeters.
    pub fn load_png(path: &Path) -> Result<Self, GeometryError> {
        let img = image::open(path).map_err(|e| GeometryError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let img = match img {
            image::DynamicImage::ImageLuma16(g) => g,
            other => {
                return Err(GeometryError::Image {
                    path: path.display().to_string(),
                    message: format!("expected 16-bit single-channel depth, got {:?}", other.color()),
                })
            }
        };
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_millimeters(w, h, img.as_raw())
    }

    /// Writes the image as 16-bit millimeters (rounded, saturating).
    pub fn save_png(&self, path: &Path) -> Result<(), GeometryError> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |u, v| {
                let mm = (self.get(u as usize, v as usize) * 1000.0).round();
                Luma([mm.clamp(0.0, u16::MAX as f64) as u16])
            });
        buf.save(path).map_err(|e| GeometryError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Back-projects masked pixels with positive depth into camera-frame points.
///
/// Each point keeps the pixel it came from, in row-major scan order.
pub fn unproject(
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    mask: Option<&Mask2D>,
) -> Result<PointCloud, GeometryError> {
    intrinsics.validate()?;
    if depth.dims() != intrinsics.dims() {
        return Err(GeometryError::DimensionMismatch {
            expected: intrinsics.dims(),
            found: depth.dims(),
        });
    }
    if let Some(m) = mask {
        if m.dims() != intrinsics.dims() {
            return Err(GeometryError::DimensionMismatch {
                expected: intrinsics.dims(),
                found: m.dims(),
            });
        }
    }

    let mut points = Vec::new();
    let mut pixels = Vec::new();
    let mut visit = |u: usize, v: usize| {
        let d = depth.get(u, v);
        if d > 0.0 && d.is_finite() {
            points.push(Point3::new(
                (u as f64 - intrinsics.cx) * d / intrinsics.fx,
                (v as f64 - intrinsics.cy) * d / intrinsics.fy,
                d,
            ));
            pixels.push(Pixel {
                u: u as u32,
                v: v as u32,
            });
        }
    };
    match mask {
        Some(m) => m.iter_pixels().for_each(|(u, v)| visit(u, v)),
        None => {
            for v in 0..depth.height {
                for u in 0..depth.width {
                    visit(u, v);
                }
            }
        }
    }
    PointCloud::with_pixels(points, pixels)
}
