//! Binary image masks stored as packed bit rows.

use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// A single-part binary mask of `width × height` pixels.
///
/// Bits are packed into 64-bit words in row-major order, so set arithmetic
/// and pixel counts run a word at a time.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask2D {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for Mask2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask2D")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.x0 && u < self.x1 && v >= self.y0 && v < self.y1
    }
}

impl Mask2D {
    pub fn new(width: usize, height: usize) -> Self {
        let words = (width * height).div_ceil(64);
        Self {
            width,
            height,
            words: vec![0; words],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Self::new(width, height);
        for v in 0..height {
            for u in 0..width {
                if f(u, v) {
                    mask.set(u, v, true);
                }
            }
        }
        mask
    }

    /// Builds a mask from a row-major membership slice.
    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Result<Self, GeometryError> {
        if bits.len() != width * height {
            return Err(GeometryError::DimensionMismatch {
                expected: (width, height),
                found: (bits.len(), 1),
            });
        }
        let mut mask = Self::new(width, height);
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            mask.words[i / 64] |= 1 << (i % 64);
        }
        Ok(mask)
    }

    /// Mask covering every pixel of `region`.
    pub fn from_region(width: usize, height: usize, region: Region) -> Self {
        Self::from_fn(width, height, |u, v| region.contains(u, v))
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
    pub fn get(&self, u: usize, v: usize) -> bool {
        debug_assert!(u < self.width && v < self.height);
        let i = v * self.width + u;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        let i = v * self.width + u;
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Row-major indices of member pixels, ascending.
    pub fn iter_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let bit = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + bit)
                }
            })
        })
    }

    /// Member pixels as `(u, v)`, row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.iter_indices().map(move |i| (i % width, i / width))
    }

    fn check_same_dims(&self, other: &Mask2D) -> Result<(), GeometryError> {
        if self.dims() != other.dims() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    fn zip_words(&self, other: &Mask2D, op: impl Fn(u64, u64) -> u64) -> Result<Mask2D, GeometryError> {
        self.check_same_dims(other)?;
        Ok(Mask2D {
            width: self.width,
            height: self.height,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| op(*a, *b))
                .collect(),
        })
    }

    pub fn intersection(&self, other: &Mask2D) -> Result<Mask2D, GeometryError> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn union(&self, other: &Mask2D) -> Result<Mask2D, GeometryError> {
        self.zip_words(other, |a, b| a | b)
    }

    /// Pixels of `self` not in `other`.
    pub fn difference(&self, other: &Mask2D) -> Result<Mask2D, GeometryError> {
        self.zip_words(other, |a, b| a & !b)
    }

    pub fn intersection_count(&self, other: &Mask2D) -> Result<usize, GeometryError> {
        self.check_same_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn union_count(&self, other: &Mask2D) -> Result<usize, GeometryError> {
        self.check_same_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum())
    }

    /// Tight half-open bounding box, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<Region> {
        let mut region: Option<Region> = None;
        for (u, v) in self.iter_pixels() {
            let r = region.get_or_insert(Region {
                x0: u,
                y0: v,
                x1: u + 1,
                y1: v + 1,
            });
            r.x0 = r.x0.min(u);
            r.y0 = r.y0.min(v);
            r.x1 = r.x1.max(u + 1);
            r.y1 = r.y1.max(v + 1);
        }
        region
    }

    /// Loads an 8-bit single-channel PNG; any nonzero pixel is a member.
    pub fn load_png(path: &Path) -> Result<Self, GeometryError> {
        let img = image::open(path).map_err(|e| GeometryError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(GeometryError::Image {
                    path: path.display().to_string(),
                    message: format!("expected 8-bit single-channel mask, got {:?}", other.color()),
                })
            }
        };
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        Ok(Self::from_fn(w, h, |u, v| gray.get_pixel(u as u32, v as u32)[0] != 0))
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |u, v| {
            Luma([if self.get(u as usize, v as usize) { 255 } else { 0 }])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), GeometryError> {
        self.to_image().save(path).map_err(|e| GeometryError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Fraction of `part` pixels that also lie in `object`.
pub fn containment_ratio(part: &Mask2D, object: &Mask2D) -> Result<f64, GeometryError> {
    let inside = part.intersection_count(object)?;
    let total = part.count();
    if total == 0 {
        return Err(GeometryError::EmptyMask("part"));
    }
    Ok(inside as f64 / total as f64)
}

/// `|a ∩ b| / min(|a|, |b|)`; symmetric in its arguments.
pub fn mask_overlap(a: &Mask2D, b: &Mask2D) -> Result<f64, GeometryError> {
    let shared = a.intersection_count(b)?;
    let smaller = a.count().min(b.count());
    if smaller == 0 {
        return Err(GeometryError::EmptyMask("overlap operand"));
    }
    Ok(shared as f64 / smaller as f64)
}

/// Bounding box of `object` dilated by `padding` and clipped to the image.
pub fn crop_to_mask(
    image_width: usize,
    image_height: usize,
    object: &Mask2D,
    padding: usize,
) -> Result<Region, GeometryError> {
    if object.dims() != (image_width, image_height) {
        return Err(GeometryError::DimensionMismatch {
            expected: (image_width, image_height),
            found: object.dims(),
        });
    }
    let tight = object.bounding_box().ok_or(GeometryError::EmptyMask("object"))?;
    Ok(Region {
        x0: tight.x0.saturating_sub(padding),
        y0: tight.y0.saturating_sub(padding),
        x1: (tight.x1 + padding).min(image_width),
        y1: (tight.y1 + padding).min(image_height),
    })
}
