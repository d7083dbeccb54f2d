//! Depth-adaptive face crop.
//!
//! The box side is `f·R/D` pixels: the average physical face extent `R`
//! (mm) projected through a pinhole of focal length `f` (px) at the head
//! distance `D` (mm), so the crop covers the same physical area at any
//! distance.

use serde::{Deserialize, Serialize};

use crate::data::{DepthMap, FaceSample, GrayImage, Image};
use crate::error::{Error, Result};

/// Side length of every crop.
pub const CROP_SIZE: usize = 96;

/// Smallest usable box side after clamping to the image.
pub const MIN_BOX_SIDE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropParams {
    pub fx: f64,
    pub fy: f64,
    /// Average face width in mm.
    pub rx: f64,
    /// Average face height in mm.
    pub ry: f64,
    /// Half-size of the square window averaged for the head distance.
    pub radius: usize,
}

impl CropParams {
    pub fn new(fx: f64, fy: f64) -> Result<Self> {
        let p = Self {
            fx,
            fy,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("fx", self.fx), ("fy", self.fy), ("rx", self.rx), ("ry", self.ry)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("crop parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Box extent `(w_H, h_H)` in pixels at head distance `distance_mm`.
    pub fn box_size(&self, distance_mm: f64) -> (f64, f64) {
        (self.fx * self.rx / distance_mm, self.fy * self.ry / distance_mm)
    }
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            fx: 365.0,
            fy: 365.0,
            rx: 320.0,
            ry: 320.0,
            radius: 5,
        }
    }
}

/// Axis-aligned crop box in continuous pixel coordinates (`x1`, `y1`
/// exclusive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Mean of the valid (non-zero) depth values in the `(2r+1)²` window
/// around `center`, clipped to the image.
pub fn estimate_head_distance(depth: &DepthMap, center: (f64, f64), radius: usize) -> Result<f64> {
    let cx = center.0.round() as i64;
    let cy = center.1.round() as i64;
    let r = radius as i64;
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    let (x0, x1) = ((cx - r).max(0), (cx + r).min(w - 1));
    let (y0, y1) = ((cy - r).max(0), (cy + r).min(h - 1));
    if x0 > x1 || y0 > y1 {
        return Err(Error::UnusableSample(format!(
            "depth window at ({}, {}) lies outside the image",
            center.0, center.1
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let v = depth.get(x as usize, y as usize);
            if v > 0 {
                sum += v as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::UnusableSample(format!(
            "no valid depth within {radius} px of ({}, {})",
            center.0, center.1
        )));
    }
    Ok(sum / count as f64)
}

/// Box of `f·R/D` pixels centered on the head, clamped to the image.
pub fn crop_box(sample: &FaceSample, params: &CropParams) -> Result<CropBox> {
    params.validate()?;
    let d = estimate_head_distance(&sample.depth, sample.head_center, params.radius)?;
    let (bw, bh) = params.box_size(d);
    let (cx, cy) = sample.head_center;
    let (w, h) = (sample.depth.width() as f64, sample.depth.height() as f64);
    let b = CropBox {
        x0: (cx - bw / 2.0).max(0.0),
        y0: (cy - bh / 2.0).max(0.0),
        x1: (cx + bw / 2.0).min(w),
        y1: (cy + bh / 2.0).min(h),
    };
    if b.width() < MIN_BOX_SIDE || b.height() < MIN_BOX_SIDE {
        return Err(Error::UnusableSample(format!(
            "crop box {:.1}x{:.1} px is below {MIN_BOX_SIDE} px",
            b.width(),
            b.height()
        )));
    }
    Ok(b)
}

/// Source coordinate (pixel-center convention) of output index `i`.
#[inline]
fn source_coord(start: f64, extent: f64, i: usize, out: usize) -> f64 {
    start + (i as f64 + 0.5) * extent / out as f64 - 0.5
}

/// Bilinear resampling of `b` into an `out×out` image.
pub fn resample_bilinear(img: &GrayImage, b: &CropBox, out: usize) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut px = Vec::with_capacity(out * out);
    for oy in 0..out {
        let sy = source_coord(b.y0, b.height(), oy, out).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out {
            let sx = source_coord(b.x0, b.width(), ox, out).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bot = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            px.push((top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(out, out, px).expect("sized by construction")
}

/// Nearest-neighbor resampling; never invents depth values.
pub fn resample_nearest(img: &DepthMap, b: &CropBox, out: usize) -> DepthMap {
    let (w, h) = (img.width(), img.height());
    let mut px = Vec::with_capacity(out * out);
    for oy in 0..out {
        let sy = source_coord(b.y0, b.height(), oy, out).round().clamp(0.0, (h - 1) as f64) as usize;
        for ox in 0..out {
            let sx = source_coord(b.x0, b.width(), ox, out).round().clamp(0.0, (w - 1) as f64) as usize;
            px.push(img.get(sx, sy));
        }
    }
    Image::new(out, out, px).expect("sized by construction")
}

/// Result of cropping one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCrop {
    pub gray: GrayImage,
    pub depth: DepthMap,
    /// Box shared by both crops.
    pub region: CropBox,
}

/// Cuts the same box from the gray image and the depth map and resizes both
/// to 96×96 (bilinear for gray, nearest for depth).
pub fn face_crop(sample: &FaceSample, params: &CropParams) -> Result<FaceCrop> {
    sample.validate()?;
    let region = crop_box(sample, params)?;
    Ok(FaceCrop {
        gray: resample_bilinear(&sample.gray, &region, CROP_SIZE),
        depth: resample_nearest(&sample.depth, &region, CROP_SIZE),
        region,
    })
}
