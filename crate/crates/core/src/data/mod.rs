//! Face samples, preprocessing, partitioning and dataset I/O.

pub mod crop;
pub mod layout;
pub mod normalize;
pub mod pairs;
pub mod pgm;
pub mod subsets;
pub mod synth;

use crate::error::{Error, Result};

/// Row-major single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image<P> {
    width: usize,
    height: usize,
    pixels: Vec<P>,
}

/// 8-bit gray-level intensity image.
pub type GrayImage = Image<u8>;

/// 16-bit depth map in millimeters; `0` marks a missing measurement.
pub type DepthMap = Image<u16>;

impl<P: Copy + Default> Image<P> {
    pub fn new(width: usize, height: usize, pixels: Vec<P>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape(
                "image",
                format!("{width}x{height} image with {} pixels", pixels.len()),
            ));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: P) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[P] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [P] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> P {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: P) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Head orientation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Paired gray image and depth map with identity and pose annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub gray: GrayImage,
    pub depth: DepthMap,
    pub subject_id: u32,
    pub sequence_id: u32,
    pub frame: u32,
    /// Head center `(x, y)` in pixels.
    pub head_center: (f64, f64),
    pub pose: Pose,
}

impl FaceSample {
    /// Checks the pairing and annotation invariants.
    pub fn validate(&self) -> Result<()> {
        if self.gray.width() != self.depth.width() || self.gray.height() != self.depth.height() {
            return Err(Error::shape(
                "face_sample",
                "gray image and depth map differ in size",
            ));
        }
        let (x, y) = self.head_center;
        if !(x >= 0.0 && y >= 0.0 && x < self.gray.width() as f64 && y < self.gray.height() as f64) {
            return Err(Error::domain(
                "face_sample",
                format!("head center ({x}, {y}) outside the image"),
            ));
        }
        Ok(())
    }

    /// Stable identifier used in pair lists and logs: `SS/FFFF`.
    pub fn key(&self) -> String {
        format!("{:02}/{:04}", self.subject_id, self.frame)
    }
}
