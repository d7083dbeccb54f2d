//! Linear maps between stored pixel values and the `[-1, 1]` network range.

use crate::data::{DepthMap, GrayImage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fixed per-dataset depth interval mapped onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min_mm: f64,
    pub max_mm: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self {
            min_mm: 400.0,
            max_mm: 2000.0,
        }
    }
}

impl DepthRange {
    pub fn new(min_mm: f64, max_mm: f64) -> Result<Self> {
        if !(min_mm > 0.0 && max_mm > min_mm && max_mm <= u16::MAX as f64) {
            return Err(Error::Config(format!(
                "depth range [{min_mm}, {max_mm}] must satisfy 0 < min < max <= 65535"
            )));
        }
        Ok(Self { min_mm, max_mm })
    }

    /// Millimeters to `[-1, 1]`; missing (`0`) maps to `+1` (far).
    pub fn normalize(&self, mm: u16) -> f64 {
        if mm == 0 {
            return 1.0;
        }
        let v = 2.0 * (mm as f64 - self.min_mm) / (self.max_mm - self.min_mm) - 1.0;
        v.clamp(-1.0, 1.0)
    }

    /// `[-1, 1]` back to millimeters, clamping out-of-range input.
    pub fn denormalize(&self, v: f64) -> u16 {
        let v = if v.is_nan() { 1.0 } else { v.clamp(-1.0, 1.0) };
        let mm = (v + 1.0) * 0.5 * (self.max_mm - self.min_mm) + self.min_mm;
        mm.round() as u16
    }

    /// Millimeters to the 8-bit value space used for reporting; missing
    /// stays `0`.
    pub fn to_8bit(&self, mm: u16) -> f64 {
        if mm == 0 {
            return 0.0;
        }
        ((self.normalize(mm) + 1.0) * 127.5).round()
    }
}

pub fn normalize_gray(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn denormalize_gray(v: f64) -> u8 {
    let v = if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) };
    ((v + 1.0) * 127.5).round() as u8
}

fn check_same_size<P>(images: &[&crate::data::Image<P>]) -> Result<(usize, usize)>
where
    P: Copy + Default,
{
    let first = images
        .first()
        .ok_or_else(|| Error::shape("normalize", "empty image batch"))?;
    let (w, h) = (first.width(), first.height());
    if images.iter().any(|i| i.width() != w || i.height() != h) {
        return Err(Error::shape("normalize", "images in a batch differ in size"));
    }
    Ok((w, h))
}

/// Stacks gray images into an `N×1×H×W` tensor in `[-1, 1]`.
pub fn gray_batch<T: Scalar>(images: &[&GrayImage]) -> Result<Tensor<T>> {
    let (w, h) = check_same_size(images)?;
    let data = images
        .iter()
        .flat_map(|img| img.pixels().iter().map(|&p| T::from_f64_lossy(normalize_gray(p))))
        .collect();
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Stacks depth maps into an `N×1×H×W` tensor in `[-1, 1]`.
pub fn depth_batch<T: Scalar>(maps: &[&DepthMap], range: &DepthRange) -> Result<Tensor<T>> {
    let (w, h) = check_same_size(maps)?;
    let data = maps
        .iter()
        .flat_map(|img| img.pixels().iter().map(|&p| T::from_f64_lossy(range.normalize(p))))
        .collect();
    Tensor::new(&[maps.len(), 1, h, w], data)
}

/// Splits an `N×1×H×W` network output back into depth maps.
pub fn depth_maps<T: Scalar>(batch: &Tensor<T>, range: &DepthRange) -> Result<Vec<DepthMap>> {
    let (n, c, h, w) = batch.dims4("denormalize")?;
    if c != 1 {
        return Err(Error::shape("denormalize", "expected a single channel"));
    }
    (0..n)
        .map(|i| {
            let px = batch.item(i).iter().map(|v| range.denormalize(v.as_f64())).collect();
            DepthMap::new(w, h, px)
        })
        .collect()
}

pub fn gray_images<T: Scalar>(batch: &Tensor<T>) -> Result<Vec<GrayImage>> {
    let (n, _, h, w) = batch.dims4("denormalize")?;
    (0..n)
        .map(|i| {
            let px = batch.item(i).iter().map(|v| denormalize_gray(v.as_f64())).collect();
            GrayImage::new(w, h, px)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_endpoints() {
        assert_eq!(normalize_gray(0), -1.0);
        assert_eq!(normalize_gray(255), 1.0);
    }

    #[test]
    fn gray_round_trip_is_exact_for_all_levels() {
        for v in 0..=255u8 {
            assert_eq!(denormalize_gray(normalize_gray(v)), v);
            let f32_path = normalize_gray(v) as f32;
            assert_eq!(denormalize_gray(f32_path as f64), v);
        }
    }

    #[test]
    fn missing_depth_is_far() {
        let r = DepthRange::default();
        assert_eq!(r.normalize(0), 1.0);
        assert_eq!(r.normalize(400), -1.0);
        assert_eq!(r.normalize(2000), 1.0);
    }

    #[test]
    fn depth_round_trip_and_clamp() {
        let r = DepthRange::default();
        for mm in (400..=2000u16).step_by(7) {
            assert_eq!(r.denormalize(r.normalize(mm) as f32 as f64), mm);
        }
        assert_eq!(r.denormalize(3.0), 2000);
        assert_eq!(r.denormalize(-7.0), 400);
    }

    #[test]
    fn batch_shapes() {
        let a = GrayImage::filled(4, 2, 255);
        let t: Tensor<f32> = gray_batch(&[&a, &a]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 4]);
        assert!(t.data().iter().all(|&v| v == 1.0));
        assert_eq!(gray_images(&t).unwrap()[1], a);
    }
}
