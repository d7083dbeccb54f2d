//! Pixel-wise depth error metrics and face-verification accuracy.

use std::fmt::{self, Write as _};
use std::io::Write;

use crate::data::normalize::DepthRange;
use crate::data::pairs::VerificationPair;
use crate::data::subsets::{pose_subset, sequence_of, AngleSubset, SequenceSubset};
use crate::data::{DepthMap, FaceSample, Image};
use crate::error::{Error, Result};
use crate::nn::Siamese;
use crate::scalar::Scalar;
use crate::verifier::pair_tensors;

/// Real-valued raster in a declared value space.
pub type ValueImage = Image<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueSpace {
    /// Depth linearly quantized to `[0, 255]` over the dataset range.
    EightBit,
    Millimeters,
}

impl ValueSpace {
    pub fn tag(self) -> &'static str {
        match self {
            Self::EightBit => "8bit",
            Self::Millimeters => "millimeters",
        }
    }

    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "8bit" => Ok(Self::EightBit),
            "millimeters" | "mm" => Ok(Self::Millimeters),
            other => Err(Error::Config(format!("unknown value space {other:?} (8bit | millimeters)"))),
        }
    }

    /// Converts a depth map; missing pixels stay `0` in both spaces.
    pub fn convert(self, map: &DepthMap, range: &DepthRange) -> ValueImage {
        let px = map
            .pixels()
            .iter()
            .map(|&mm| match self {
                Self::EightBit => range.to_8bit(mm),
                Self::Millimeters => mm as f64,
            })
            .collect();
        Image::new(map.width(), map.height(), px).expect("same extent")
    }
}

/// Names of the report rows, top to bottom.
pub const ROW_NAMES: [&str; 11] = [
    "L1 Norm",
    "L2 Norm",
    "AbsRel",
    "SqRel",
    "RMSE (lin)",
    "RMSE (log)",
    "RMSE (scale-inv)",
    "delta < 1.25",
    "delta < 1.25^2",
    "delta < 1.25^3",
    "Face Verification",
];

/// One column of evaluation results. `None` marks a metric that is
/// undefined for the input (every pixel excluded, or no verifier run).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub l1_norm: f64,
    pub l2_norm: f64,
    pub abs_rel: Option<f64>,
    pub sq_rel: Option<f64>,
    pub rmse_lin: f64,
    pub rmse_log: Option<f64>,
    pub rmse_scale_inv: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub delta3: Option<f64>,
    pub face_verification_acc: Option<f64>,
    pub n_images: usize,
    pub value_space: ValueSpace,
    /// Pixels left out of the ratio metrics (target ≤ 0).
    pub excluded_ratio_pixels: usize,
    /// Pixels left out of the log metrics (target or prediction ≤ 0).
    pub excluded_log_pixels: usize,
}

impl MetricReport {
    /// `(name, value)` in report order.
    pub fn rows(&self) -> [(&'static str, Option<f64>); 11] {
        let v = [
            Some(self.l1_norm),
            Some(self.l2_norm),
            self.abs_rel,
            self.sq_rel,
            Some(self.rmse_lin),
            self.rmse_log,
            self.rmse_scale_inv,
            self.delta1,
            self.delta2,
            self.delta3,
            self.face_verification_acc,
        ];
        std::array::from_fn(|i| (ROW_NAMES[i], v[i]))
    }

    /// True iff every pixel-wise row is defined.
    pub fn complete(&self) -> bool {
        self.rows()[..10].iter().all(|(_, v)| v.is_some())
    }

    /// CSV with columns `metric,value,value_space`; undefined values are
    /// written as `undefined`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value", "value_space"])?;
        for (name, v) in self.rows() {
            let cell = v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"));
            w.write_record([name, cell.as_str(), self.value_space.tag()])?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>14}", "metric", format!("[{}]", self.value_space.tag()))?;
        writeln!(f, "{}", "-".repeat(35))?;
        for (name, v) in self.rows() {
            match v {
                Some(x) => writeln!(f, "{name:<20} {x:>14.4}")?,
                None => writeln!(f, "{name:<20} {:>14}", "undefined")?,
            }
        }
        write!(
            f,
            "images: {}  excluded pixels: ratio {}, log {}",
            self.n_images, self.excluded_ratio_pixels, self.excluded_log_pixels
        )
    }
}

/// Sum in a fixed pairwise tree order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if v.len() <= LEAF {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| pairwise_sum(v) / v.len() as f64)
}

/// Thresholds of the three δ rows.
pub const DELTA_BASE: f64 = 1.25;

#[derive(Default)]
struct ImageMetrics {
    l1: f64,
    l2: f64,
    rmse: f64,
    abs_rel: Option<f64>,
    sq_rel: Option<f64>,
    rmse_log: Option<f64>,
    rmse_si: Option<f64>,
    delta: [Option<f64>; 3],
    excluded_ratio: usize,
    excluded_log: usize,
}

fn image_metrics(pred: &[f64], target: &[f64]) -> ImageMetrics {
    let n = pred.len() as f64;
    let sq: Vec<f64> = pred.iter().zip(target).map(|(y, t)| (y - t).powi(2)).collect();
    let abs: Vec<f64> = pred.iter().zip(target).map(|(y, t)| (y - t).abs()).collect();
    let sq_sum = pairwise_sum(&sq);

    let (mut rel, mut sqrel, mut logd) = (Vec::new(), Vec::new(), Vec::new());
    let mut hits = [Vec::new(), Vec::new(), Vec::new()];
    for (&y, &t) in pred.iter().zip(target) {
        if t <= 0.0 {
            continue;
        }
        rel.push((y - t).abs() / t);
        sqrel.push((y - t).powi(2) / t);
        let ratio = if y > 0.0 { (y / t).max(t / y) } else { f64::INFINITY };
        for (k, h) in hits.iter_mut().enumerate() {
            h.push(if ratio < DELTA_BASE.powi(k as i32 + 1) { 1.0 } else { 0.0 });
        }
        if y > 0.0 {
            logd.push(y.ln() - t.ln());
        }
    }
    let log_sq: Vec<f64> = logd.iter().map(|d| d * d).collect();
    let rmse_si = mean_of(&log_sq).zip(mean_of(&logd)).map(|(m2, m)| (m2 - m * m).max(0.0).sqrt());
    ImageMetrics {
        l1: pairwise_sum(&abs) / n,
        l2: sq_sum.sqrt(),
        rmse: (sq_sum / n).sqrt(),
        abs_rel: mean_of(&rel),
        sq_rel: mean_of(&sqrel),
        rmse_log: mean_of(&log_sq).map(f64::sqrt),
        rmse_si,
        delta: [mean_of(&hits[0]), mean_of(&hits[1]), mean_of(&hits[2])],
        excluded_ratio: pred.len() - rel.len(),
        excluded_log: pred.len() - logd.len(),
    }
}

/// Per-image metrics averaged over the set. Ratio and log metrics skip
/// target pixels ≤ 0 (log metrics also skip predictions ≤ 0); a metric with
/// no usable pixel anywhere is `None`.
pub fn pixelwise_report(predictions: &[ValueImage], targets: &[ValueImage], space: ValueSpace) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::domain("pixelwise_report", "no images"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::shape(
            "pixelwise_report",
            format!("{} predictions vs {} targets", predictions.len(), targets.len()),
        ));
    }
    let mut per = Vec::with_capacity(predictions.len());
    for (i, (p, t)) in predictions.iter().zip(targets).enumerate() {
        if p.width() != t.width() || p.height() != t.height() {
            return Err(Error::shape(
                "pixelwise_report",
                format!("image {i}: {}x{} vs {}x{}", p.width(), p.height(), t.width(), t.height()),
            ));
        }
        per.push(image_metrics(p.pixels(), t.pixels()));
    }
    let avg = |f: &dyn Fn(&ImageMetrics) -> f64| pairwise_sum(&per.iter().map(f).collect::<Vec<_>>()) / per.len() as f64;
    let avg_opt = |f: &dyn Fn(&ImageMetrics) -> Option<f64>| mean_of(&per.iter().filter_map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        l1_norm: avg(&|m| m.l1),
        l2_norm: avg(&|m| m.l2),
        abs_rel: avg_opt(&|m| m.abs_rel),
        sq_rel: avg_opt(&|m| m.sq_rel),
        rmse_lin: avg(&|m| m.rmse),
        rmse_log: avg_opt(&|m| m.rmse_log),
        rmse_scale_inv: avg_opt(&|m| m.rmse_si),
        delta1: avg_opt(&|m| m.delta[0]),
        delta2: avg_opt(&|m| m.delta[1]),
        delta3: avg_opt(&|m| m.delta[2]),
        face_verification_acc: None,
        n_images: per.len(),
        value_space: space,
        excluded_ratio_pixels: per.iter().map(|m| m.excluded_ratio).sum(),
        excluded_log_pixels: per.iter().map(|m| m.excluded_log).sum(),
    })
}

/// Convenience wrapper converting depth maps into `space` first.
pub fn depth_report(
    predictions: &[&DepthMap],
    targets: &[&DepthMap],
    space: ValueSpace,
    range: &DepthRange,
) -> Result<MetricReport> {
    let conv = |v: &[&DepthMap]| v.iter().map(|m| space.convert(m, range)).collect::<Vec<_>>();
    pixelwise_report(&conv(predictions), &conv(targets), space)
}

/// Similarity scores of `pairs` over `maps`, scored in evaluation mode in
/// chunks; the verifier is never modified.
pub fn pair_scores<T: Scalar>(
    net: &mut Siamese<T>,
    maps: &[&DepthMap],
    pairs: &[VerificationPair],
    size: usize,
    range: &DepthRange,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(64) {
        let (a, b) = pair_tensors::<T>(maps, chunk, size, range)?;
        out.extend(net.score(&a, &b)?.data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Similarity threshold of a positive decision.
pub const VERIFICATION_THRESHOLD: f64 = 0.5;

/// Fraction of pairs whose decision `score > 0.5` equals the label.
pub fn accuracy_from_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::domain(
            "verification_accuracy",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    let ok = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s > VERIFICATION_THRESHOLD) == l)
        .count();
    Ok(ok as f64 / scores.len() as f64)
}

pub fn verification_accuracy<T: Scalar>(
    net: &mut Siamese<T>,
    maps: &[&DepthMap],
    pairs: &[VerificationPair],
    size: usize,
    range: &DepthRange,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::domain("verification_accuracy", "empty pair list"));
    }
    let scores = pair_scores(net, maps, pairs, size, range)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.same).collect();
    accuracy_from_scores(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleCell {
    A1,
    A2,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceCell {
    S123,
    S45,
    All,
}

impl AngleCell {
    pub const ALL: [AngleCell; 3] = [AngleCell::A1, AngleCell::A2, AngleCell::Both];

    pub fn label(self) -> &'static str {
        match self {
            Self::A1 => "A1",
            Self::A2 => "A2",
            Self::Both => "A1+A2",
        }
    }

    pub fn admits(self, s: AngleSubset) -> bool {
        match self {
            Self::A1 => s == AngleSubset::A1,
            Self::A2 => s == AngleSubset::A2,
            Self::Both => true,
        }
    }
}

impl SequenceCell {
    pub const ALL: [SequenceCell; 3] = [SequenceCell::S123, SequenceCell::S45, SequenceCell::All];

    pub fn label(self) -> &'static str {
        match self {
            Self::S123 => "S123",
            Self::S45 => "S45",
            Self::All => "all",
        }
    }

    pub fn admits(self, s: SequenceSubset) -> bool {
        match self {
            Self::S123 => s == SequenceSubset::S123,
            Self::S45 => s == SequenceSubset::S45,
            Self::All => true,
        }
    }
}

/// Accuracy over the pairs whose two members both fall in the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetCell {
    pub angle: AngleCell,
    pub sequence: SequenceCell,
    pub pairs: usize,
    /// `None` when the cell holds no pair.
    pub original: Option<f64>,
    pub generated: Option<f64>,
}

/// Verification accuracy by pose and sequence subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetGrid {
    /// Row-major over `AngleCell::ALL × SequenceCell::ALL`.
    pub cells: Vec<SubsetCell>,
}

impl SubsetGrid {
    pub fn cell(&self, angle: AngleCell, sequence: SequenceCell) -> &SubsetCell {
        self.cells
            .iter()
            .find(|c| c.angle == angle && c.sequence == sequence)
            .expect("grid is complete")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["angle_subset", "sequence_subset", "pairs", "original_acc", "generated_acc"])?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "empty".to_string(), |x| format!("{x}"));
        for c in &self.cells {
            w.write_record([
                c.angle.label(),
                c.sequence.label(),
                &c.pairs.to_string(),
                &fmt(c.original),
                &fmt(c.generated),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<subset grid>", e))
    }
}

impl fmt::Display for SubsetGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut line = format!("{:<8}", "");
        for s in SequenceCell::ALL {
            let _ = write!(line, " {:>22}", s.label());
        }
        writeln!(f, "{line}")?;
        for a in AngleCell::ALL {
            let mut line = format!("{:<8}", a.label());
            for s in SequenceCell::ALL {
                let c = self.cell(a, s);
                let txt = match (c.original, c.generated) {
                    (Some(o), Some(g)) => format!("{o:.3} / {g:.3} (n={})", c.pairs),
                    _ => "empty".to_string(),
                };
                let _ = write!(line, " {txt:>22}");
            }
            writeln!(f, "{line}")?;
        }
        write!(f, "cells: original / generated accuracy")
    }
}

/// Pose and sequence subset of every sample.
pub fn sample_tags(samples: &[FaceSample]) -> Result<Vec<(AngleSubset, SequenceSubset)>> {
    samples
        .iter()
        .map(|s| Ok((pose_subset(&s.pose), sequence_of(s.sequence_id)?)))
        .collect()
}

/// Pose/sequence grid from per-pair scores on original and generated
/// maps; `tags[i]` holds the subsets of pair member `i`.
pub fn subset_grid(
    tags: &[(AngleSubset, SequenceSubset)],
    pairs: &[VerificationPair],
    original_scores: &[f64],
    generated_scores: &[f64],
) -> Result<SubsetGrid> {
    if pairs.len() != original_scores.len() || pairs.len() != generated_scores.len() {
        return Err(Error::shape("subset_report", "one score per pair is required"));
    }
    if let Some(p) = pairs.iter().find(|p| p.a >= tags.len() || p.b >= tags.len()) {
        return Err(Error::shape("subset_report", format!("pair ({}, {}) outside {} samples", p.a, p.b, tags.len())));
    }
    let mut cells = Vec::with_capacity(9);
    for angle in AngleCell::ALL {
        for sequence in SequenceCell::ALL {
            let admits = |i: usize| angle.admits(tags[i].0) && sequence.admits(tags[i].1);
            let members: Vec<usize> = (0..pairs.len()).filter(|&k| admits(pairs[k].a) && admits(pairs[k].b)).collect();
            let acc = |scores: &[f64]| {
                let s: Vec<f64> = members.iter().map(|&k| scores[k]).collect();
                let l: Vec<bool> = members.iter().map(|&k| pairs[k].same).collect();
                accuracy_from_scores(&s, &l).ok()
            };
            cells.push(SubsetCell {
                angle,
                sequence,
                pairs: members.len(),
                original: acc(original_scores),
                generated: acc(generated_scores),
            });
        }
    }
    Ok(SubsetGrid { cells })
}

/// Scores both map sets with the verifier and aggregates the grid.
pub fn subset_report<T: Scalar>(
    net: &mut Siamese<T>,
    samples: &[FaceSample],
    original: &[&DepthMap],
    generated: &[&DepthMap],
    pairs: &[VerificationPair],
    size: usize,
    range: &DepthRange,
) -> Result<SubsetGrid> {
    let o = pair_scores(net, original, pairs, size, range)?;
    let g = pair_scores(net, generated, pairs, size, range)?;
    subset_grid(&sample_tags(samples)?, pairs, &o, &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, v: Vec<f64>) -> ValueImage {
        Image::new(w, h, v).unwrap()
    }

    #[test]
    fn identity_gives_zero_error() {
        let t = img(2, 2, vec![10.0, 20.0, 30.0, 40.0]);
        let r = pixelwise_report(&[t.clone()], &[t], ValueSpace::EightBit).unwrap();
        assert_eq!((r.l1_norm, r.l2_norm, r.rmse_lin), (0.0, 0.0, 0.0));
        assert_eq!(r.abs_rel, Some(0.0));
        assert_eq!(r.rmse_log, Some(0.0));
        assert_eq!((r.delta1, r.delta3), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn doubled_prediction() {
        let t = img(2, 1, vec![10.0, 50.0]);
        let p = img(2, 1, vec![20.0, 100.0]);
        let r = pixelwise_report(&[p], &[t], ValueSpace::Millimeters).unwrap();
        assert_eq!(r.delta1, Some(0.0));
        assert_eq!(r.delta3, Some(0.0));
        assert!((r.rmse_log.unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(r.rmse_scale_inv.unwrap() < 1e-7);
        assert_eq!(r.abs_rel, Some(1.0));
    }

    #[test]
    fn holes_are_excluded_and_all_holes_undefined() {
        let t = img(2, 1, vec![0.0, 10.0]);
        let p = img(2, 1, vec![5.0, 10.0]);
        let r = pixelwise_report(&[p], &[t], ValueSpace::EightBit).unwrap();
        assert_eq!(r.excluded_ratio_pixels, 1);
        assert_eq!(r.abs_rel, Some(0.0));
        assert_eq!(r.l1_norm, 2.5);
        let z = img(1, 1, vec![0.0]);
        let r = pixelwise_report(&[z.clone()], &[z], ValueSpace::EightBit).unwrap();
        assert_eq!(r.abs_rel, None);
        assert!(!r.complete());
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(pixelwise_report(&[], &[], ValueSpace::EightBit).is_err());
        let a = img(1, 1, vec![1.0]);
        let b = img(2, 1, vec![1.0, 1.0]);
        assert!(pixelwise_report(&[a.clone()], &[b], ValueSpace::EightBit).is_err());
        assert!(pixelwise_report(&[a.clone(), a.clone()], &[a], ValueSpace::EightBit).is_err());
    }

    #[test]
    fn csv_rows_in_order() {
        let t = img(1, 1, vec![3.0]);
        let r = pixelwise_report(&[t.clone()], &[t], ValueSpace::EightBit).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, ROW_NAMES);
        assert!(text.lines().last().unwrap().contains("undefined"));
    }

    #[test]
    fn accuracy_thresholds_strictly() {
        assert_eq!(accuracy_from_scores(&[0.5, 0.51, 0.2], &[false, true, false]).unwrap(), 1.0);
        assert!(accuracy_from_scores(&[], &[]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }
}
