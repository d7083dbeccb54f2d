mod common;

use common::rng;
use facedepth_core::data::Image;
use facedepth_core::metrics::{pixelwise_report, MetricReport, ValueImage, ValueSpace, ROW_NAMES};
use rand::Rng;

/// Straightforward per-pixel definitions, one image.
fn naive(y: &[f64], t: &[f64]) -> [f64; 10] {
    let n = y.len() as f64;
    let (mut l1, mut sq, mut ar, mut sr, mut lg, mut d_sum, mut d_sq) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut within = [0.0; 3];
    for i in 0..y.len() {
        let e = y[i] - t[i];
        l1 += e.abs();
        sq += e * e;
        ar += e.abs() / t[i];
        sr += e * e / t[i];
        let d = y[i].ln() - t[i].ln();
        lg += d * d;
        d_sum += d;
        d_sq += d * d;
        let ratio = if y[i] / t[i] > t[i] / y[i] { y[i] / t[i] } else { t[i] / y[i] };
        for k in 0..3 {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                within[k] += 1.0;
            }
        }
    }
    let mean_d = d_sum / n;
    [
        l1 / n,
        sq.sqrt(),
        ar / n,
        sr / n,
        (sq / n).sqrt(),
        (lg / n).sqrt(),
        (d_sq / n - mean_d * mean_d).max(0.0).sqrt(),
        within[0] / n,
        within[1] / n,
        within[2] / n,
    ]
}

fn values(r: &MetricReport) -> [f64; 10] {
    std::array::from_fn(|i| r.rows()[i].1.expect("defined"))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-12) || (a - b).abs() < 1e-12
}

fn cases() -> Vec<(ValueImage, ValueImage)> {
    let mut g = rng(2024);
    (0..50)
        .map(|_| {
            let w = g.random_range(4..=16);
            let h = g.random_range(4..=16);
            let t: Vec<f64> = (0..w * h).map(|_| g.random_range(1.0..255.0)).collect();
            let y: Vec<f64> = t.iter().map(|v| (v * g.random_range(0.6..1.6)).max(0.5)).collect();
            (Image::new(w, h, y).unwrap(), Image::new(w, h, t).unwrap())
        })
        .collect()
}

#[test]
fn every_row_matches_the_naive_loop() {
    let cases = cases();
    for (k, (y, t)) in cases.iter().enumerate() {
        let r = pixelwise_report(std::slice::from_ref(y), std::slice::from_ref(t), ValueSpace::EightBit).unwrap();
        let want = naive(y.pixels(), t.pixels());
        for (i, (&got, &exp)) in values(&r).iter().zip(&want).enumerate() {
            assert!(close(got, exp), "case {k} {}: {got} vs {exp}", ROW_NAMES[i]);
        }
    }
    // dataset-level rows are the mean of the per-image values
    let (ys, ts): (Vec<_>, Vec<_>) = cases.iter().cloned().unzip();
    let r = pixelwise_report(&ys, &ts, ValueSpace::EightBit).unwrap();
    let per: Vec<[f64; 10]> = cases.iter().map(|(y, t)| naive(y.pixels(), t.pixels())).collect();
    for i in 0..10 {
        let mean = per.iter().map(|v| v[i]).sum::<f64>() / per.len() as f64;
        assert!(close(values(&r)[i], mean), "{}: {} vs {mean}", ROW_NAMES[i], values(&r)[i]);
    }
}

#[test]
fn delta_rows_are_monotone() {
    for (y, t) in cases() {
        let r = pixelwise_report(&[y], &[t], ValueSpace::EightBit).unwrap();
        let (d1, d2, d3) = (r.delta1.unwrap(), r.delta2.unwrap(), r.delta3.unwrap());
        assert!(0.0 <= d1 && d1 <= d2 && d2 <= d3 && d3 <= 1.0);
    }
}

#[test]
fn scale_invariant_rmse_ignores_global_scale() {
    for (y, t) in cases() {
        let base = pixelwise_report(&[y.clone()], &[t.clone()], ValueSpace::Millimeters).unwrap().rmse_scale_inv.unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled = Image::new(y.width(), y.height(), y.pixels().iter().map(|v| v * c).collect()).unwrap();
            let r = pixelwise_report(&[scaled], &[t.clone()], ValueSpace::Millimeters).unwrap();
            assert!((r.rmse_scale_inv.unwrap() - base).abs() < 1e-5, "c = {c}");
        }
    }
}

#[test]
fn missing_target_pixels_are_excluded_from_ratio_metrics() {
    let t = Image::new(2, 1, vec![0.0, 100.0]).unwrap();
    let y = Image::new(2, 1, vec![50.0, 110.0]).unwrap();
    let r = pixelwise_report(&[y], &[t], ValueSpace::EightBit).unwrap();
    assert!((r.abs_rel.unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(r.delta1, Some(1.0));
    assert_eq!(r.excluded_ratio_pixels, 1);
    // L1 still covers both pixels
    assert!((r.l1_norm - 30.0).abs() < 1e-12);
}

#[test]
fn hand_computed_rows() {
    // single 1x2 pair (0,0) vs (3,4): squared Euclidean norm 25, norm 5
    let r = pixelwise_report(
        &[Image::new(2, 1, vec![0.0, 0.0]).unwrap()],
        &[Image::new(2, 1, vec![3.0, 4.0]).unwrap()],
        ValueSpace::EightBit,
    )
    .unwrap();
    assert_eq!(r.l2_norm, 5.0);
    assert_eq!(r.l1_norm, 3.5);
    assert_eq!(r.rmse_log, None);
}
