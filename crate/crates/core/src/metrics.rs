//! Scale-invariant error metrics for grayscale intrinsic images.
//!
//! Every metric works on channel-mean fields restricted to the mask and is
//! invariant to a positive rescaling of the estimate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::colorspace::LinearImage;
use crate::error::{Error, Result};
use crate::math;
use crate::solver::Decomposition;

pub const LMSE_WINDOW: usize = 20;
pub const LMSE_STRIDE: usize = 10;
/// Windows with fewer masked pixels are skipped.
pub const LMSE_MIN_PIXELS: usize = 10;

/// A grayscale raster with its mask.
#[derive(Debug, Clone, Copy)]
pub struct Field<'a> {
    pub values: &'a [f64],
    pub mask: &'a [bool],
    pub width: usize,
    pub height: usize,
}

impl<'a> Field<'a> {
    pub fn new(values: &'a [f64], mask: &'a [bool], width: usize, height: usize) -> Result<Self> {
        if values.len() != width * height || mask.len() != values.len() {
            return Err(Error::InvalidInput("field dimensions do not match".into()));
        }
        Ok(Self {
            values,
            mask,
            width,
            height,
        })
    }
}

fn check_pair(est: &Field<'_>, gt: &Field<'_>) -> Result<()> {
    if est.width != gt.width || est.height != gt.height {
        return Err(Error::InvalidInput("estimate and ground truth differ in size".into()));
    }
    Ok(())
}

/// `α* = ⟨e, g⟩ / ⟨e, e⟩` over the listed pixels, 0 when `e ≡ 0`.
fn best_scale(est: &[f64], gt: &[f64], idx: impl Iterator<Item = usize> + Clone) -> f64 {
    let eg: Vec<f64> = idx.clone().map(|i| est[i] * gt[i]).collect();
    let ee: Vec<f64> = idx.map(|i| est[i] * est[i]).collect();
    let ee = math::pairwise_sum(&ee);
    if ee > 0.0 {
        math::pairwise_sum(&eg) / ee
    } else {
        0.0
    }
}

/// Residual `Σ(α·e − g)²` and `Σ g²` over the listed pixels.
fn residual(est: &[f64], gt: &[f64], alpha: f64, idx: impl Iterator<Item = usize> + Clone) -> (f64, f64) {
    let r: Vec<f64> = idx.clone().map(|i| (alpha * est[i] - gt[i]).powi(2)).collect();
    let g: Vec<f64> = idx.map(|i| gt[i] * gt[i]).collect();
    (math::pairwise_sum(&r), math::pairwise_sum(&g))
}

fn masked(field: &Field<'_>) -> Vec<usize> {
    (0..field.values.len()).filter(|&i| field.mask[i]).collect()
}

/// `Σ(α*·e − g)² / Σ g²` with the least-squares global scale `α*`.
pub fn si_mse(est: &Field<'_>, gt: &Field<'_>) -> Result<f64> {
    check_pair(est, gt)?;
    let idx = masked(gt);
    if idx.is_empty() {
        return Err(Error::EmptyMask("no pixels to compare"));
    }
    let alpha = best_scale(est.values, gt.values, idx.iter().copied());
    let (num, den) = residual(est.values, gt.values, alpha, idx.iter().copied());
    if den <= 0.0 {
        return Err(Error::InvalidInput("ground truth is identically zero".into()));
    }
    Ok(num / den)
}

fn windows(width: usize, height: usize, window: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 || stride == 0 || width < window || height < window {
        return Err(Error::InvalidInput(format!(
            "image {width}x{height} is smaller than the {window}px window"
        )));
    }
    let mut out = Vec::new();
    let mut y = 0;
    while y + window <= height {
        let mut x = 0;
        while x + window <= width {
            out.push((x, y));
            x += stride;
        }
        y += stride;
    }
    Ok(out)
}

fn window_pixels(f: &Field<'_>, x0: usize, y0: usize, window: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    for y in y0..y0 + window {
        for x in x0..x0 + window {
            let i = y * f.width + x;
            if f.mask[i] {
                idx.push(i);
            }
        }
    }
    idx
}

/// Windowed error: `alpha` picks the scale used in each window.
fn windowed(
    est: &Field<'_>,
    gt: &Field<'_>,
    window: usize,
    stride: usize,
    alpha: impl Fn(&[usize]) -> f64,
) -> Result<f64> {
    check_pair(est, gt)?;
    let mut num = Vec::new();
    let mut den = Vec::new();
    for (x0, y0) in windows(gt.width, gt.height, window, stride)? {
        let idx = window_pixels(gt, x0, y0, window);
        if idx.len() < LMSE_MIN_PIXELS {
            continue;
        }
        let a = alpha(&idx);
        let (r, g) = residual(est.values, gt.values, a, idx.iter().copied());
        num.push(r);
        den.push(g);
    }
    if num.is_empty() {
        return Err(Error::InvalidInput("no window has enough masked pixels".into()));
    }
    let den = math::pairwise_sum(&den);
    if den <= 0.0 {
        return Err(Error::InvalidInput("ground truth is identically zero".into()));
    }
    Ok(math::pairwise_sum(&num) / den)
}

/// Local MSE: per-window least-squares scale, summed residuals over summed
/// ground-truth energy.
pub fn lmse(est: &Field<'_>, gt: &Field<'_>, window: usize, stride: usize) -> Result<f64> {
    windowed(est, gt, window, stride, |idx| {
        best_scale(est.values, gt.values, idx.iter().copied())
    })
}

/// Windowed error with a single image-wide scale: like [`lmse`], but the
/// estimate is fit once globally instead of per window, so local gain
/// errors count.
pub fn almse(est: &Field<'_>, gt: &Field<'_>, window: usize, stride: usize) -> Result<f64> {
    check_pair(est, gt)?;
    let idx = masked(gt);
    let alpha = best_scale(est.values, gt.values, idx.iter().copied());
    windowed(est, gt, window, stride, |_| alpha)
}

/// Pearson correlation over masked pixels.
pub fn correlation(est: &Field<'_>, gt: &Field<'_>) -> Result<f64> {
    check_pair(est, gt)?;
    let idx = masked(gt);
    if idx.len() < 2 {
        return Err(Error::EmptyMask("correlation needs at least two pixels"));
    }
    let n = idx.len() as f64;
    let me = math::pairwise_sum(&idx.iter().map(|&i| est.values[i]).collect::<Vec<_>>()) / n;
    let mg = math::pairwise_sum(&idx.iter().map(|&i| gt.values[i]).collect::<Vec<_>>()) / n;
    let cov: Vec<f64> = idx.iter().map(|&i| (est.values[i] - me) * (gt.values[i] - mg)).collect();
    let ve: Vec<f64> = idx.iter().map(|&i| (est.values[i] - me).powi(2)).collect();
    let vg: Vec<f64> = idx.iter().map(|&i| (gt.values[i] - mg).powi(2)).collect();
    let (ve, vg) = (math::pairwise_sum(&ve), math::pairwise_sum(&vg));
    if ve <= 0.0 || vg <= 0.0 {
        return Err(Error::InvalidInput("correlation of a constant field".into()));
    }
    Ok((math::pairwise_sum(&cov) / (ve.sqrt() * vg.sqrt())).clamp(-1.0, 1.0))
}

/// The four metrics for one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub correlation: f64,
    pub mse: f64,
    pub lmse: f64,
    pub almse: f64,
}

impl MetricSet {
    pub fn compute(est: &Field<'_>, gt: &Field<'_>) -> Result<Self> {
        Ok(Self {
            correlation: correlation(est, gt)?,
            mse: si_mse(est, gt)?,
            lmse: lmse(est, gt, LMSE_WINDOW, LMSE_STRIDE)?,
            almse: almse(est, gt, LMSE_WINDOW, LMSE_STRIDE)?,
        })
    }

    fn mean(sets: &[MetricSet]) -> Self {
        let n = sets.len().max(1) as f64;
        let avg = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        Self {
            correlation: avg(|m| m.correlation),
            mse: avg(|m| m.mse),
            lmse: avg(|m| m.lmse),
            almse: avg(|m| m.almse),
        }
    }
}

/// Reflectance, shading and their average for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub reflectance: MetricSet,
    pub shading: MetricSet,
    pub mean: MetricSet,
}

impl PairMetrics {
    fn from_parts(reflectance: MetricSet, shading: MetricSet) -> Self {
        Self {
            reflectance,
            shading,
            mean: MetricSet::mean(&[reflectance, shading]),
        }
    }
}

/// Metrics on channel-mean reflectance and shading rasters.
pub fn evaluate_fields(
    est_r: &Field<'_>,
    est_s: &Field<'_>,
    gt_r: &Field<'_>,
    gt_s: &Field<'_>,
) -> Result<PairMetrics> {
    Ok(PairMetrics::from_parts(
        MetricSet::compute(est_r, gt_r)?,
        MetricSet::compute(est_s, gt_s)?,
    ))
}

/// Scores a decomposition against ground-truth reflectance and shading.
pub fn evaluate_pair(
    dec: &Decomposition,
    gt_r: &LinearImage,
    gt_s: &LinearImage,
    mask: &[bool],
) -> Result<PairMetrics> {
    evaluate_images(&dec.reflectance, &dec.shading, gt_r, gt_s, mask)
}

/// Same as [`evaluate_pair`] for raw reflectance and shading images.
pub fn evaluate_images(
    est_r: &LinearImage,
    est_s: &LinearImage,
    gt_r: &LinearImage,
    gt_s: &LinearImage,
    mask: &[bool],
) -> Result<PairMetrics> {
    let (w, h) = (gt_r.width(), gt_r.height());
    for img in [est_r, est_s, gt_s] {
        if img.width() != w || img.height() != h {
            return Err(Error::InvalidInput("rasters are not aligned".into()));
        }
    }
    let (er, es, gr, gs) = (est_r.gray(), est_s.gray(), gt_r.gray(), gt_s.gray());
    evaluate_fields(
        &Field::new(&er, mask, w, h)?,
        &Field::new(&es, mask, w, h)?,
        &Field::new(&gr, mask, w, h)?,
        &Field::new(&gs, mask, w, h)?,
    )
}

/// Per-image metrics and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<NamedMetrics>,
    pub aggregate: PairMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: PairMetrics,
}

impl MetricReport {
    pub fn new(images: Vec<NamedMetrics>) -> Self {
        let avg = |f: fn(&PairMetrics) -> MetricSet| {
            MetricSet::mean(&images.iter().map(|m| f(&m.metrics)).collect::<Vec<_>>())
        };
        let aggregate = PairMetrics {
            reflectance: avg(|m| m.reflectance),
            shading: avg(|m| m.shading),
            mean: avg(|m| m.mean),
        };
        Self { images, aggregate }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table with columns Correlation, MSE, LMSE, aLMSE; one row
    /// per image (reflectance/shading average) and a final mean row.
    pub fn to_table(&self) -> String {
        let width = self
            .images
            .iter()
            .map(|m| m.name.len())
            .chain(std::iter::once(4))
            .max()
            .unwrap_or(4);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>11}  {:>8}  {:>8}  {:>8}",
            "", "Correlation", "MSE", "LMSE", "aLMSE"
        );
        let row = |s: &mut String, name: &str, m: &MetricSet| {
            let _ = writeln!(
                s,
                "{:<width$}  {:>11.4}  {:>8.4}  {:>8.4}  {:>8.4}",
                name, m.correlation, m.mse, m.lmse, m.almse
            );
        };
        for m in &self.images {
            row(&mut s, &m.name, &m.metrics.mean);
        }
        row(&mut s, "mean", &self.aggregate.mean);
        s
    }
}
