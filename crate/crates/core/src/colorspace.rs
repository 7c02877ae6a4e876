//! Linear RGB images and the shadow-free UVB log space.
//!
//! UVB coordinates are the natural log of linear RGB rotated by an
//! orthonormal basis `H = [u, v, n]`, where `n` is the brightening direction.
//! Shading that acts along `n` in log space only moves the `b` coordinate,
//! which leaves `(u, v)` as illumination-free chromaticity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// Channel floor applied before taking logs.
pub const EPS_FLOOR: f64 = 1e-4;

/// Largest log-domain value accepted by [`uvb_to_rgb`] before saturating.
pub const LOG_SATURATION: f64 = 700.0;

/// Masked H×W linear RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    pixels: Vec<Vec3>,
    mask: Vec<bool>,
}

impl LinearImage {
    /// Builds an image, flooring channels at [`EPS_FLOOR`]. Non-finite values
    /// are rejected on masked pixels and replaced by the floor elsewhere.
    pub fn new(width: usize, height: usize, mut pixels: Vec<Vec3>, mask: Vec<bool>) -> Result<Self> {
        let len = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidImage("dimensions overflow".into()))?;
        if pixels.len() != len || mask.len() != len {
            return Err(Error::InvalidImage(format!(
                "expected {len} pixels and mask entries, got {} and {}",
                pixels.len(),
                mask.len()
            )));
        }
        for (i, (px, &m)) in pixels.iter_mut().zip(&mask).enumerate() {
            for c in px.iter_mut() {
                if !c.is_finite() {
                    if m {
                        return Err(Error::InvalidImage(format!(
                            "non-finite value at pixel {i}"
                        )));
                    }
                    *c = EPS_FLOOR;
                } else if *c < EPS_FLOOR {
                    *c = EPS_FLOOR;
                }
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
            mask,
        })
    }

    /// Image with every pixel in the foreground.
    pub fn unmasked(width: usize, height: usize, pixels: Vec<Vec3>) -> Result<Self> {
        let mask = vec![true; pixels.len()];
        Self::new(width, height, pixels, mask)
    }

    /// Uniform image of a single color.
    pub fn constant(width: usize, height: usize, rgb: Vec3) -> Result<Self> {
        Self::unmasked(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Vec3] {
        &self.pixels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vec3 {
        self.pixels[y * self.width + x]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of foreground pixels in raster order.
    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Replaces the mask, keeping pixels.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(self.width, self.height, self.pixels.clone(), mask)
    }

    /// Per-pixel channel mean.
    pub fn gray(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }
}

/// Orthonormal basis `H = [u, v, n]` of log-RGB space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrighteningBasis {
    pub u: Vec3,
    pub v: Vec3,
    pub n: Vec3,
}

impl BrighteningBasis {
    /// Basis for the neutral direction `(1,1,1)/√3`.
    pub fn neutral() -> Self {
        make_basis(neutral_direction()).expect("neutral direction is unit length")
    }

    /// `H` as a row-major 3×3 matrix whose columns are `u`, `v`, `n`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for r in 0..3 {
            h[r] = [self.u[r], self.v[r], self.n[r]];
        }
        h
    }

    /// `ln(rgb) · H`.
    #[inline]
    pub fn log_to_uvb(&self, log_rgb: &Vec3) -> Vec3 {
        [
            math::dot(log_rgb, &self.u),
            math::dot(log_rgb, &self.v),
            math::dot(log_rgb, &self.n),
        ]
    }

    /// `uvb · H⁻¹ = uvb · Hᵀ`.
    #[inline]
    pub fn uvb_to_log(&self, uvb: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = uvb[0] * self.u[c] + uvb[1] * self.v[c] + uvb[2] * self.n[c];
        }
        out
    }

    /// UVB coordinates of a single linear RGB triple (floored).
    #[inline]
    pub fn rgb_to_uvb(&self, rgb: &Vec3) -> Vec3 {
        let l = [
            rgb[0].max(EPS_FLOOR).ln(),
            rgb[1].max(EPS_FLOOR).ln(),
            rgb[2].max(EPS_FLOOR).ln(),
        ];
        self.log_to_uvb(&l)
    }

    /// Linear RGB of a single UVB triple, without saturation handling.
    #[inline]
    pub fn uvb_to_rgb(&self, uvb: &Vec3) -> Vec3 {
        let l = self.uvb_to_log(uvb);
        [l[0].exp(), l[1].exp(), l[2].exp()]
    }
}

pub fn neutral_direction() -> Vec3 {
    let s = 1.0 / 3f64.sqrt();
    [s, s, s]
}

/// Builds a deterministic orthonormal basis around `n`: `u` comes from
/// Gram–Schmidt on `e1` (or `e2` when `|n·e1| > 0.9`), `v = n × u`.
pub fn make_basis(n: Vec3) -> Result<BrighteningBasis> {
    let len = math::norm(&n);
    if !len.is_finite() || (len - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "brightening direction must be unit length, got norm {len}"
        )));
    }
    let n = math::scale(&n, 1.0 / len);
    let seed = if n[0].abs() > 0.9 {
        [0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let u = math::sub(&seed, &math::scale(&n, math::dot(&seed, &n)));
    let u = math::normalize(&u).expect("seed axis is not parallel to n");
    // second pass removes residual n component
    let u = math::normalize(&math::sub(&u, &math::scale(&n, math::dot(&u, &n)))).unwrap();
    let v = math::cross(&n, &u);
    Ok(BrighteningBasis { u, v, n })
}

/// Per-pixel UVB coordinates with the source mask.
#[derive(Debug, Clone, PartialEq)]
pub struct UvbImage {
    width: usize,
    height: usize,
    values: Vec<Vec3>,
    mask: Vec<bool>,
}

impl UvbImage {
    pub fn new(width: usize, height: usize, values: Vec<Vec3>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || mask.len() != values.len() {
            return Err(Error::InvalidImage("uvb dimensions mismatch".into()));
        }
        if values
            .iter()
            .zip(&mask)
            .any(|(v, &m)| m && v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidImage("non-finite uvb value".into()));
        }
        Ok(Self {
            width,
            height,
            values,
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The `b` coordinate of every pixel.
    pub fn brightness(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[2]).collect()
    }
}

/// `[I^u, I^v, I^b] = ln(I) · H` per pixel.
pub fn rgb_to_uvb(img: &LinearImage, basis: &BrighteningBasis) -> UvbImage {
    let values = img.pixels().iter().map(|p| basis.rgb_to_uvb(p)).collect();
    UvbImage {
        width: img.width(),
        height: img.height(),
        values,
        mask: img.mask().to_vec(),
    }
}

/// Result of converting UVB back to linear RGB.
#[derive(Debug, Clone)]
pub struct RgbRecovery {
    pub image: LinearImage,
    /// Set when any log-domain channel exceeded [`LOG_SATURATION`] and was clamped.
    pub saturated: bool,
}

/// `exp([u, v, b] · H⁻¹)` per pixel, saturating log values above
/// [`LOG_SATURATION`].
pub fn uvb_to_rgb(uvb: &UvbImage, basis: &BrighteningBasis) -> Result<RgbRecovery> {
    let mut saturated = false;
    let pixels = uvb
        .values()
        .iter()
        .map(|v| {
            let mut l = basis.uvb_to_log(v);
            for c in l.iter_mut() {
                if *c > LOG_SATURATION {
                    *c = LOG_SATURATION;
                    saturated = true;
                }
            }
            [l[0].exp(), l[1].exp(), l[2].exp()]
        })
        .collect();
    let image = LinearImage::new(uvb.width(), uvb.height(), pixels, uvb.mask().to_vec())?;
    Ok(RgbRecovery { image, saturated })
}

/// Settings for the entropy-minimizing direction search.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionConfig {
    /// Angular spacing of candidate directions, in degrees.
    pub resolution_deg: f64,
    /// Histogram bins per axis.
    pub bins: usize,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub min_pixels: usize,
    /// Pixels beyond this count are subsampled with a fixed stride.
    pub max_samples: usize,
    /// Candidates within this entropy of the neutral direction count as ties.
    pub tie_tolerance: f64,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self {
            resolution_deg: 3.0,
            bins: 64,
            lower_percentile: 2.5,
            upper_percentile: 97.5,
            min_pixels: 100,
            max_samples: 20_000,
            tie_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionFallback {
    TooFewPixels,
    /// No candidate beat the neutral direction.
    NoShadingSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub direction: Vec3,
    pub entropy: f64,
    pub fallback: Option<DirectionFallback>,
}

/// Unit directions on the nonnegative octant, neutral first, then a polar
/// grid at `resolution_deg`.
pub fn candidate_directions(resolution_deg: f64) -> Vec<Vec3> {
    let mut out = vec![neutral_direction()];
    let steps = (90.0 / resolution_deg).round().max(1.0) as usize;
    let step = 90f64.to_radians() / steps as f64;
    for ti in 0..=steps {
        let theta = ti as f64 * step;
        let phis = if ti == 0 { 1 } else { steps + 1 };
        for pi in 0..phis {
            let phi = pi as f64 * step;
            let d = [
                (theta.sin() * phi.cos()).max(0.0),
                (theta.sin() * phi.sin()).max(0.0),
                theta.cos().max(0.0),
            ];
            out.push(math::normalize(&d).unwrap());
        }
    }
    out
}

/// Shannon entropy (nats) of the 2-D histogram of log-RGB samples projected
/// onto the plane orthogonal to `n`.
pub fn projection_entropy(log_rgb: &[Vec3], n: Vec3, cfg: &DirectionConfig) -> f64 {
    let basis = match make_basis(n) {
        Ok(b) => b,
        Err(_) => return f64::INFINITY,
    };
    let mut us: Vec<f64> = log_rgb.iter().map(|l| math::dot(l, &basis.u)).collect();
    let mut vs: Vec<f64> = log_rgb.iter().map(|l| math::dot(l, &basis.v)).collect();
    let range = |vals: &mut Vec<f64>| {
        let mut scratch = vals.clone();
        let lo = math::percentile(&mut scratch, cfg.lower_percentile);
        let hi = math::percentile(&mut scratch, cfg.upper_percentile);
        (lo, hi)
    };
    let (ulo, uhi) = range(&mut us);
    let (vlo, vhi) = range(&mut vs);
    let bins = cfg.bins.max(1);
    let bin_of = |x: f64, lo: f64, hi: f64| -> Option<usize> {
        let w = hi - lo;
        if w <= 1e-12 {
            return ((x - lo).abs() <= 1e-12).then_some(0);
        }
        if x < lo || x > hi {
            return None;
        }
        Some((((x - lo) / w) * bins as f64).floor().min((bins - 1) as f64) as usize)
    };
    let mut hist = vec![0u32; bins * bins];
    let mut total = 0u64;
    for (&u, &v) in us.iter().zip(&vs) {
        if let (Some(bu), Some(bv)) = (bin_of(u, ulo, uhi), bin_of(v, vlo, vhi)) {
            hist[bv * bins + bu] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let terms: Vec<f64> = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .collect();
    math::pairwise_sum(&terms)
}

/// Picks the candidate direction whose orthogonal projection of the masked
/// log-RGB pixels has minimum histogram entropy. Ties resolve to the lowest
/// candidate index, which is the neutral direction.
pub fn estimate_brightening_direction(img: &LinearImage, cfg: &DirectionConfig) -> DirectionEstimate {
    let idx = img.masked_indices();
    if idx.len() < cfg.min_pixels.max(1) {
        return DirectionEstimate {
            direction: neutral_direction(),
            entropy: f64::NAN,
            fallback: Some(DirectionFallback::TooFewPixels),
        };
    }
    let stride = idx.len().div_ceil(cfg.max_samples.max(1)).max(1);
    let samples: Vec<Vec3> = idx
        .iter()
        .step_by(stride)
        .map(|&i| {
            let p = img.pixels()[i];
            [p[0].ln(), p[1].ln(), p[2].ln()]
        })
        .collect();

    let candidates = candidate_directions(cfg.resolution_deg);
    let neutral_entropy = projection_entropy(&samples, candidates[0], cfg);
    let mut best = (0usize, neutral_entropy);
    for (i, d) in candidates.iter().enumerate().skip(1) {
        let h = projection_entropy(&samples, *d, cfg);
        if h < best.1 - cfg.tie_tolerance {
            best = (i, h);
        }
    }
    DirectionEstimate {
        direction: candidates[best.0],
        entropy: best.1,
        fallback: (best.0 == 0).then_some(DirectionFallback::NoShadingSignal),
    }
}
