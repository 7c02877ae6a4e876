//! Energy terms of the decomposition objective.
//!
//! ```text
//! E = w_s·E_s(R^b) + w_r·E_r(R^b) + w_g·E_g(θ) + E_d(R^b, θ, L) + w_c·E_c(θ; y)
//! ```
//!
//! `E_s`/`E_r` are pairwise terms on the 4-connected lattice of masked pixels,
//! `E_g` is the log-determinant sparsity prior of the albedo mixture, `E_d`
//! the negative log-likelihood of body reflectance under the mixture, and
//! `E_c` the squared distance between the annotation and the mixture's
//! color composition.

mod gmm;

use serde::{Deserialize, Serialize};

use crate::colorspace::{BrighteningBasis, UvbImage};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::naming::{self, ColorComposition, NamingModel};

pub use gmm::{AlbedoGmm, SIGMA2_MIN};

/// Global illuminant as a log-domain bias in UVB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Illuminant {
    pub uvb: Vec3,
    pub rgb: Vec3,
}

impl Illuminant {
    pub fn from_uvb(uvb: Vec3, basis: &BrighteningBasis) -> Self {
        Self {
            uvb,
            rgb: basis.uvb_to_rgb(&uvb),
        }
    }

    /// The unit white illuminant.
    pub fn neutral() -> Self {
        Self {
            uvb: [0.0; 3],
            rgb: [1.0; 3],
        }
    }

    /// Mean of the RGB channels.
    pub fn intensity(&self) -> f64 {
        (self.rgb[0] + self.rgb[1] + self.rgb[2]) / 3.0
    }
}

/// Neighbor pairs `(p, q)` of the 4-connected lattice whose endpoints are both
/// masked: horizontal edges in raster order, then vertical edges.
pub fn lattice_pairs(width: usize, height: usize, mask: &[bool]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(2 * width * height);
    for y in 0..height {
        for x in 0..width.saturating_sub(1) {
            let p = y * width + x;
            if mask[p] && mask[p + 1] {
                pairs.push((p, p + 1));
            }
        }
    }
    for y in 0..height.saturating_sub(1) {
        for x in 0..width {
            let p = y * width + x;
            let q = p + width;
            if mask[p] && mask[q] {
                pairs.push((p, q));
            }
        }
    }
    pairs
}

/// Reflectance-edge labels (`true` = reflectance edge) on lattice pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    width: usize,
    pairs: Vec<(usize, usize)>,
    labels: Vec<bool>,
}

impl EdgeField {
    /// Labels every lattice pair with the same value.
    pub fn uniform(uvb: &UvbImage, label: bool) -> Self {
        let pairs = lattice_pairs(uvb.width(), uvb.height(), uvb.mask());
        let labels = vec![label; pairs.len()];
        Self {
            width: uvb.width(),
            pairs,
            labels,
        }
    }

    pub fn from_labels(uvb: &UvbImage, labels: Vec<bool>) -> Result<Self> {
        let pairs = lattice_pairs(uvb.width(), uvb.height(), uvb.mask());
        if pairs.len() != labels.len() {
            return Err(Error::InvalidInput("edge label count mismatch".into()));
        }
        Ok(Self {
            width: uvb.width(),
            pairs,
            labels,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reflectance_edge_count(&self) -> usize {
        self.labels.iter().filter(|&&g| g).count()
    }

    /// Label of the edge between lattice neighbors `(x, y)` and `(x2, y2)`,
    /// or `None` if they are not masked neighbors.
    pub fn label(&self, x: usize, y: usize, x2: usize, y2: usize) -> Option<bool> {
        let (a, b) = (y * self.width + x, y2 * self.width + x2);
        let key = (a.min(b), a.max(b));
        self.pairs
            .iter()
            .position(|&p| p == key)
            .map(|i| self.labels[i])
    }
}

/// Energy weights and Retinex edge thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyWeights {
    pub w_s: f64,
    pub w_r: f64,
    pub w_g: f64,
    pub w_c: f64,
    pub t_c: f64,
    pub t_bl: f64,
    pub t_bu: f64,
}

pub const DEFAULT_T_C: f64 = 0.05;
pub const DEFAULT_T_BL: f64 = 0.05;
pub const DEFAULT_T_BU: f64 = 0.8;

impl EnergyWeights {
    /// `w_s = 10`, `w_r = 100`, `w_g = 0.5·N/K`, `w_c = 5·N`.
    pub fn standard(n_pixels: usize, k: usize) -> Self {
        let n = n_pixels as f64;
        Self {
            w_s: 10.0,
            w_r: 100.0,
            w_g: 0.5 * n / k.max(1) as f64,
            w_c: 5.0 * n,
            t_c: DEFAULT_T_C,
            t_bl: DEFAULT_T_BL,
            t_bu: DEFAULT_T_BU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_s, self.w_r, self.w_g, self.w_c, self.t_c, self.t_bl, self.t_bu];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidConfig("weights and thresholds must be nonnegative".into()));
        }
        if self.t_bl >= self.t_bu {
            return Err(Error::InvalidConfig("t_bl must be below t_bu".into()));
        }
        Ok(())
    }
}

/// Soft assignments of masked pixels (rows, raster order) to components.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    k: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || !values.len().is_multiple_of(k) {
            return Err(Error::InvalidInput("responsibility shape mismatch".into()));
        }
        Ok(Self { k, values })
    }

    /// Every pixel fully assigned to component `j`.
    pub fn hard(n: usize, k: usize, assign: impl Fn(usize) -> usize) -> Self {
        let mut values = vec![0.0; n * k];
        for p in 0..n {
            values[p * k + assign(p)] = 1.0;
        }
        Self { k, values }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.k..(p + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Component populations `N_k = Σ_p γ_{p,k}`.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.k)
            .map(|j| {
                let col: Vec<f64> = (0..self.n()).map(|p| self.values[p * self.k + j]).collect();
                math::pairwise_sum(&col)
            })
            .collect()
    }

    /// Index of the largest entry of each row.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n()).map(|p| naming::argmax(self.row(p))).collect()
    }

    /// Keeps only the listed columns and renormalizes rows.
    pub(crate) fn retain_columns(&self, keep: &[usize]) -> Self {
        let k = keep.len();
        let mut values = Vec::with_capacity(self.n() * k);
        for p in 0..self.n() {
            let row = self.row(p);
            let start = values.len();
            values.extend(keep.iter().map(|&j| row[j]));
            let s: f64 = values[start..].iter().sum();
            if s > 0.0 {
                for v in &mut values[start..] {
                    *v /= s;
                }
            } else {
                for v in &mut values[start..] {
                    *v = 1.0 / k as f64;
                }
            }
        }
        Self { k, values }
    }
}

/// Body reflectance `R̂_p = [I^u − L^u, I^v − L^v, R^b − L^b]`.
#[inline]
pub fn body_reflectance(i_uvb: &Vec3, rb: f64, l: &Vec3) -> Vec3 {
    [i_uvb[0] - l[0], i_uvb[1] - l[1], rb - l[2]]
}

/// Labels a lattice edge as a reflectance edge when the chromaticity step
/// exceeds `t_c` or the brightness step lies strictly between `t_bl` and
/// `t_bu`.
pub fn classify_edges(uvb: &UvbImage, w: &EnergyWeights) -> EdgeField {
    let pairs = lattice_pairs(uvb.width(), uvb.height(), uvb.mask());
    let vals = uvb.values();
    let labels = pairs
        .iter()
        .map(|&(p, q)| {
            let du = vals[q][0] - vals[p][0];
            let dv = vals[q][1] - vals[p][1];
            let db = (vals[q][2] - vals[p][2]).abs();
            (du * du + dv * dv).sqrt() > w.t_c || (db > w.t_bl && db < w.t_bu)
        })
        .collect();
    EdgeField {
        width: uvb.width(),
        pairs,
        labels,
    }
}

fn pairwise_residual_sum(
    rb: &[f64],
    uvb: &UvbImage,
    pairs: &[(usize, usize)],
    gate: impl Fn(usize) -> f64,
) -> f64 {
    let v = uvb.values();
    let terms: Vec<f64> = pairs
        .iter()
        .enumerate()
        .map(|(e, &(p, q))| {
            let r = rb[p] - rb[q] - gate(e) * (v[p][2] - v[q][2]);
            r * r
        })
        .collect();
    math::pairwise_sum(&terms)
}

/// `E_s = Σ_{p∼q} (R^b_p − R^b_q − (I^b_p − I^b_q))²`.
pub fn smoothness_energy(rb: &[f64], uvb: &UvbImage) -> f64 {
    let pairs = lattice_pairs(uvb.width(), uvb.height(), uvb.mask());
    pairwise_residual_sum(rb, uvb, &pairs, |_| 1.0)
}

/// `E_r = Σ_{p∼q} (R^b_p − R^b_q − g_{p,q}·(I^b_p − I^b_q))²`.
pub fn retinex_energy(rb: &[f64], uvb: &UvbImage, edges: &EdgeField) -> f64 {
    pairwise_residual_sum(rb, uvb, edges.pairs(), |e| {
        if edges.labels[e] {
            1.0
        } else {
            0.0
        }
    })
}

/// `E_g = Σ_k ln|Σ_k|` for diagonal covariances.
pub fn sparsity_energy(gmm: &AlbedoGmm) -> f64 {
    let terms: Vec<f64> = gmm
        .variances()
        .iter()
        .map(|v| v.iter().map(|s| s.ln()).sum())
        .collect();
    math::pairwise_sum(&terms)
}

/// Masked pixel indices of `uvb` in raster order.
pub fn masked_indices(uvb: &UvbImage) -> Vec<usize> {
    uvb.mask()
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Hard form `−Σ_p ln Σ_k π_k N(R̂_p | μ_k, Σ_k)`.
pub fn data_energy(rb: &[f64], uvb: &UvbImage, gmm: &AlbedoGmm, l: &Illuminant) -> f64 {
    let v = uvb.values();
    let terms: Vec<f64> = masked_indices(uvb)
        .into_iter()
        .map(|p| -gmm.log_likelihood(&body_reflectance(&v[p], rb[p], &l.uvb)))
        .collect();
    math::pairwise_sum(&terms)
}

/// Responsibility form `−Σ_{p,k} γ_{p,k} (ln π_k + ln N(R̂_p | μ_k, Σ_k))`.
pub fn data_energy_soft(
    rb: &[f64],
    uvb: &UvbImage,
    gmm: &AlbedoGmm,
    l: &Illuminant,
    gamma: &Responsibilities,
) -> Result<f64> {
    let idx = masked_indices(uvb);
    if gamma.n() != idx.len() || gamma.k() != gmm.k() {
        return Err(Error::InvalidInput("responsibilities do not match state".into()));
    }
    let v = uvb.values();
    let terms: Vec<f64> = idx
        .iter()
        .enumerate()
        .map(|(row, &p)| {
            let x = body_reflectance(&v[p], rb[p], &l.uvb);
            let mut s = 0.0;
            for (k, g) in gamma.row(row).iter().enumerate() {
                if *g > 0.0 {
                    s -= g * gmm.log_joint(k, &x);
                }
            }
            s
        })
        .collect();
    Ok(math::pairwise_sum(&terms))
}

/// `E_c = ‖y − ỹ(μ)·π‖²`.
pub fn naming_energy(
    gmm: &AlbedoGmm,
    model: &NamingModel,
    basis: &BrighteningBasis,
    y: &ColorComposition,
) -> f64 {
    let mix = naming::component_compositions(model, gmm, basis).mix(gmm.weights());
    y.squared_distance(&mix)
}

/// Individual terms (unweighted) and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub es: f64,
    pub er: f64,
    pub eg: f64,
    pub ed: f64,
    pub ec: f64,
}

impl EnergyBreakdown {
    pub fn from_terms(es: f64, er: f64, eg: f64, ed: f64, ec: f64, w: &EnergyWeights) -> Self {
        let total = w.w_s * es + w.w_r * er + w.w_g * eg + ed + w.w_c * ec;
        Self {
            total,
            es,
            er,
            eg,
            ed,
            ec,
        }
    }
}

/// Which form of `E_d` enters the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataForm {
    /// Mixture negative log-likelihood.
    Hard,
    /// Responsibility-weighted bound.
    Soft,
}

/// Inputs shared by the total-energy evaluation.
pub struct EnergyInputs<'a> {
    pub uvb: &'a UvbImage,
    pub edges: &'a EdgeField,
    pub weights: &'a EnergyWeights,
    pub model: &'a NamingModel,
    pub basis: &'a BrighteningBasis,
    pub annotation: &'a ColorComposition,
}

/// `w_s·E_s + w_r·E_r + w_g·E_g + E_d + w_c·E_c`.
pub fn total_energy(
    rb: &[f64],
    gmm: &AlbedoGmm,
    l: &Illuminant,
    gamma: &Responsibilities,
    inputs: &EnergyInputs<'_>,
    form: DataForm,
) -> Result<EnergyBreakdown> {
    let es = pairwise_residual_sum(rb, inputs.uvb, inputs.edges.pairs(), |_| 1.0);
    let er = retinex_energy(rb, inputs.uvb, inputs.edges);
    let eg = sparsity_energy(gmm);
    let ed = match form {
        DataForm::Soft => data_energy_soft(rb, inputs.uvb, gmm, l, gamma)?,
        DataForm::Hard => data_energy(rb, inputs.uvb, gmm, l),
    };
    let ec = naming_energy(gmm, inputs.model, inputs.basis, inputs.annotation);
    let e = EnergyBreakdown::from_terms(es, er, eg, ed, ec, inputs.weights);
    if !e.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite total energy {e:?}")));
    }
    Ok(e)
}

/// The `R^b` sub-objective `w_s·E_s + w_r·E_r + E_d(soft)` with γ, θ and L
/// held fixed. Per pixel, `E_d(soft)` is a quadratic in `R^b_p`, so the
/// objective is precomputed into edge residual offsets and per-pixel
/// quadratic coefficients.
#[derive(Debug, Clone)]
pub struct RbObjective {
    len: usize,
    w_s: f64,
    w_r: f64,
    pairs: Vec<(usize, usize)>,
    /// `I^b_p − I^b_q` per pair.
    di: Vec<f64>,
    gated: Vec<bool>,
    pixels: Vec<usize>,
    /// `Σ_k γ_{p,k} / σ²_{k,b}`.
    quad: Vec<f64>,
    /// `Σ_k γ_{p,k} (L^b + μ^b_k) / σ²_{k,b}`.
    lin: Vec<f64>,
    /// Remaining Rb-independent part of the soft data term.
    constant: Vec<f64>,
}

impl RbObjective {
    pub fn new(
        uvb: &UvbImage,
        edges: &EdgeField,
        gmm: &AlbedoGmm,
        l: &Illuminant,
        gamma: &Responsibilities,
        w: &EnergyWeights,
    ) -> Result<Self> {
        let pixels = masked_indices(uvb);
        if gamma.n() != pixels.len() || gamma.k() != gmm.k() {
            return Err(Error::InvalidInput("responsibilities do not match state".into()));
        }
        let v = uvb.values();
        let di = edges.pairs().iter().map(|&(p, q)| v[p][2] - v[q][2]).collect();
        let mut quad = Vec::with_capacity(pixels.len());
        let mut lin = Vec::with_capacity(pixels.len());
        let mut constant = Vec::with_capacity(pixels.len());
        for (row, &p) in pixels.iter().enumerate() {
            let (mut a, mut c, mut k0) = (0.0, 0.0, 0.0);
            for (k, &g) in gamma.row(row).iter().enumerate() {
                if g <= 0.0 {
                    continue;
                }
                let mu = gmm.means()[k];
                let var = gmm.variances()[k];
                let m = l.uvb[2] + mu[2];
                a += g / var[2];
                c += g * m / var[2];
                // everything of -γ(ln π + ln N) except the Rb-dependent part
                let x_uv = body_reflectance(&v[p], m, &l.uvb);
                k0 -= g * gmm.log_joint(k, &x_uv);
                k0 += g * m * m / (2.0 * var[2]);
            }
            quad.push(a);
            lin.push(c);
            constant.push(k0);
        }
        Ok(Self {
            len: uvb.len(),
            w_s: w.w_s,
            w_r: w.w_r,
            pairs: edges.pairs().to_vec(),
            di,
            gated: edges.labels().to_vec(),
            pixels,
            quad,
            lin,
            constant,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    /// Objective value.
    pub fn value(&self, rb: &[f64]) -> f64 {
        let edge_terms: Vec<f64> = self
            .pairs
            .iter()
            .zip(&self.di)
            .zip(&self.gated)
            .map(|((&(p, q), &di), &g)| {
                let d = rb[p] - rb[q];
                let rs = d - di;
                let rr = if g { rs } else { d };
                self.w_s * rs * rs + self.w_r * rr * rr
            })
            .collect();
        let px_terms: Vec<f64> = self
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let x = rb[p];
                0.5 * self.quad[i] * x * x - self.lin[i] * x + self.constant[i]
            })
            .collect();
        math::pairwise_sum(&edge_terms) + math::pairwise_sum(&px_terms)
    }

    /// Diagonal of the (constant) Hessian; zero on unmasked pixels.
    pub fn hessian_diagonal(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.len];
        let c = 2.0 * (self.w_s + self.w_r);
        for &(p, q) in &self.pairs {
            h[p] += c;
            h[q] += c;
        }
        for (i, &p) in self.pixels.iter().enumerate() {
            h[p] += self.quad[i];
        }
        h
    }

    /// Analytic gradient; zero on unmasked pixels.
    pub fn gradient(&self, rb: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.len];
        for ((&(p, q), &di), &gate) in self.pairs.iter().zip(&self.di).zip(&self.gated) {
            let d = rb[p] - rb[q];
            let rs = d - di;
            let rr = if gate { rs } else { d };
            let t = 2.0 * (self.w_s * rs + self.w_r * rr);
            g[p] += t;
            g[q] -= t;
        }
        for (i, &p) in self.pixels.iter().enumerate() {
            g[p] += self.quad[i] * rb[p] - self.lin[i];
        }
        g
    }
}

/// `∂(w_s·E_s + w_r·E_r + E_d(soft)) / ∂R^b_p` on every pixel.
pub fn rb_gradient(
    rb: &[f64],
    uvb: &UvbImage,
    gmm: &AlbedoGmm,
    l: &Illuminant,
    edges: &EdgeField,
    gamma: &Responsibilities,
    w: &EnergyWeights,
) -> Result<Vec<f64>> {
    Ok(RbObjective::new(uvb, edges, gmm, l, gamma, w)?.gradient(rb))
}
