//! Color naming over the eleven basic color terms.
//!
//! A [`NamingModel`] maps a display-referred (sRGB-encoded) RGB triple to a
//! distribution over the terms. It is used three ways: naming individual
//! pixels, naming GMM cluster centers (the component-level compositions),
//! and composing an image-level composition from either.

mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::colorspace::{BrighteningBasis, LinearImage};
use crate::energy::AlbedoGmm;
use crate::error::{Error, Result};
use crate::math::{self, Vec3};

pub use table::{NamingTable, TABLE_MAGIC, TABLE_VERSION};

/// Number of basic color terms.
pub const TERM_COUNT: usize = 11;

/// Basic color terms in their fixed order.
pub const TERMS: [&str; TERM_COUNT] = [
    "black", "blue", "brown", "gray", "green", "orange", "pink", "purple", "red", "white", "yellow",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorTerm {
    Black,
    Blue,
    Brown,
    Gray,
    Green,
    Orange,
    Pink,
    Purple,
    Red,
    White,
    Yellow,
}

impl ColorTerm {
    pub const ALL: [ColorTerm; TERM_COUNT] = [
        ColorTerm::Black,
        ColorTerm::Blue,
        ColorTerm::Brown,
        ColorTerm::Gray,
        ColorTerm::Green,
        ColorTerm::Orange,
        ColorTerm::Pink,
        ColorTerm::Purple,
        ColorTerm::Red,
        ColorTerm::White,
        ColorTerm::Yellow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        TERMS[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        TERMS.iter().position(|t| *t == name).map(|i| Self::ALL[i])
    }

    /// Representative sRGB-encoded color of the term.
    pub fn prototype_srgb(self) -> Vec3 {
        let p = PROTOTYPES_8BIT[self.index()];
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }
}

/// Prototype colors (8-bit sRGB) in term order. Kept in sync with
/// `scripts/gen_naming_table.py`.
pub const PROTOTYPES_8BIT: [[u8; 3]; TERM_COUNT] = [
    [20, 20, 20],
    [30, 80, 200],
    [120, 70, 30],
    [128, 128, 128],
    [40, 160, 60],
    [245, 140, 30],
    [245, 160, 190],
    [130, 50, 160],
    [200, 30, 35],
    [245, 245, 245],
    [245, 225, 40],
];

/// CIELAB coordinates are divided by this before prototype distances.
pub const OPPONENT_SCALE: f64 = 40.0;

/// Default softmax temperature.
pub const DEFAULT_TAU: f64 = 0.08;

/// Proportions of the eleven terms; always a simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorComposition {
    values: [f64; TERM_COUNT],
}

impl ColorComposition {
    /// Validates a raw annotation: entries finite and nonnegative, sum within
    /// 1e-3 of one. The result is renormalized.
    pub fn new(values: [f64; TERM_COUNT]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::annotation(TERMS[i], "value is not finite"));
            }
            if *v < 0.0 {
                return Err(Error::annotation(TERMS[i], format!("negative value {v}")));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::annotation(
                "sum",
                format!("entries sum to {sum}, expected 1 within 1e-3"),
            ));
        }
        Ok(Self::normalized_unchecked(values, sum))
    }

    /// Normalizes any nonnegative weight vector with positive sum.
    pub fn from_weights(values: [f64; TERM_COUNT]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        Ok(Self::normalized_unchecked(values, sum))
    }

    fn normalized_unchecked(mut values: [f64; TERM_COUNT], sum: f64) -> Self {
        for v in values.iter_mut() {
            *v /= sum;
        }
        Self { values }
    }

    /// All mass on one term.
    pub fn pure(term: ColorTerm) -> Self {
        let mut values = [0.0; TERM_COUNT];
        values[term.index()] = 1.0;
        Self { values }
    }

    pub fn uniform() -> Self {
        Self {
            values: [1.0 / TERM_COUNT as f64; TERM_COUNT],
        }
    }

    pub fn values(&self) -> &[f64; TERM_COUNT] {
        &self.values
    }

    pub fn get(&self, term: ColorTerm) -> f64 {
        self.values[term.index()]
    }

    /// Term with the largest share (lowest index on ties).
    pub fn dominant(&self) -> ColorTerm {
        ColorTerm::ALL[argmax(&self.values)]
    }

    /// Number of entries strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.values.iter().filter(|&&v| v > threshold).count()
    }

    /// Parses the annotation JSON object keyed by term names. Missing keys
    /// count as zero; unknown keys, negative values and a sum away from one
    /// are rejected with the offending key named.
    pub fn from_json_value(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::annotation("annotation", "expected a JSON object"))?;
        let mut values = [0.0; TERM_COUNT];
        for (key, v) in obj {
            let term = ColorTerm::from_name(key)
                .ok_or_else(|| Error::annotation(key.clone(), "unknown color term"))?;
            let x = v
                .as_f64()
                .ok_or_else(|| Error::annotation(key.clone(), "value is not a number"))?;
            values[term.index()] = x;
        }
        Self::new(values)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)
            .map_err(|e| Error::annotation("annotation", format!("malformed JSON: {e}")))?;
        Self::from_json_value(&v)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        TERMS
            .iter()
            .zip(self.values.iter())
            .map(|(t, v)| (t.to_string(), *v))
            .collect()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for (t, v) in TERMS.iter().zip(self.values.iter()) {
            m.insert(t.to_string(), serde_json::json!(v));
        }
        serde_json::Value::Object(m)
    }

    /// Squared Euclidean distance to a raw 11-vector.
    pub fn squared_distance(&self, other: &[f64; TERM_COUNT]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl Serialize for ColorComposition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ColorComposition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Self::from_json_value(&v).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// sRGB transfer function (linear -> encoded), input clamped to [0, 1].
pub fn srgb_encode(linear: f64) -> f64 {
    let c = linear.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Inverse sRGB transfer function (encoded -> linear).
pub fn srgb_decode(encoded: f64) -> f64 {
    let c = encoded.clamp(0.0, 1.0);
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn srgb_encode3(linear: &Vec3) -> Vec3 {
    [srgb_encode(linear[0]), srgb_encode(linear[1]), srgb_encode(linear[2])]
}

/// sRGB-encoded color -> CIELAB (D65) divided by [`OPPONENT_SCALE`].
pub fn opponent(rgb: &Vec3) -> Vec3 {
    const M: [[f64; 3]; 3] = [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ];
    const WHITE: Vec3 = [0.95047, 1.0, 1.08883];
    let lin = [srgb_decode(rgb[0]), srgb_decode(rgb[1]), srgb_decode(rgb[2])];
    let mut xyz = [0.0; 3];
    for r in 0..3 {
        xyz[r] = math::dot(&M[r], &lin) / WHITE[r];
    }
    let f = |t: f64| {
        let d = 6.0 / 29.0;
        if t > d * d * d {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(xyz[0]), f(xyz[1]), f(xyz[2]));
    [
        (116.0 * fy - 16.0) / OPPONENT_SCALE,
        500.0 * (fx - fy) / OPPONENT_SCALE,
        200.0 * (fy - fz) / OPPONENT_SCALE,
    ]
}

/// Softmax over negative squared distances to term prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricNaming {
    prototypes: [Vec3; TERM_COUNT],
    tau: f64,
}

impl ParametricNaming {
    /// Prototypes from [`PROTOTYPES_8BIT`] at temperature `tau`.
    pub fn new(tau: f64) -> Result<Self> {
        let prototypes = ColorTerm::ALL.map(|t| opponent(&t.prototype_srgb()));
        Self::with_prototypes(prototypes, tau)
    }

    /// Prototypes given directly in opponent coordinates.
    pub fn with_prototypes(prototypes: [Vec3; TERM_COUNT], tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { prototypes, tau })
    }

    pub fn prototypes(&self) -> &[Vec3; TERM_COUNT] {
        &self.prototypes
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn probabilities(&self, rgb: &Vec3) -> [f64; TERM_COUNT] {
        let o = opponent(rgb);
        let mut logits = [0.0; TERM_COUNT];
        for (l, p) in logits.iter_mut().zip(&self.prototypes) {
            let d = math::sub(&o, p);
            *l = -math::dot(&d, &d) / self.tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in logits.iter_mut() {
            *l /= sum;
        }
        logits
    }
}

/// The naming projection from sRGB-encoded color to term distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum NamingModel {
    Table(NamingTable),
    Parametric(ParametricNaming),
}

static BUNDLED_TABLE: &[u8] = include_bytes!("../../assets/naming_table.bin");

impl Default for NamingModel {
    /// The bundled table, or the parametric model if the asset fails to parse.
    fn default() -> Self {
        Self::bundled().unwrap_or_else(|_| Self::parametric())
    }
}

impl NamingModel {
    pub fn bundled() -> Result<Self> {
        NamingTable::from_bytes(BUNDLED_TABLE).map(NamingModel::Table)
    }

    pub fn parametric() -> Self {
        NamingModel::Parametric(ParametricNaming::new(DEFAULT_TAU).expect("default tau is valid"))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        NamingTable::from_bytes(&bytes).map(NamingModel::Table)
    }

    /// Raw term probabilities for an sRGB-encoded color (clamped to [0,1]³).
    pub fn probabilities(&self, rgb: &Vec3) -> [f64; TERM_COUNT] {
        let c = [
            rgb[0].clamp(0.0, 1.0),
            rgb[1].clamp(0.0, 1.0),
            rgb[2].clamp(0.0, 1.0),
        ];
        match self {
            NamingModel::Table(t) => t.lookup(&c),
            NamingModel::Parametric(p) => p.probabilities(&c),
        }
    }

    pub fn name_color(&self, rgb: &Vec3) -> ColorComposition {
        ColorComposition {
            values: self.probabilities(rgb),
        }
    }

    /// Most likely term for a linear RGB value.
    pub fn term_of_linear(&self, linear: &Vec3) -> ColorTerm {
        ColorTerm::ALL[argmax(&self.probabilities(&srgb_encode3(linear)))]
    }
}

/// `T(rgb)` for an sRGB-encoded color.
pub fn name_color(model: &NamingModel, rgb: &Vec3) -> ColorComposition {
    model.name_color(rgb)
}

/// Mask-weighted mean naming of the gamma-encoded pixels.
pub fn auto_compose_image(model: &NamingModel, img: &LinearImage) -> Result<ColorComposition> {
    let idx = img.masked_indices();
    if idx.is_empty() {
        return Err(Error::EmptyMask("cannot name an image without foreground pixels"));
    }
    let mut per_term: Vec<Vec<f64>> = vec![Vec::with_capacity(idx.len()); TERM_COUNT];
    for &i in &idx {
        let p = model.probabilities(&srgb_encode3(&img.pixels()[i]));
        for (t, v) in p.iter().enumerate() {
            per_term[t].push(*v);
        }
    }
    let n = idx.len() as f64;
    let mut values = [0.0; TERM_COUNT];
    for (t, vals) in per_term.iter().enumerate() {
        values[t] = math::pairwise_sum(vals) / n;
    }
    ColorComposition::from_weights(values)
}

/// Display color of a UVB cluster mean: `srgb(clamp01(exp(μ · H⁻¹)))`.
pub fn mean_to_display(mean: &Vec3, basis: &BrighteningBasis) -> Vec3 {
    let lin = basis.uvb_to_rgb(mean);
    srgb_encode3(&[
        lin[0].clamp(0.0, 1.0),
        lin[1].clamp(0.0, 1.0),
        lin[2].clamp(0.0, 1.0),
    ])
}

/// 11×K component-level compositions; column k names the k-th mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    columns: Vec<[f64; TERM_COUNT]>,
}

impl CompositionMatrix {
    pub fn from_columns(columns: Vec<[f64; TERM_COUNT]>) -> Self {
        Self { columns }
    }

    pub fn columns(&self) -> &[[f64; TERM_COUNT]] {
        &self.columns
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    /// `ỹ(μ)·π` without renormalization.
    pub fn mix(&self, pi: &[f64]) -> [f64; TERM_COUNT] {
        assert_eq!(pi.len(), self.columns.len());
        let mut out = [0.0; TERM_COUNT];
        for (col, w) in self.columns.iter().zip(pi) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += w * c;
            }
        }
        out
    }

    /// Gram matrix `ỹᵀỹ` (K×K, row-major).
    pub fn gram(&self) -> Vec<f64> {
        let k = self.k();
        let mut g = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                g[i * k + j] = self.columns[i]
                    .iter()
                    .zip(&self.columns[j])
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        g
    }

    /// `ỹᵀ y` (K-vector).
    pub fn project(&self, y: &ColorComposition) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| c.iter().zip(y.values()).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Column k = naming of the k-th GMM mean mapped to display RGB.
pub fn component_compositions(
    model: &NamingModel,
    gmm: &AlbedoGmm,
    basis: &BrighteningBasis,
) -> CompositionMatrix {
    compositions_of_means(model, gmm.means(), basis)
}

pub fn compositions_of_means(
    model: &NamingModel,
    means: &[Vec3],
    basis: &BrighteningBasis,
) -> CompositionMatrix {
    CompositionMatrix {
        columns: means
            .iter()
            .map(|m| model.probabilities(&mean_to_display(m, basis)))
            .collect(),
    }
}

/// Weighted squared opponent distance from each mean's display color to the
/// nearest term prototype. Small values mean typical, well-named colors.
pub fn typicality(means: &[Vec3], weights: &[f64], basis: &BrighteningBasis) -> f64 {
    let protos = ColorTerm::ALL.map(|t| opponent(&t.prototype_srgb()));
    means
        .iter()
        .zip(weights)
        .map(|(m, w)| {
            let o = opponent(&mean_to_display(m, basis));
            let d = protos
                .iter()
                .map(|p| {
                    let e = math::sub(&o, p);
                    math::dot(&e, &e)
                })
                .fold(f64::INFINITY, f64::min);
            w * d
        })
        .sum()
}

/// `ỹ(μ)·π`, renormalized to a simplex.
pub fn compose_reflectance(
    model: &NamingModel,
    gmm: &AlbedoGmm,
    basis: &BrighteningBasis,
) -> ColorComposition {
    let y = component_compositions(model, gmm, basis).mix(gmm.weights());
    ColorComposition::from_weights(y).unwrap_or_else(|_| ColorComposition::uniform())
}
