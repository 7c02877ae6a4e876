use serde::{Deserialize, Serialize};

use crate::colorspace::{BrighteningBasis, DirectionConfig};
use crate::energy::{EnergyWeights, Illuminant};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Feasible illuminant domain, sampled on a regular grid.
///
/// Chroma `(L^u, L^v)` runs over `[-chroma_range, chroma_range]²` at
/// `chroma_step`; for each chroma, `L^b` is solved so the mean RGB intensity
/// hits each of `intensity_levels` log-spaced values in
/// `[intensity_min, intensity_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlluminantGrid {
    pub chroma_range: f64,
    pub chroma_step: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub intensity_levels: usize,
}

impl Default for IlluminantGrid {
    fn default() -> Self {
        Self {
            chroma_range: 0.3,
            chroma_step: 0.05,
            intensity_min: 0.5,
            intensity_max: 2.0,
            intensity_levels: 9,
        }
    }
}

impl IlluminantGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.chroma_range.is_finite()
            && self.chroma_range >= 0.0
            && self.chroma_step.is_finite()
            && self.chroma_step > 0.0
            && self.intensity_min > 0.0
            && self.intensity_max >= self.intensity_min
            && self.intensity_max.is_finite()
            && self.intensity_levels > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("illuminant grid is empty or malformed".into()))
        }
    }

    /// Chroma coordinates along one axis, ascending.
    pub fn chroma_values(&self) -> Vec<f64> {
        let n = (self.chroma_range / self.chroma_step + 1e-9).floor() as i64;
        (-n..=n).map(|i| i as f64 * self.chroma_step).collect()
    }

    pub fn intensity_values(&self) -> Vec<f64> {
        let n = self.intensity_levels;
        if n == 1 {
            return vec![(self.intensity_min * self.intensity_max).sqrt()];
        }
        let (a, b) = (self.intensity_min.ln(), self.intensity_max.ln());
        (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    /// Every candidate, indexed `(iu · n_chroma + iv) · n_levels + il`.
    pub fn candidates(&self, basis: &BrighteningBasis) -> Vec<Illuminant> {
        let chroma = self.chroma_values();
        let levels = self.intensity_values();
        let mut out = Vec::with_capacity(chroma.len() * chroma.len() * levels.len());
        for &lu in &chroma {
            for &lv in &chroma {
                for &t in &levels {
                    let lb = brightness_for_intensity(lu, lv, t, basis);
                    out.push(Illuminant::from_uvb([lu, lv, lb], basis));
                }
            }
        }
        out
    }

    /// Index of the candidate with zero chroma at the middle intensity level.
    pub fn neutral_index(&self) -> usize {
        let nc = self.chroma_values().len();
        let mid = nc / 2;
        (mid * nc + mid) * self.intensity_levels + self.intensity_levels / 2
    }

    pub fn len(&self) -> usize {
        let nc = self.chroma_values().len();
        nc * nc * self.intensity_levels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Solves `mean(exp([lu, lv, lb]·Hᵀ)) = t` for `lb` by bisection; the mean is
/// increasing in `lb` because `n` has nonnegative components.
pub fn brightness_for_intensity(lu: f64, lv: f64, t: f64, basis: &BrighteningBasis) -> f64 {
    let f = |lb: f64| {
        let rgb = basis.uvb_to_rgb(&[lu, lv, lb]);
        (rgb[0] + rgb[1] + rgb[2]) / 3.0 - t
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Backtracking gradient-descent settings for the `R^b` update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    pub method: DescentMethod,
    pub initial_step: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub max_backtracks: usize,
}

/// Direction rule of the `R^b` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    /// Preconditioned steepest descent.
    Gradient,
    /// Preconditioned nonlinear conjugate gradient.
    ConjugateGradient,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            method: DescentMethod::ConjugateGradient,
            initial_step: 1.0,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_iter: 200,
            rel_tol: 1e-5,
            max_backtracks: 60,
        }
    }
}

/// ADMM settings for the mixing-weight update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eta: f64,
    pub t_d: f64,
    pub max_iter: usize,
    /// Primal feasibility required before the objective-drop rule may stop.
    pub residual_tol: f64,
    /// KKT residual below which the input weights are returned as optimal.
    pub stationary_tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 20.0,
            eta: 0.001,
            t_d: 1e-6,
            max_iter: 100_000,
            residual_tol: 1e-2,
            stationary_tol: 1e-6,
        }
    }
}

/// Initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Annotation entries above this count as present colors.
    pub composition_threshold: f64,
    /// Percentile of `I^b` taken as the fully lit brightness of a cluster.
    pub lit_percentile: f64,
    pub kmeans_iter: usize,
    pub gmm_iter: usize,
    pub gmm_tol: f64,
    /// Candidates whose naming energy is within this of the best are tied;
    /// ties go to the candidate whose cluster colors sit closest to their
    /// term prototypes.
    pub tie_tolerance: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            composition_threshold: 0.005,
            lit_percentile: 90.0,
            kmeans_iter: 100,
            gmm_iter: 50,
            gmm_tol: 1e-6,
            tie_tolerance: 1e-3,
        }
    }
}

/// Solver for the guided mixing-weight subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSolver {
    /// Three-way splitting with explicit gradient steps ([`AdmmConfig`]).
    Admm,
    /// Equality-constrained Newton; reaches the optimum in a few steps.
    Newton,
}

/// Everything the solver needs besides the image, annotation and naming model.
/// Deserializes from JSON with the same field names; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub k: usize,
    pub delta: f64,
    pub max_outer_iter: usize,
    pub em_inner_iter: usize,
    pub seed: u64,
    /// Disables the naming term (`w_c = 0`, closed-form π).
    pub color_naming: bool,
    pub weight_solver: WeightSolver,
    pub admm: AdmmConfig,
    pub descent: DescentConfig,
    pub illuminant: IlluminantGrid,
    pub init: InitConfig,
    pub direction: DirectionConfig,
    /// Fixed brightening direction; estimated per image when absent.
    pub brightening_direction: Option<Vec3>,
    /// Energy weights; the standard `N`/`K`-scaled set when absent.
    pub weights: Option<EnergyWeights>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 25,
            delta: 0.01,
            max_outer_iter: 50,
            em_inner_iter: 10,
            seed: 0,
            color_naming: true,
            weight_solver: WeightSolver::Newton,
            admm: AdmmConfig::default(),
            descent: DescentConfig::default(),
            illuminant: IlluminantGrid::default(),
            init: InitConfig::default(),
            direction: DirectionConfig::default(),
            brightening_direction: None,
            weights: None,
        }
    }
}

impl SolverConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta", self.delta),
            ("admm.rho", self.admm.rho),
            ("admm.eta", self.admm.eta),
            ("admm.t_d", self.admm.t_d),
            ("admm.residual_tol", self.admm.residual_tol),
            ("admm.stationary_tol", self.admm.stationary_tol),
            ("descent.initial_step", self.descent.initial_step),
            ("descent.armijo_c", self.descent.armijo_c),
            ("descent.rel_tol", self.descent.rel_tol),
            ("init.gmm_tol", self.init.gmm_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let counts = [
            ("k", self.k),
            ("max_outer_iter", self.max_outer_iter),
            ("em_inner_iter", self.em_inner_iter),
            ("admm.max_iter", self.admm.max_iter),
            ("descent.max_iter", self.descent.max_iter),
            ("init.gmm_iter", self.init.gmm_iter),
            ("init.kmeans_iter", self.init.kmeans_iter),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.descent.shrink > 0.0 && self.descent.shrink < 1.0) {
            return Err(Error::InvalidConfig("descent.shrink must be in (0, 1)".into()));
        }
        if !(0.0..=100.0).contains(&self.init.lit_percentile) {
            return Err(Error::InvalidConfig("init.lit_percentile must be in [0, 100]".into()));
        }
        if !(self.init.tie_tolerance >= 0.0 && self.init.tie_tolerance.is_finite()) {
            return Err(Error::InvalidConfig("init.tie_tolerance must be nonnegative".into()));
        }
        if !(self.init.composition_threshold >= 0.0 && self.init.composition_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "init.composition_threshold must be in [0, 1)".into(),
            ));
        }
        if let Some(w) = &self.weights {
            w.validate()?;
        }
        self.illuminant.validate()
    }

    /// Configured weights, or the standard ones for `n` pixels, with `w_c`
    /// zeroed when naming guidance is off.
    pub fn weights_for(&self, n_pixels: usize) -> EnergyWeights {
        let mut w = self
            .weights
            .unwrap_or_else(|| EnergyWeights::standard(n_pixels, self.k));
        if !self.color_naming {
            w.w_c = 0.0;
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::make_basis;

    #[test]
    fn default_grid_shape() {
        let g = IlluminantGrid::default();
        assert_eq!(g.chroma_values().len(), 13);
        assert_eq!(g.len(), 1521);
        let levels = g.intensity_values();
        assert!((levels[0] - 0.5).abs() < 1e-12);
        assert!((levels[8] - 2.0).abs() < 1e-12);
        assert!((levels[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neutral_candidate_is_unit_white() {
        let g = IlluminantGrid::default();
        let basis = BrighteningBasis::neutral();
        let c = &g.candidates(&basis)[g.neutral_index()];
        for ch in c.rgb {
            assert!((ch - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn candidates_hit_requested_intensity() {
        let basis = make_basis(crate::math::normalize(&[0.5, 0.6, 0.624]).unwrap()).unwrap();
        let g = IlluminantGrid::default();
        let levels = g.intensity_values();
        for (i, c) in g.candidates(&basis).iter().enumerate().step_by(37) {
            assert!((c.intensity() - levels[i % 9]).abs() < 1e-9);
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(SolverConfig::from_json_str(r#"{"k": 3, "bogus": 1}"#).is_err());
        let c = SolverConfig::from_json_str(r#"{"k": 3, "admm": {"rho": 5}}"#).unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.admm.rho, 5.0);
        assert_eq!(c.admm.eta, 0.001);
        assert!(SolverConfig::from_json_str(r#"{"delta": -1}"#).is_err());
    }
}
