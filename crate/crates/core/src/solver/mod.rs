//! Alternating minimization of the decomposition energy.
//!
//! After initialization the outer loop repeats: descend on `R^b`, pick the
//! illuminant from the grid, then run EM on the albedo mixture with the
//! mixing weights solved under the naming term. It stops once the total
//! energy fails to drop by `delta` and returns the lowest-energy state seen.

mod admm;
mod config;
mod em;
mod illuminant;
mod rb;
mod report;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{
    estimate_brightening_direction, make_basis, rgb_to_uvb, BrighteningBasis, LinearImage,
    UvbImage,
};
use crate::energy::{
    classify_edges, masked_indices, total_energy, AlbedoGmm, DataForm, EdgeField,
    EnergyBreakdown, EnergyInputs, EnergyWeights, Illuminant, RbObjective, Responsibilities,
};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::naming::{
    auto_compose_image, component_compositions, compose_reflectance, srgb_encode3,
    ColorComposition, ColorTerm, NamingModel,
};

pub use admm::{pi_objective, proportional_pi, update_pi, update_pi_newton, AdmmState, PiUpdate};

/// Newton decrement at which the weight update stops.
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;
pub use config::{
    brightness_for_intensity, AdmmConfig, DescentConfig, DescentMethod, IlluminantGrid, InitConfig,
    WeightSolver,
    SolverConfig,
};
pub use em::{e_step, fit_gmm, kmeans, m_step_mu_sigma, EStep, GmmFit, MStep};
pub use illuminant::{data_energy_at, initial_illuminant, select_illuminant, IlluminantChoice};
pub use rb::{optimize_rb, RbUpdate};
pub use report::{IlluminantSummary, RunReport};

/// One row of the energy trace. `ed` is the mixture negative log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    #[serde(flatten)]
    pub energy: EnergyBreakdown,
}

pub const TRACE_HEADER: &str = "iter,total,Es,Er,Eg,Ed,Ec";

/// CSV with one row per recorded iteration; floats in shortest round-trip form.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        let e = &r.energy;
        let _ = writeln!(s, "{},{:?},{:?},{:?},{:?},{:?},{:?}", r.iter, e.total, e.es, e.er, e.eg, e.ed, e.ec);
    }
    s
}

/// Non-fatal events worth surfacing to the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolverNote {
    DirectionFallback { reason: String },
    ComponentsLowered { requested: usize, used: usize },
    ResponsibilityUnderflow { iteration: usize, rows: usize },
    WeightUpdateKeptInput { iteration: usize },
    ComponentsPruned { iteration: usize, remaining: usize },
}

/// Everything the outer loop carries between iterations.
#[derive(Debug, Clone)]
pub struct DecompositionState {
    /// Illumination-modulated reflectance brightness per pixel (unmasked
    /// entries are unused).
    pub rb: Vec<f64>,
    /// Mixture over body reflectance `R̂ = [I^u − L^u, I^v − L^v, R^b − L^b]`.
    pub gmm: AlbedoGmm,
    pub illuminant: Illuminant,
    pub illuminant_index: usize,
    pub gamma: Responsibilities,
    /// Outer iteration that produced this state (0 = initialization).
    pub iteration: usize,
    pub trace: Vec<TraceRow>,
    pub notes: Vec<SolverNote>,
}

/// Problem data fixed for the whole run.
pub struct Problem<'a> {
    pub image: &'a LinearImage,
    pub uvb: UvbImage,
    pub basis: BrighteningBasis,
    pub edges: EdgeField,
    pub weights: EnergyWeights,
    pub annotation: ColorComposition,
    pub model: &'a NamingModel,
    pub config: &'a SolverConfig,
    pub candidates: Vec<Illuminant>,
    pub pixels: Vec<usize>,
}

impl<'a> Problem<'a> {
    /// Estimates (or takes) the brightening direction and precomputes the
    /// UVB image, edges, weights and illuminant grid.
    pub fn new(
        image: &'a LinearImage,
        annotation: &ColorComposition,
        config: &'a SolverConfig,
        model: &'a NamingModel,
    ) -> Result<(Self, Vec<SolverNote>)> {
        config.validate()?;
        let pixels = image.masked_indices();
        if pixels.is_empty() {
            return Err(Error::EmptyMask("image has no foreground pixels"));
        }
        let mut notes = Vec::new();
        let direction = match config.brightening_direction {
            Some(d) => d,
            None => {
                let est = estimate_brightening_direction(image, &config.direction);
                if let Some(f) = est.fallback {
                    notes.push(SolverNote::DirectionFallback {
                        reason: format!("{f:?}"),
                    });
                }
                est.direction
            }
        };
        let basis = make_basis(direction)?;
        let uvb = rgb_to_uvb(image, &basis);
        let weights = config.weights_for(pixels.len());
        weights.validate()?;
        let edges = classify_edges(&uvb, &weights);
        let candidates = config.illuminant.candidates(&basis);
        Ok((
            Self {
                image,
                uvb,
                basis,
                edges,
                weights,
                annotation: *annotation,
                model,
                config,
                candidates,
                pixels,
            },
            notes,
        ))
    }

    fn inputs(&self) -> EnergyInputs<'_> {
        EnergyInputs {
            uvb: &self.uvb,
            edges: &self.edges,
            weights: &self.weights,
            model: self.model,
            basis: &self.basis,
            annotation: &self.annotation,
        }
    }

    /// `[I^u, I^v, R^b]` per masked pixel.
    pub fn modulated(&self, rb: &[f64]) -> Vec<Vec3> {
        let v = self.uvb.values();
        self.pixels.iter().map(|&p| [v[p][0], v[p][1], rb[p]]).collect()
    }

    /// Body reflectance `R̂` per masked pixel.
    pub fn body(&self, rb: &[f64], l: &Illuminant) -> Vec<Vec3> {
        self.modulated(rb)
            .into_iter()
            .map(|x| [x[0] - l.uvb[0], x[1] - l.uvb[1], x[2] - l.uvb[2]])
            .collect()
    }

    /// Total energy with the mixture likelihood as the data term.
    pub fn energy(&self, state: &DecompositionState) -> Result<EnergyBreakdown> {
        total_energy(
            &state.rb,
            &state.gmm,
            &state.illuminant,
            &state.gamma,
            &self.inputs(),
            DataForm::Hard,
        )
    }

    fn naming_on(&self) -> bool {
        self.config.color_naming && self.weights.w_c > 0.0
    }
}

/// Per-cluster lit brightness: within each chromaticity cluster, the
/// `percentile`-th `I^b`.
pub fn lit_brightness(uvb: &UvbImage, labels: &[usize], clusters: usize, percentile: f64) -> Vec<f64> {
    let pixels = masked_indices(uvb);
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); clusters];
    for (row, &p) in pixels.iter().enumerate() {
        per[labels[row]].push(uvb.values()[p][2]);
    }
    per.iter_mut()
        .map(|v| if v.is_empty() { 0.0 } else { math::percentile(v, percentile) })
        .collect()
}

/// Builds the starting state: chromaticity clusters sized by the annotation,
/// per-cluster lit brightness as `R^b`, a plain EM mixture on the modulated
/// reflectance, and the grid illuminant that best explains the annotation.
pub fn initialize(problem: &Problem<'_>) -> Result<DecompositionState> {
    let cfg = problem.config;
    let n = problem.pixels.len();
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let c = problem.annotation.count_above(cfg.init.composition_threshold);
    if c == 0 {
        return Err(Error::annotation("composition", "no entry above the presence threshold"));
    }
    let v = problem.uvb.values();
    let uv: Vec<[f64; 2]> = problem.pixels.iter().map(|&p| [v[p][0], v[p][1]]).collect();
    let (centers, labels) = kmeans(&uv, c.min(n), cfg.init.kmeans_iter, &mut rng);
    let lit = lit_brightness(&problem.uvb, &labels, centers.len(), cfg.init.lit_percentile);
    let mut rb = vec![0.0; problem.uvb.len()];
    for (row, &p) in problem.pixels.iter().enumerate() {
        rb[p] = lit[labels[row]];
    }

    let k = if cfg.k > n {
        notes.push(SolverNote::ComponentsLowered {
            requested: cfg.k,
            used: n,
        });
        n
    } else {
        cfg.k
    };
    let samples = problem.modulated(&rb);
    let fit = fit_gmm(&samples, k, cfg.init.gmm_iter, cfg.init.gmm_tol, &mut rng)?;
    if fit.gmm.k() < k {
        notes.push(SolverNote::ComponentsLowered {
            requested: k,
            used: fit.gmm.k(),
        });
    }

    let index = if problem.naming_on() {
        initial_illuminant(
            fit.gmm.means(),
            fit.gmm.weights(),
            &problem.candidates,
            problem.model,
            &problem.basis,
            &problem.annotation,
            cfg.init.tie_tolerance,
        )
        .0
    } else {
        cfg.illuminant.neutral_index()
    };
    let illuminant = problem.candidates[index];
    let gmm = fit.gmm.shifted(&illuminant.uvb);
    let e = e_step(&problem.body(&rb, &illuminant), &gmm);
    if e.underflow_rows > 0 {
        notes.push(SolverNote::ResponsibilityUnderflow {
            iteration: 0,
            rows: e.underflow_rows,
        });
    }
    let mut state = DecompositionState {
        rb,
        gmm,
        illuminant,
        illuminant_index: index,
        gamma: e.gamma,
        iteration: 0,
        trace: Vec::new(),
        notes,
    };
    let energy = problem.energy(&state)?;
    state.trace.push(TraceRow { iter: 0, energy });
    Ok(state)
}

/// EM on `(μ, Σ, π)` with `R^b` and `L` fixed: up to `em_inner_iter`
/// rounds, stopping early once the log-likelihood changes by less than the
/// initial fit's relative tolerance.
fn update_mixture(problem: &Problem<'_>, state: &mut DecompositionState) -> Result<()> {
    let cfg = problem.config;
    let samples = problem.body(&state.rb, &state.illuminant);
    let mut gmm = state.gmm.clone();
    let mut gamma = state.gamma.clone();
    let mut prev_ll = None;
    for _ in 0..cfg.em_inner_iter {
        let e = e_step(&samples, &gmm);
        if e.underflow_rows > 0 {
            state.notes.push(SolverNote::ResponsibilityUnderflow {
                iteration: state.iteration,
                rows: e.underflow_rows,
            });
        }
        let m = m_step_mu_sigma(&samples, &e.gamma, problem.weights.w_g)?;
        let pruned = m.kept.len() < gmm.k();
        if pruned {
            state.notes.push(SolverNote::ComponentsPruned {
                iteration: state.iteration,
                remaining: m.kept.len(),
            });
        }
        let pi_prev: Vec<f64> = m.kept.iter().map(|&j| gmm.weights()[j]).collect();
        let s: f64 = pi_prev.iter().sum();
        let pi_prev: Vec<f64> = if s > 0.0 {
            pi_prev.iter().map(|p| p / s).collect()
        } else {
            vec![1.0 / m.kept.len() as f64; m.kept.len()]
        };
        let candidate = AlbedoGmm::new(m.means.clone(), m.variances.clone(), pi_prev.clone())?;
        let pi = if problem.naming_on() {
            let a = component_compositions(problem.model, &candidate, &problem.basis);
            let up = match cfg.weight_solver {
                WeightSolver::Admm => update_pi(
                    &m.populations,
                    &a,
                    &problem.annotation,
                    problem.weights.w_c,
                    &pi_prev,
                    &cfg.admm,
                )?,
                WeightSolver::Newton => update_pi_newton(
                    &m.populations,
                    &a,
                    &problem.annotation,
                    problem.weights.w_c,
                    &pi_prev,
                    NEWTON_TOL,
                    NEWTON_MAX_ITER,
                )?,
            };
            if up.kept_input {
                state.notes.push(SolverNote::WeightUpdateKeptInput {
                    iteration: state.iteration,
                });
            }
            up.pi
        } else {
            proportional_pi(&m.populations)?
        };
        gmm = AlbedoGmm::new(m.means, m.variances, pi)?;
        gamma = e.gamma.retain_columns(&m.kept);
        let settled = prev_ll.is_some_and(|p: f64| {
            (e.log_likelihood - p).abs() <= cfg.init.gmm_tol * e.log_likelihood.abs()
        });
        prev_ll = Some(e.log_likelihood);
        if settled && !pruned {
            break;
        }
    }
    let e = e_step(&samples, &gmm);
    state.gmm = gmm;
    state.gamma = if e.underflow_rows == 0 { e.gamma } else { gamma };
    Ok(())
}

/// Progress report passed to observers after every outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Progress {
    pub iteration: usize,
    pub energy: EnergyBreakdown,
    pub components: usize,
}

/// Runs the outer loop from `state`, calling `observer` after every
/// iteration. Returns the lowest-energy state seen with the full trace.
pub fn run(
    problem: &Problem<'_>,
    mut state: DecompositionState,
    observer: &mut dyn FnMut(&Progress),
) -> Result<DecompositionState> {
    let cfg = problem.config;
    let mut best = state.clone();
    let mut prev = state.trace.last().map(|r| r.energy.total).unwrap_or(f64::INFINITY);
    for it in 1..=cfg.max_outer_iter {
        state.iteration = it;

        let obj = RbObjective::new(
            &problem.uvb,
            &problem.edges,
            &state.gmm,
            &state.illuminant,
            &state.gamma,
            &problem.weights,
        )?;
        state.rb = optimize_rb(&obj, &state.rb, &cfg.descent)?.rb;

        let choice = select_illuminant(
            &problem.modulated(&state.rb),
            &state.gmm,
            &problem.candidates,
            Some(state.illuminant_index),
        );
        state.illuminant = choice.illuminant;
        state.illuminant_index = choice.index;

        update_mixture(problem, &mut state)?;

        let energy = problem.energy(&state)?;
        state.trace.push(TraceRow { iter: it, energy });
        observer(&Progress {
            iteration: it,
            energy,
            components: state.gmm.k(),
        });
        if energy.total < best.trace.last().map(|r| r.energy.total).unwrap_or(f64::INFINITY) {
            best = state.clone();
        }
        let drop = prev - energy.total;
        prev = energy.total;
        if drop < cfg.delta {
            break;
        }
    }
    best.trace = state.trace;
    best.notes = state.notes;
    Ok(best)
}

/// Output rasters and summaries of a finished run.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub reflectance: LinearImage,
    pub shading: LinearImage,
    /// Channel mean of `shading`.
    pub shading_gray: Vec<f64>,
    pub illuminant: Illuminant,
    pub basis: BrighteningBasis,
    /// Hard component assignment per pixel (`None` outside the mask).
    pub assignment: Vec<Option<usize>>,
    /// Most likely color term of the reflectance per pixel.
    pub names: Vec<Option<ColorTerm>>,
    pub annotation: ColorComposition,
    /// Composition of the final mixture, `ỹ(μ)·π`.
    pub achieved: ColorComposition,
}

/// Maps the state back to RGB: `R̃ = exp([I^u, I^v, R^b]·Hᵀ)`, `R = R̃ ⊘ L`,
/// `S = I ⊘ R̃`, so `I = R · L · S` on every masked pixel.
pub fn render_outputs(
    state: &DecompositionState,
    image: &LinearImage,
    uvb: &UvbImage,
    basis: &BrighteningBasis,
    model: &NamingModel,
    annotation: &ColorComposition,
) -> Result<Decomposition> {
    let len = image.len();
    let mut refl = vec![[0.0; 3]; len];
    let mut shade = vec![[0.0; 3]; len];
    let mut gray = vec![0.0; len];
    let mut names = vec![None; len];
    let mut assignment = vec![None; len];
    let labels = state.gamma.argmax();
    let l = state.illuminant.rgb;
    let v = uvb.values();
    for (row, p) in masked_indices(uvb).into_iter().enumerate() {
        let modulated = basis.uvb_to_rgb(&[v[p][0], v[p][1], state.rb[p]]);
        let r = [modulated[0] / l[0], modulated[1] / l[1], modulated[2] / l[2]];
        let i = image.pixels()[p];
        let s = [i[0] / modulated[0], i[1] / modulated[1], i[2] / modulated[2]];
        if r.iter().chain(&s).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite output at pixel {p}")));
        }
        refl[p] = r;
        shade[p] = s;
        gray[p] = (s[0] + s[1] + s[2]) / 3.0;
        names[p] = Some(ColorTerm::ALL[crate::naming::argmax(
            &model.probabilities(&srgb_encode3(&r)),
        )]);
        assignment[p] = labels.get(row).copied();
    }
    let mask = image.mask().to_vec();
    Ok(Decomposition {
        reflectance: LinearImage::new(image.width(), image.height(), refl, mask.clone())?,
        shading: LinearImage::new(image.width(), image.height(), shade, mask)?,
        shading_gray: gray,
        illuminant: state.illuminant,
        basis: *basis,
        assignment,
        names,
        annotation: *annotation,
        achieved: compose_reflectance(model, &state.gmm, basis),
    })
}

/// Result of [`decompose`].
#[derive(Debug, Clone)]
pub struct DecomposeOutput {
    pub decomposition: Decomposition,
    pub state: DecompositionState,
    /// Energy right after initialization.
    pub initial_energy: EnergyBreakdown,
}

/// Full pipeline: initialize, iterate, render.
///
/// With `config.color_naming == false` the annotation is only used for the
/// trace; the cluster count comes from naming the image itself.
pub fn decompose(
    image: &LinearImage,
    annotation: &ColorComposition,
    config: &SolverConfig,
    model: &NamingModel,
    observer: &mut dyn FnMut(&Progress),
) -> Result<DecomposeOutput> {
    let guide = if config.color_naming {
        *annotation
    } else {
        auto_compose_image(model, image)?
    };
    let (problem, notes) = Problem::new(image, &guide, config, model)?;
    let mut state = initialize(&problem)?;
    state.notes.splice(0..0, notes);
    let initial_energy = state.trace[0].energy;
    let state = run(&problem, state, observer)?;
    let decomposition = render_outputs(&state, image, &problem.uvb, &problem.basis, model, annotation)?;
    Ok(DecomposeOutput {
        decomposition,
        state,
        initial_energy,
    })
}
