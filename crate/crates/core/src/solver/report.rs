//! Run summary written as `report.json`.

use serde::Serialize;

use crate::energy::{EnergyBreakdown, Illuminant};
use crate::naming::ColorComposition;

use super::{DecomposeOutput, SolverConfig, SolverNote};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IlluminantSummary {
    pub rgb: [f64; 3],
    pub uvb: [f64; 3],
    pub intensity: f64,
    pub grid_index: usize,
}

impl IlluminantSummary {
    fn new(l: &Illuminant, index: usize) -> Self {
        Self {
            rgb: l.rgb,
            uvb: l.uvb,
            intensity: l.intensity(),
            grid_index: index,
        }
    }
}

/// Everything about a finished run that is not a raster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub color_naming: bool,
    pub seed: u64,
    pub annotation: ColorComposition,
    /// Composition of the returned mixture, `ỹ(μ)·π` renormalized.
    pub achieved: ColorComposition,
    pub annotation_distance: f64,
    pub illuminant: IlluminantSummary,
    pub brightening_direction: [f64; 3],
    pub components: usize,
    /// Outer iterations performed (rows in the trace after the first).
    pub iterations: usize,
    /// Iteration whose state was returned.
    pub returned_iteration: usize,
    pub initial_energy: EnergyBreakdown,
    pub final_energy: EnergyBreakdown,
    pub notes: Vec<SolverNote>,
}

impl RunReport {
    pub fn new(out: &DecomposeOutput, config: &SolverConfig) -> Self {
        let d = &out.decomposition;
        let returned = out.state.iteration;
        Self {
            color_naming: config.color_naming,
            seed: config.seed,
            annotation: d.annotation,
            achieved: d.achieved,
            annotation_distance: d.annotation.squared_distance(d.achieved.values()),
            illuminant: IlluminantSummary::new(&d.illuminant, out.state.illuminant_index),
            brightening_direction: d.basis.n,
            components: out.state.gmm.k(),
            iterations: out.state.trace.len().saturating_sub(1),
            returned_iteration: returned,
            initial_energy: out.initial_energy,
            final_energy: out.state.trace[returned].energy,
            notes: out.state.notes.clone(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}
