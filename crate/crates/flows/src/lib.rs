//! Experiment drivers on top of the differentiable-EM core: energy flows of
//! point clouds under the mixture-Wasserstein loss (deterministic,
//! stochastic, warm-start), barycentre and projected-barycentre flows,
//! colour transfer (balanced and unbalanced), multi-scale texture
//! synthesis, the gradient-method comparison and sample-complexity sweeps,
//! and the pathological-case fixtures.

mod color;
mod fixtures;
mod flow;
mod image;
mod sweeps;
mod trace;

pub use color::{colour_transfer, ColourTransferConfig, ColourTransferResult};
pub use fixtures::{
    e2_energy, e3_energy, fixture_e3_landscape, fixture_n2_landscape,
    fixture_vanishing_gradient, E3Report, FixtureSummary, N2Report, VanishingGradientReport,
};
pub use flow::{
    eps_r_heuristic, pack_loss_grad, prefit, run_barycentre_flow, run_flow,
    run_projected_barycentre, run_weight_pathology, FlowTarget, PathologyReport,
};
pub use image::{
    gaussian_field_init, nn_patch_projection, texture_synthesis, Image, TextureConfig,
    TextureResult,
};
pub use sweeps::{
    default_gmm_bank, run_gradient_comparison, run_sample_complexity, sample_complexity_pair,
    spearman, GradCompareConfig, GradCompareReport, GradCompareRow, SampleComplexityConfig,
    SampleComplexityReport, SampleComplexityRow, SweepParam,
};
pub use trace::{FlowConfig, FlowTrace};

use diffem_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowsError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FlowsError>;

impl FlowsError {
    /// Whether the error is a numerical failure (as opposed to bad input);
    /// drives the process exit-code taxonomy.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FlowsError::Core(
                CoreError::DegenerateCovariance { .. }
                    | CoreError::SingularSystem { .. }
                    | CoreError::NotConverged { .. }
            )
        )
    }
}
