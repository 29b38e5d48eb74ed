use diffem_core::diff::GradMethod;
use diffem_core::gmm::EmConfig;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::{FlowsError, Result};

/// Configuration of a gradient-descent flow on the point cloud.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Jacobian strategy chained into the transport gradient (AD, AI, OS or
    /// WARM; FD is a test oracle, not a flow method).
    pub grad_method: GradMethod,
    pub gd_steps: usize,
    pub learning_rate: f64,
    /// `r` in (0, 1]: fraction of points refitted per step. Below one, a
    /// fresh uniform subsample is drawn each step; at exactly one the flow
    /// is deterministic.
    pub subsample_ratio: f64,
    pub em: EmConfig,
    pub seed: u64,
    /// Point-cloud snapshots are stored every this many steps (0 disables).
    pub snapshot_every: usize,
    /// Halve the learning rate whenever a step increases the energy and
    /// retry the step. Only meaningful for deterministic flows.
    pub halve_on_increase: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            grad_method: GradMethod::Ad,
            gd_steps: 200,
            learning_rate: 1.0,
            subsample_ratio: 1.0,
            em: EmConfig::default(),
            seed: 0,
            snapshot_every: 0,
            halve_on_increase: false,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subsample_ratio > 0.0 && self.subsample_ratio <= 1.0) {
            return Err(FlowsError::Config(
                "subsample_ratio must lie in (0, 1]".into(),
            ));
        }
        if self.learning_rate < 0.0 {
            return Err(FlowsError::Config("learning_rate must be nonnegative".into()));
        }
        if self.grad_method == GradMethod::Fd {
            return Err(FlowsError::Config(
                "FD is a test oracle, not a flow gradient method".into(),
            ));
        }
        self.em.validate().map_err(FlowsError::Core)
    }
}

/// Per-iteration record of a flow: the energy sequence (one entry per step
/// plus the final state), periodic point-cloud snapshots, per-step weight
/// snapshots, and the wall time in seconds.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub energies: Vec<f64>,
    pub point_snapshots: Vec<Array2<f64>>,
    pub weight_snapshots: Vec<Array1<f64>>,
    pub wall_time: f64,
}

impl FlowTrace {
    pub fn initial_energy(&self) -> f64 {
        *self.energies.first().expect("flow records at least one energy")
    }

    pub fn final_energy(&self) -> f64 {
        *self.energies.last().expect("flow records at least one energy")
    }

    pub fn final_points(&self) -> &Array2<f64> {
        self.point_snapshots
            .last()
            .expect("flow records at least one snapshot")
    }

    /// Energy rows as CSV (step, energy).
    pub fn energies_csv(&self) -> String {
        let mut out = String::from("step,energy\n");
        for (i, e) in self.energies.iter().enumerate() {
            out.push_str(&format!("{i},{e:.17e}\n"));
        }
        out
    }

    /// Weight trajectories as CSV (step, w0, w1, ...).
    pub fn weights_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.weight_snapshots.first() {
            out.push_str("step");
            for k in 0..first.len() {
                out.push_str(&format!(",w{k}"));
            }
            out.push('\n');
        }
        for (i, w) in self.weight_snapshots.iter().enumerate() {
            out.push_str(&format!("{i}"));
            for v in w.iter() {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}
