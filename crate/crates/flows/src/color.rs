//! Colour transfer: the source image's pixel cloud flows towards the
//! target image's colour mixture under warm-start EM and plain fixed-step
//! gradient descent (every pixel is treated equally; no per-parameter
//! adaptivity). The unbalanced mode swaps the balanced transport loss for
//! UMW2, which tolerates corrupted target colours.

use crate::flow::pack_loss_grad;
use crate::image::Image;
use crate::{FlowsError, Result};
use diffem_core::gmm::{m_step, Dataset, EmConfig, GmmParams};
use diffem_core::ot::{mw2_grad_for_plan, mw2_grad_params, umw2_squared, UnbalancedConfig};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColourTransferConfig {
    pub k: usize,
    pub gd_steps: usize,
    /// Per-pixel displacement fraction per step; the raw gradient-descent
    /// rate is `step_size * n / 2`. The rate is halved until the first step
    /// descends, then kept fixed.
    pub step_size: f64,
    pub em: EmConfig,
    /// Switch to the unbalanced loss; defaults follow the corrupted-target
    /// experiment: `lambda0 = 10` (source), `lambda1 = 0.1` (target).
    pub unbalanced: Option<UnbalancedConfig>,
    pub seed: u64,
}

impl Default for ColourTransferConfig {
    fn default() -> Self {
        Self {
            k: 10,
            gd_steps: 150,
            step_size: 0.4,
            em: EmConfig {
                iterations: 80,
                fix_weights: true,
                cov_regulariser: 1e-3,
                ..EmConfig::default()
            },
            unbalanced: None,
            seed: 0,
        }
    }
}

impl ColourTransferConfig {
    /// Unbalanced defaults from the corrupted-target setting.
    pub fn unbalanced_defaults() -> UnbalancedConfig {
        UnbalancedConfig {
            lambda0: 10.0,
            lambda1: 0.1,
            ..UnbalancedConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ColourTransferResult {
    pub image: Image,
    pub energies: Vec<f64>,
}

/// Moves source pixels so their fitted colour mixture matches the target
/// image's. Output pixels are clamped to `[0, 1]`.
pub fn colour_transfer(
    source: &Image,
    target: &Image,
    cfg: &ColourTransferConfig,
) -> Result<ColourTransferResult> {
    if cfg.k == 0 {
        return Err(FlowsError::Config("need at least one component".into()));
    }
    let n = source.width * source.height;
    let mut x = source.as_cloud();

    let target_cloud = Dataset::new_unchecked(target.as_cloud());
    let nu = crate::flow::prefit(&target_cloud, cfg.k, &cfg.em, cfg.target_seed())?;
    let mut theta =
        crate::flow::prefit(&Dataset::new_unchecked(x.clone()), cfg.k, &cfg.em, cfg.seed)?;

    let eval = |theta_next: &GmmParams| -> Result<(f64, Array1<f64>)> {
        match &cfg.unbalanced {
            None => {
                let grad = mw2_grad_params(theta_next, &nu).map_err(FlowsError::Core)?;
                let g = pack_loss_grad(cfg.k, 3, &grad.d_means, &grad.d_covs);
                Ok((grad.value, g))
            }
            Some(ucfg) => {
                let (value, plan) =
                    umw2_squared(theta_next, &nu, ucfg).map_err(FlowsError::Core)?;
                let grad =
                    mw2_grad_for_plan(theta_next, &nu, &plan).map_err(FlowsError::Core)?;
                let g = pack_loss_grad(cfg.k, 3, &grad.d_means, &grad.d_covs);
                Ok((value, g))
            }
        }
    };

    let mut lr = cfg.step_size * n as f64 * 0.5;
    let mut energies = Vec::with_capacity(cfg.gd_steps + 1);
    let mut calibrated = false;

    let mut step = 0usize;
    while step <= cfg.gd_steps {
        let x_data = Dataset::new_unchecked(x.clone());
        let theta_next = m_step(&theta, &x_data, &cfg.em).map_err(FlowsError::Core)?;
        let (energy, g) = eval(&theta_next)?;

        if step == cfg.gd_steps {
            energies.push(energy);
            break;
        }

        let grad = diffem_core::diff::df_dx_vjp(&theta, &x_data, &cfg.em, &g);

        if !calibrated && step == 0 {
            // Halve until the very first step descends, then freeze the
            // rate (fixed-step descent from here on).
            let mut attempts = 0;
            loop {
                let mut trial = x.clone();
                trial.scaled_add(-lr, &grad);
                let trial_data = Dataset::new_unchecked(trial.clone());
                let theta_trial = m_step(&theta, &trial_data, &cfg.em)
                    .map_err(FlowsError::Core)?;
                let (e_trial, _) = eval(&theta_trial)?;
                if e_trial <= energy || attempts >= 30 {
                    break;
                }
                lr *= 0.5;
                attempts += 1;
            }
            calibrated = true;
        }

        energies.push(energy);
        x.scaled_add(-lr, &grad);
        theta = theta_next;
        step += 1;
    }

    let mut image = Image::from_cloud(source.width, source.height, &x)?;
    image.clamp_unit();
    Ok(ColourTransferResult { image, energies })
}

impl ColourTransferConfig {
    fn target_seed(&self) -> u64 {
        self.seed.wrapping_add(7777)
    }
}
