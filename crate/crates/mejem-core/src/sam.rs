//! Sharpness-Aware Minimization on top of SGD with momentum, L2
//! regularization, linear warmup, and step decay.
//!
//! Each step evaluates the loss twice: once at θ to obtain the ascent
//! direction, once at `θ + ρ·g/‖g‖` to obtain the update gradient. The
//! update itself is plain SGD with momentum on that perturbed gradient
//! plus the `2βθ` weight-decay gradient. With `enabled = false` the
//! second evaluation is skipped and the step reduces to SGD bitwise. The
//! loss closure must be deterministic for a fixed parameter vector (the
//! caller freezes the batch and the SGLD negatives across the two
//! evaluations).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossTerms;
use crate::model::ModelParams;
use crate::numeric;

/// Optimizer settings. `rho` is the SAM perturbation radius,
/// `weight_decay` the β of the `β‖θ‖²` penalty (applied as a `2βθ`
/// gradient term rather than through the loss).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamConfig {
    pub enabled: bool,
    pub rho: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub momentum: f64,
    pub warmup_steps: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for SamConfig {
    fn default() -> SamConfig {
        SamConfig {
            enabled: true,
            rho: 0.05,
            weight_decay: 5e-4,
            base_lr: 0.1,
            momentum: 0.9,
            warmup_steps: 1000,
            decay_epochs: vec![35, 70, 100],
            decay_factor: 0.2,
        }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "rho and weight decay must be non-negative, got {} and {}",
                self.rho, self.weight_decay
            )));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!(
                "base learning rate must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup must last at least one step".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "decay epochs must be strictly increasing, got {:?}",
                self.decay_epochs
            )));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::Config(format!(
                "decay factor must be positive, got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }
}

/// Momentum buffer plus step/epoch counters; serialized with checkpoints
/// for exact resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub momentum: Vec<f64>,
    pub step: usize,
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> OptimizerState {
        OptimizerState {
            momentum: vec![0.0; num_params],
            step: 0,
            epoch: 0,
        }
    }
}

/// One loss evaluation: scalar loss, flat parameter gradient, diagnostics.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub terms: LossTerms,
}

/// Learning rate at a global step: linear warmup to `base_lr` over
/// `warmup_steps`, then `base_lr · decay_factor^d` where `d` counts decay
/// epochs at or below the current epoch.
pub fn lr_at(step: usize, epoch: usize, cfg: &SamConfig) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.base_lr * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let decays = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.base_lr * cfg.decay_factor.powi(decays as i32)
}

/// The ascent perturbation `ε = ρ·g/‖g‖₂` over the flat parameter vector;
/// zero when `ρ = 0` or the gradient is numerically zero (`‖g‖ < 1e-12`).
pub fn sam_perturbation(grads: &[f64], rho: f64) -> Vec<f64> {
    if rho == 0.0 {
        return vec![0.0; grads.len()];
    }
    let norm = numeric::l2_norm(grads);
    if norm < 1e-12 {
        return vec![0.0; grads.len()];
    }
    grads.iter().map(|&g| rho * g / norm).collect()
}

/// One optimizer step. `eval` must recompute loss and gradients for the
/// parameters it is handed; it runs once (SAM disabled) or twice.
///
/// Returns the diagnostics of the unperturbed evaluation. A non-finite
/// loss at either evaluation or non-finite parameters after the update
/// raise a divergence error.
pub fn sam_step<F>(
    params: &mut ModelParams,
    mut eval: F,
    state: &mut OptimizerState,
    cfg: &SamConfig,
) -> Result<LossTerms>
where
    F: FnMut(&ModelParams) -> Result<StepEval>,
{
    let n = params.num_params();
    if state.momentum.len() != n {
        return Err(Error::Contract(format!(
            "momentum buffer has {} entries, model has {n} parameters",
            state.momentum.len()
        )));
    }

    let first = eval(params)?;
    check_eval(&first, n, state, "base")?;

    let theta = params.flatten();
    let update_grads = if cfg.enabled {
        let eps = sam_perturbation(&first.grads, cfg.rho);
        let perturbed: Vec<f64> = theta.iter().zip(&eps).map(|(t, e)| t + e).collect();
        params.assign_from_flat(&perturbed)?;
        let second = eval(params);
        params.assign_from_flat(&theta)?;
        let second = second?;
        check_eval(&second, n, state, "perturbed")?;
        second.grads
    } else {
        first.grads.clone()
    };

    let lr = lr_at(state.step, state.epoch, cfg);
    let mut new_theta = theta;
    for i in 0..n {
        let g = update_grads[i] + 2.0 * cfg.weight_decay * new_theta[i];
        state.momentum[i] = cfg.momentum * state.momentum[i] + g;
        new_theta[i] -= lr * state.momentum[i];
    }
    params.assign_from_flat(&new_theta)?;
    if !params.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite parameters after update at step {} (epoch {})",
            state.step, state.epoch
        )));
    }

    state.step += 1;
    Ok(first.terms)
}

fn check_eval(eval: &StepEval, n: usize, state: &OptimizerState, stage: &str) -> Result<()> {
    if eval.grads.len() != n {
        return Err(Error::Contract(format!(
            "{stage} evaluation returned {} gradients for {n} parameters",
            eval.grads.len()
        )));
    }
    if !eval.loss.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss {} at {stage} evaluation, step {} (epoch {}); \
             energy collapse; lower the SGLD step size or the generative weight",
            eval.loss, state.step, state.epoch
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::assert_close;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dummy_terms() -> LossTerms {
        LossTerms {
            total: 0.0,
            cross_entropy: 0.0,
            generative: f64::NAN,
            margin: f64::NAN,
            mean_id_energy: 0.0,
            mean_aux_energy: f64::NAN,
            mean_neg_energy: f64::NAN,
        }
    }

    /// A one-parameter model: weight w of the [1,1] layer plus one bias.
    fn scalar_model(w: f64) -> ModelParams {
        let mut params = ModelParams::init_mlp(&[1, 1], 0).unwrap();
        params.assign_from_flat(&[w, 0.0]).unwrap();
        params
    }

    /// Loss `w²/2` on the scalar model; the bias is unused.
    fn quadratic_eval(p: &ModelParams) -> Result<StepEval> {
        let w = p.flatten()[0];
        Ok(StepEval {
            loss: w * w / 2.0,
            grads: vec![w, 0.0],
            terms: dummy_terms(),
        })
    }

    #[test]
    fn lr_schedule_matches_hand_values() {
        let cfg = SamConfig::default();
        assert_close(lr_at(0, 0, &cfg), 1e-4, 1e-12);
        assert_close(lr_at(999, 0, &cfg), 0.1, 1e-12);
        assert_close(lr_at(1000, 0, &cfg), 0.1, 1e-12);
        assert_close(lr_at(5000, 35, &cfg), 0.02, 1e-12);
        assert_close(lr_at(5000, 70, &cfg), 0.004, 1e-12);
        assert_close(lr_at(5000, 100, &cfg), 0.0008, 1e-12);

        for step in 1..1000 {
            assert!(lr_at(step, 0, &cfg) >= lr_at(step - 1, 0, &cfg));
        }
        for epoch in 1..120 {
            assert!(lr_at(2000, epoch, &cfg) <= lr_at(2000, epoch - 1, &cfg));
        }
    }

    #[test]
    fn perturbation_facts() {
        assert_eq!(sam_perturbation(&[3.0, 4.0], 0.0), vec![0.0, 0.0]);
        assert_eq!(sam_perturbation(&[0.0, 0.0], 0.5), vec![0.0, 0.0]);
        let eps = sam_perturbation(&[3.0, 4.0], 1.0);
        assert_close(eps[0], 0.6, 1e-12);
        assert_close(eps[1], 0.8, 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let rho = rng.random::<f64>() + 0.01;
            let eps = sam_perturbation(&g, rho);
            assert_close(numeric::l2_norm(&eps), rho, 1e-9);
        }
    }

    #[test]
    fn two_step_rule_matches_hand_example() {
        // L = w²/2 at w = 1: base grad 1, perturbed grad 1.1, w' = 0.89.
        let mut params = scalar_model(1.0);
        let mut state = OptimizerState::new(2);
        let cfg = SamConfig {
            enabled: true,
            rho: 0.1,
            weight_decay: 0.0,
            base_lr: 0.1,
            momentum: 0.0,
            warmup_steps: 1,
            decay_epochs: vec![],
            decay_factor: 0.2,
        };
        sam_step(&mut params, quadratic_eval, &mut state, &cfg).unwrap();
        assert_close(params.flatten()[0], 0.89, 1e-12);
    }

    #[test]
    fn weight_decay_adds_its_gradient_term() {
        let mut params = scalar_model(1.0);
        let mut state = OptimizerState::new(2);
        let cfg = SamConfig {
            enabled: true,
            rho: 0.1,
            weight_decay: 0.01,
            base_lr: 0.1,
            momentum: 0.0,
            warmup_steps: 1,
            decay_epochs: vec![],
            decay_factor: 0.2,
        };
        sam_step(&mut params, quadratic_eval, &mut state, &cfg).unwrap();
        assert_close(params.flatten()[0], 0.888, 1e-12);
    }

    #[test]
    fn disabled_sam_is_bitwise_sgd_with_momentum() {
        let mut params = ModelParams::init_mlp(&[2, 2], 4).unwrap();
        let n = params.num_params();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let grads: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();

        let cfg = SamConfig {
            enabled: false,
            rho: 0.05,
            weight_decay: 5e-4,
            base_lr: 0.1,
            momentum: 0.9,
            warmup_steps: 10,
            decay_epochs: vec![3],
            decay_factor: 0.2,
        };

        // Reference: plain SGD with momentum and weight decay.
        let mut ref_theta = params.flatten();
        let mut ref_momentum = vec![0.0; n];
        for (step, g) in grads.iter().enumerate() {
            let epoch = step / 20;
            let lr = lr_at(step, epoch, &cfg);
            for i in 0..n {
                let total = g[i] + 2.0 * cfg.weight_decay * ref_theta[i];
                ref_momentum[i] = cfg.momentum * ref_momentum[i] + total;
                ref_theta[i] -= lr * ref_momentum[i];
            }
        }

        let mut state = OptimizerState::new(n);
        for (step, g) in grads.iter().enumerate() {
            state.epoch = step / 20;
            let g = g.clone();
            sam_step(
                &mut params,
                move |_| {
                    Ok(StepEval {
                        loss: 0.0,
                        grads: g.clone(),
                        terms: dummy_terms(),
                    })
                },
                &mut state,
                &cfg,
            )
            .unwrap();
        }

        for (a, b) in params.flatten().iter().zip(&ref_theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zeroed_sam_reduces_to_plain_sgd_bitwise() {
        // ρ = 0, momentum = 0, β = 0 with SAM enabled: the perturbed
        // evaluation happens at θ itself, so updates equal plain SGD.
        let cfg_sam = SamConfig {
            enabled: true,
            rho: 0.0,
            weight_decay: 0.0,
            base_lr: 0.05,
            momentum: 0.0,
            warmup_steps: 1,
            decay_epochs: vec![],
            decay_factor: 0.2,
        };
        let eval = |p: &ModelParams| {
            let flat = p.flatten();
            Ok(StepEval {
                loss: flat.iter().map(|v| v * v).sum(),
                grads: flat.iter().map(|v| 2.0 * v).collect(),
                terms: dummy_terms(),
            })
        };

        let mut a = ModelParams::init_mlp(&[2, 3, 2], 6).unwrap();
        let mut state_a = OptimizerState::new(a.num_params());
        let mut b = a.clone();
        let mut theta_b = b.flatten();
        for step in 0..100 {
            sam_step(&mut a, eval, &mut state_a, &cfg_sam).unwrap();
            let lr = lr_at(step, 0, &cfg_sam);
            for v in theta_b.iter_mut() {
                *v -= lr * 2.0 * *v;
            }
        }
        b.assign_from_flat(&theta_b).unwrap();
        for (x, y) in a.flatten().iter().zip(&b.flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn non_finite_loss_raises_divergence() {
        let mut params = scalar_model(1.0);
        let mut state = OptimizerState::new(2);
        let cfg = SamConfig::default();
        let err = sam_step(
            &mut params,
            |_| {
                Ok(StepEval {
                    loss: f64::NAN,
                    grads: vec![0.0, 0.0],
                    terms: dummy_terms(),
                })
            },
            &mut state,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = SamConfig::default();
        cfg.validate().unwrap();
        cfg.rho = -0.1;
        assert!(cfg.validate().is_err());
        cfg.rho = 0.05;
        cfg.decay_epochs = vec![35, 35];
        assert!(cfg.validate().is_err());
    }
}
