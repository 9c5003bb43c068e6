//! Stochastic Gradient Langevin Dynamics over the model's energy landscape.
//!
//! Negative samples `x⁻` approximating the model density are drawn by
//! iterating `x_{k+1} = x_k - (ε²/2) ∇E(x_k) + ε z_k` with fresh standard
//! normal noise per step. Chains persist across training steps in a
//! [`ReplayBuffer`] (persistent contrastive divergence); with a small
//! probability they restart from a uniform box over the normalized feature
//! range, which keeps the pool slowly refreshing.
//!
//! Gradients flow only into the chain state, never into the model: the
//! parameters are staged as tape constants. A divergence guard restarts
//! any chain whose energy magnitude explodes instead of aborting training.
//!
//! RNG draw order is part of the determinism contract and is documented on
//! [`sample_from_energy`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Energy magnitude beyond which a chain is declared divergent and
/// reinitialized.
pub const DIVERGENCE_ENERGY: f64 = 1e6;

/// A batch energy function `x [n×d] -> E [n]`, differentiable w.r.t. `x`.
///
/// [`ModelParams`] implements this with its marginal energy; tests use
/// hand-built closed-form energies.
pub trait EnergyFn {
    fn batch_energy(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId>;
}

impl EnergyFn for ModelParams {
    fn batch_energy(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let staged = self.register(tape, false);
        staged.marginal_energy(tape, x)
    }
}

/// Sampler settings plus the uniform initialization box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    /// Step size ε of the Langevin update.
    pub step_size: f64,
    /// Number of update steps K per sampling call.
    pub n_steps: usize,
    /// Probability that a chain restarts from the box instead of the buffer.
    pub reinit_prob: f64,
    /// Per-dimension lower bounds of the initialization box.
    pub init_low: Vec<f64>,
    /// Per-dimension upper bounds of the initialization box.
    pub init_high: Vec<f64>,
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::Config(format!(
                "SGLD step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(0.0..=1.0).contains(&self.reinit_prob) {
            return Err(Error::Config(format!(
                "reinit probability must be in [0, 1], got {}",
                self.reinit_prob
            )));
        }
        if self.init_low.len() != self.init_high.len() || self.init_low.is_empty() {
            return Err(Error::Config(format!(
                "initialization box has mismatched bounds: {} low, {} high",
                self.init_low.len(),
                self.init_high.len()
            )));
        }
        for (d, (lo, hi)) in self.init_low.iter().zip(&self.init_high).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "initialization box dimension {d} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.init_low.len()
    }
}

/// Pool of persisted SGLD chain states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    dim: usize,
    capacity: usize,
    entries: Vec<Vec<f64>>,
}

impl ReplayBuffer {
    pub fn new(dim: usize, capacity: usize) -> Result<ReplayBuffer> {
        if dim == 0 || capacity == 0 {
            return Err(Error::Config(format!(
                "replay buffer needs positive dimension and capacity, got dim {dim}, capacity {capacity}"
            )));
        }
        Ok(ReplayBuffer {
            dim,
            capacity,
            entries: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i]
    }
}

/// Where each chain in a sampling call started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStart {
    /// Fresh draw from the initialization box.
    Fresh,
    /// Continued from this buffer slot.
    Slot(usize),
}

/// Samples plus per-chain provenance.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    /// Final chain states, `[n × d]`.
    pub samples: Tensor,
    /// Start of each chain, in chain order.
    pub starts: Vec<ChainStart>,
    /// Number of divergence-guard restarts during this call.
    pub restarts: usize,
}

/// One Langevin update: `x - (ε²/2)·grad_E + ε·noise`, elementwise.
pub fn sgld_step(x: &Tensor, grad_e: &Tensor, step_size: f64, noise: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_e.shape() {
        return Err(Error::Dim {
            op: "sgld_step",
            lhs: x.shape().to_vec(),
            rhs: grad_e.shape().to_vec(),
        });
    }
    if x.shape() != noise.shape() {
        return Err(Error::Dim {
            op: "sgld_step",
            lhs: x.shape().to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    if !(step_size >= 0.0) {
        return Err(Error::Contract(format!(
            "SGLD step size must be non-negative, got {step_size}"
        )));
    }
    let half_sq = step_size * step_size / 2.0;
    let data = x
        .data()
        .iter()
        .zip(grad_e.data())
        .zip(noise.data())
        .map(|((&x, &g), &z)| x - half_sq * g + step_size * z)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Runs `n` chains for `cfg.n_steps` Langevin steps against an arbitrary
/// energy and writes the final states back into the buffer.
///
/// RNG draw order, which the determinism and resume tests rely on:
/// 1. Per chain, in order: one uniform for the restart decision (skipped
///    when the buffer is empty), then either `d` uniforms for a fresh box
///    draw or one integer for the buffer slot.
/// 2. Per step: `n × d` standard normals (row-major), then `d` uniforms for
///    each chain the divergence guard restarts, in chain order.
/// 3. Per fresh chain written back once the buffer is full: one integer for
///    the replacement slot, in chain order.
///
/// Chains that continued from a slot overwrite that slot; fresh chains
/// append until capacity and then replace a uniformly drawn slot. A final
/// finiteness check re-draws any non-finite state from the box so the
/// buffer never stores non-finite entries.
pub fn sample_from_energy<E: EnergyFn, R: Rng>(
    energy: &E,
    buffer: &mut ReplayBuffer,
    n: usize,
    cfg: &SgldConfig,
    rng: &mut R,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Config("cannot sample zero chains".into()));
    }
    let d = buffer.dim;
    if cfg.dim() != d {
        return Err(Error::Config(format!(
            "initialization box has dimension {}, buffer has {d}",
            cfg.dim()
        )));
    }

    let mut starts = Vec::with_capacity(n);
    let mut state = vec![0.0; n * d];
    for c in 0..n {
        let fresh = buffer.is_empty() || rng.random::<f64>() < cfg.reinit_prob;
        if fresh {
            draw_box(&mut state[c * d..(c + 1) * d], cfg, rng);
            starts.push(ChainStart::Fresh);
        } else {
            let slot = rng.random_range(0..buffer.len());
            state[c * d..(c + 1) * d].copy_from_slice(&buffer.entries[slot]);
            starts.push(ChainStart::Slot(slot));
        }
    }

    let mut restarts = 0;
    for _ in 0..cfg.n_steps {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(n, d, state.clone())?);
        let e = energy.batch_energy(&mut tape, x)?;
        let total = tape.sum(e);
        tape.backward(total)?;
        let energies = tape.value(e).data().to_vec();
        let grad = tape.grad(x).expect("chain state requires gradients").to_vec();

        let noise: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let half_sq = cfg.step_size * cfg.step_size / 2.0;
        for c in 0..n {
            let row = &mut state[c * d..(c + 1) * d];
            let diverged = !energies[c].is_finite()
                || energies[c].abs() > DIVERGENCE_ENERGY
                || row.iter().any(|v| !v.is_finite());
            if diverged {
                draw_box(row, cfg, rng);
                restarts += 1;
                continue;
            }
            for j in 0..d {
                let idx = c * d + j;
                row[j] = row[j] - half_sq * grad[idx] + cfg.step_size * noise[idx];
            }
        }
    }

    for c in 0..n {
        let row = &mut state[c * d..(c + 1) * d];
        if row.iter().any(|v| !v.is_finite()) {
            draw_box(row, cfg, rng);
            restarts += 1;
        }
    }

    for (c, start) in starts.iter().enumerate() {
        let row = state[c * d..(c + 1) * d].to_vec();
        match start {
            ChainStart::Slot(slot) => buffer.entries[*slot] = row,
            ChainStart::Fresh => {
                if buffer.entries.len() < buffer.capacity {
                    buffer.entries.push(row);
                } else {
                    let slot = rng.random_range(0..buffer.capacity);
                    buffer.entries[slot] = row;
                }
            }
        }
    }

    Ok(SampleOutcome {
        samples: Tensor::matrix(n, d, state)?,
        starts,
        restarts,
    })
}

/// Draws `n` negative samples from the model's marginal energy.
pub fn sample_negatives<R: Rng>(
    params: &ModelParams,
    buffer: &mut ReplayBuffer,
    n: usize,
    cfg: &SgldConfig,
    rng: &mut R,
) -> Result<Tensor> {
    if buffer.dim != params.input_dim() {
        return Err(Error::Config(format!(
            "replay buffer dimension {} does not match model input dimension {}",
            buffer.dim,
            params.input_dim()
        )));
    }
    Ok(sample_from_energy(params, buffer, n, cfg, rng)?.samples)
}

fn draw_box<R: Rng>(row: &mut [f64], cfg: &SgldConfig, rng: &mut R) {
    for (j, v) in row.iter_mut().enumerate() {
        let u: f64 = rng.random();
        *v = cfg.init_low[j] + u * (cfg.init_high[j] - cfg.init_low[j]);
    }
}
