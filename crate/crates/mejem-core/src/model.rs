//! The MLP classifier `f_θ` and its energy-based readings.
//!
//! The classifier maps feature vectors to K logits through affine layers
//! with relu activations (final layer affine). Reinterpreted as an
//! energy-based model, the logits define per-class joint energies
//! `E(x, y) = -f_θ(x)[y]` and a marginal energy
//! `E(x) = -logsumexp(f_θ(x))`, so one network serves both as a
//! discriminative classifier and as an unnormalized density model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Weights and biases of the MLP, with the layer plan and the seed they
/// were initialized from.
///
/// Layer `l` is an affine map from `layer_sizes[l]` to `layer_sizes[l + 1]`
/// with weight shape `[in, out]`; every layer but the last is followed by
/// relu. The final size is the class count K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    init_seed: u64,
}

impl ModelParams {
    /// He-style uniform initialization: weights drawn from
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)` (variance `2 / fan_in`),
    /// biases zero. Deterministic for a fixed seed.
    pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<ModelParams> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "need at least input and output layer sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data)?);
            biases.push(Tensor::vector(vec![0.0; fan_out]));
        }
        Ok(ModelParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            init_seed: seed,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Total parameter count across all weights and biases.
    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>()
            + self.biases.iter().map(Tensor::len).sum::<usize>()
    }

    /// Concatenates all parameters into one vector, layer by layer with the
    /// weight before the bias. The optimizer works on this flat view.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b.data());
        }
        flat
    }

    /// Writes a flat parameter vector (as produced by [`Self::flatten`])
    /// back into the layer tensors.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Contract(format!(
                "flat parameter vector has {} values, model needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for dst in [w, b] {
                let len = dst.len();
                dst.data_mut().copy_from_slice(&flat[offset..offset + len]);
                offset += len;
            }
        }
        Ok(())
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Tensor::is_finite) && self.biases.iter().all(Tensor::is_finite)
    }

    /// Puts the parameters on a tape. With `trainable` they become
    /// differentiable leaves; otherwise constants, which makes backward
    /// passes skip all weight-gradient work (the SGLD fast path).
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> TapedModel {
        let put = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        TapedModel {
            weight_ids: self.weights.iter().map(|w| put(tape, w)).collect(),
            bias_ids: self.biases.iter().map(|b| put(tape, b)).collect(),
            input_dim: self.input_dim(),
        }
    }

    /// Convenience forward pass without gradient bookkeeping.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let staged = self.register(&mut tape, false);
        let x_id = tape.constant(x.clone());
        let out = staged.forward(&mut tape, x_id)?;
        Ok(tape.value(out).clone())
    }
}

/// Handles to a model's parameters on a specific tape.
#[derive(Debug, Clone)]
pub struct TapedModel {
    pub weight_ids: Vec<TensorId>,
    pub bias_ids: Vec<TensorId>,
    input_dim: usize,
}

impl TapedModel {
    /// Forward pass `x [n×d] -> logits [n×K]`, differentiable with respect
    /// to both parameters and input.
    pub fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let (_, d) = tape.value(x).dims2()?;
        if d != self.input_dim {
            return Err(Error::Dim {
                op: "forward",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.input_dim],
            });
        }
        let mut h = x;
        let last = self.weight_ids.len() - 1;
        for (l, (&w, &b)) in self.weight_ids.iter().zip(&self.bias_ids).enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_row_bias(z, b)?;
            if l < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Marginal energy `E(x) = -logsumexp(f_θ(x))` per row.
    pub fn marginal_energy(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let logits = self.forward(tape, x)?;
        let lse = tape.logsumexp_last(logits)?;
        Ok(tape.scale(lse, -1.0))
    }

    /// Gathers gradients of all parameters from the tape into the flat
    /// layout of [`ModelParams::flatten`]. Missing gradients read as zero.
    pub fn collect_grads(&self, tape: &Tape) -> Vec<f64> {
        let mut flat = Vec::new();
        for (&w, &b) in self.weight_ids.iter().zip(&self.bias_ids) {
            for id in [w, b] {
                match tape.grad(id) {
                    Some(g) => flat.extend_from_slice(g),
                    None => flat.extend(std::iter::repeat(0.0).take(tape.value(id).len())),
                }
            }
        }
        flat
    }
}

/// Energy views of a logit matrix: the marginal energy per row and, when
/// labels are supplied, the joint energy of each row's labeled class.
#[derive(Debug, Clone)]
pub struct EnergyReadout {
    pub logits: Tensor,
    pub marginal_energy: Vec<f64>,
    pub joint_energy: Option<Vec<f64>>,
}

impl EnergyReadout {
    pub fn from_logits(logits: Tensor, labels: Option<&[usize]>) -> Result<EnergyReadout> {
        let (n, k) = logits.dims2()?;
        let marginal = marginal_energy(&logits)?;
        let joint = match labels {
            None => None,
            Some(labels) => {
                if labels.len() != n {
                    return Err(Error::Contract(format!(
                        "{n} rows but {} labels",
                        labels.len()
                    )));
                }
                if let Some(bad) = labels.iter().position(|&y| y >= k) {
                    return Err(Error::Data(format!(
                        "label {} out of range 0..{k} at row {bad}",
                        labels[bad]
                    )));
                }
                Some(
                    labels
                        .iter()
                        .enumerate()
                        .map(|(i, &y)| -logits.row(i)[y])
                        .collect(),
                )
            }
        };
        Ok(EnergyReadout {
            logits,
            marginal_energy: marginal,
            joint_energy: joint,
        })
    }
}

/// Marginal energy `-logsumexp` per row of a logit matrix.
pub fn marginal_energy(logits: &Tensor) -> Result<Vec<f64>> {
    let (n, k) = logits.dims2()?;
    if k == 0 {
        return Err(Error::Contract("logit matrix has zero classes".into()));
    }
    Ok((0..n).map(|i| -numeric::logsumexp(logits.row(i))).collect())
}

/// Row-wise softmax of a logit matrix.
pub fn class_posteriors(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = logits.dims2()?;
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        numeric::softmax_into(&mut out[i * k..(i + 1) * k], logits.row(i));
    }
    Tensor::matrix(n, k, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{assert_close, rel_err};

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = ModelParams::init_mlp(&[2, 8, 3], 7).unwrap();
        let b = ModelParams::init_mlp(&[2, 8, 3], 7).unwrap();
        assert_eq!(a, b);
        for bias in &a.biases {
            assert!(bias.data().iter().all(|&v| v == 0.0));
        }
        let c = ModelParams::init_mlp(&[2, 8, 3], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_layer_plans() {
        assert!(matches!(
            ModelParams::init_mlp(&[4], 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ModelParams::init_mlp(&[4, 0, 3], 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_weight_variance_tracks_two_over_fan_in() {
        let params = ModelParams::init_mlp(&[1000, 10], 3).unwrap();
        let w = params.weights[0].data();
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 1000.0;
        assert!(
            (var - target).abs() < 0.2 * target,
            "variance {var} vs target {target}"
        );
    }

    #[test]
    fn forward_matches_hand_computation() {
        // Single layer [2, 3]: logits for x = [1, 1] are the column sums.
        let mut params = ModelParams::init_mlp(&[2, 3], 0).unwrap();
        params.weights[0] = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let logits = params.logits(&x).unwrap();
        assert_eq!(logits.data(), &[5.0, 7.0, 9.0]);

        let zero = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(params.logits(&zero).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_feature_dimension() {
        let params = ModelParams::init_mlp(&[3, 4, 2], 0).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(params.logits(&x), Err(Error::Dim { .. })));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let params = ModelParams::init_mlp(&[3, 6, 4], 11).unwrap();
        let x0 = vec![0.3, -0.7, 1.1, 0.2, 0.9, -0.4];
        // Scalar probe: sum of all logits.
        let eval = |data: &[f64]| {
            let x = Tensor::matrix(2, 3, data.to_vec()).unwrap();
            params.logits(&x).unwrap().data().iter().sum::<f64>()
        };

        let mut tape = Tape::new();
        let staged = params.register(&mut tape, false);
        let x = tape.leaf(Tensor::matrix(2, 3, x0.clone()).unwrap());
        let logits = staged.forward(&mut tape, x).unwrap();
        let loss = tape.sum(logits);
        tape.backward(loss).unwrap();
        let analytic = tape.grad(x).unwrap().to_vec();

        let h = 1e-5;
        for t in 0..x0.len() {
            let mut plus = x0.clone();
            let mut minus = x0.clone();
            plus[t] += h;
            minus[t] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(rel_err(analytic[t], fd) < 1e-4);
        }
    }

    #[test]
    fn flat_round_trip_preserves_parameters() {
        let params = ModelParams::init_mlp(&[2, 5, 3], 9).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), params.num_params());
        let mut other = ModelParams::init_mlp(&[2, 5, 3], 10).unwrap();
        other.assign_from_flat(&flat).unwrap();
        assert_eq!(other.weights, params.weights);
        assert_eq!(other.biases, params.biases);
        assert!(other.assign_from_flat(&flat[1..]).is_err());
    }

    #[test]
    fn marginal_energy_known_values_and_shift() {
        let logits = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        let e = marginal_energy(&logits).unwrap();
        assert_close(e[0], -(3f64.ln()), 1e-12);
        assert_close(e[1], -3.407_605_964_444_381, 1e-12);

        let shifted = Tensor::matrix(2, 3, logits.data().iter().map(|v| v + 5.0).collect()).unwrap();
        let e2 = marginal_energy(&shifted).unwrap();
        for (a, b) in e.iter().zip(&e2) {
            assert_close(b - a, -5.0, 1e-9);
        }
    }

    #[test]
    fn posteriors_match_softmax_facts() {
        let logits = Tensor::matrix(2, 3, vec![1.0, 1.0, 1.0, 10.0, 0.0, 0.0]).unwrap();
        let p = class_posteriors(&logits).unwrap();
        for v in p.row(0) {
            assert_close(*v, 1.0 / 3.0, 1e-12);
        }
        assert_close(p.row(1)[0], 0.999_909_208_384_341_8, 1e-9);

        let shifted = Tensor::matrix(2, 3, logits.data().iter().map(|v| v - 2.5).collect()).unwrap();
        let p2 = class_posteriors(&shifted).unwrap();
        for (a, b) in p.data().iter().zip(p2.data()) {
            assert_close(*a, *b, 1e-12);
        }
        for i in 0..2 {
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn log_posterior_equals_energy_difference() {
        let params = ModelParams::init_mlp(&[2, 6, 4], 21).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.8]).unwrap();
        let logits = params.logits(&x).unwrap();
        let posts = class_posteriors(&logits).unwrap();
        let labels: Vec<usize> = vec![0, 3, 2];
        let readout = EnergyReadout::from_logits(logits, Some(&labels)).unwrap();
        let joint = readout.joint_energy.as_ref().unwrap();
        for i in 0..3 {
            let log_post = posts.row(i)[labels[i]].ln();
            let diff = readout.marginal_energy[i] - joint[i];
            assert_close(log_post, diff, 1e-9);
            // Marginal energy lower-bounds every joint energy.
            assert!(readout.marginal_energy[i] <= joint[i] + 1e-12);
        }
    }

    #[test]
    fn energy_readout_validates_labels() {
        let logits = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let err = EnergyReadout::from_logits(logits, Some(&[0, 3])).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
