//! Checkpoint container: everything needed to resume training exactly or
//! to evaluate a trained model.
//!
//! A checkpoint bundles the model parameters, optimizer state, SGLD
//! replay buffer, normalizer, and both RNG streams, keyed by the config
//! hash. The JSON encoding prints floats in shortest-round-trip form, so
//! save/load is bit-exact and resumed training is byte-identical to an
//! uninterrupted run.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sam::OptimizerState;
use crate::sgld::ReplayBuffer;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Hash of the config that produced this run; readers warn on
    /// mismatch.
    pub config_hash: String,
    /// Epochs completed so far.
    pub epoch: usize,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub buffer: ReplayBuffer,
    pub normalizer: Normalizer,
    /// Batch-shuffling stream, advanced once per epoch.
    pub shuffle_rng: ChaCha8Rng,
    /// SGLD stream, advanced by the sampler.
    pub sgld_rng: ChaCha8Rng,
}

impl Checkpoint {
    /// Serializes to JSON. Non-finite parameters are refused: they cannot
    /// round-trip through JSON and indicate a diverged run that should
    /// have aborted already.
    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.params.is_finite() {
            return Err(Error::Contract(
                "refusing to checkpoint non-finite parameters".into(),
            ));
        }
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Data(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| {
            Error::Data(format!("unreadable checkpoint {}: {e}", path.display()))
        })?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        Ok(checkpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_mixture, Split};
    use crate::sgld::{sample_from_energy, SgldConfig};
    use rand::SeedableRng;

    fn sample_checkpoint() -> Checkpoint {
        let params = ModelParams::init_mlp(&[2, 8, 3], 7).unwrap();
        let train = gen_gaussian_mixture(3, 50, 2, 4.0, 1.0, 3, Split::IdTrain).unwrap();
        let normalizer = Normalizer::fit(&train).unwrap();
        let mut buffer = ReplayBuffer::new(2, 64).unwrap();
        let cfg = SgldConfig {
            step_size: 0.1,
            n_steps: 2,
            reinit_prob: 1.0,
            init_low: vec![-1.0, -1.0],
            init_high: vec![1.0, 1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        sample_from_energy(&params, &mut buffer, 16, &cfg, &mut rng).unwrap();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: "0011223344556677".into(),
            epoch: 3,
            params,
            optimizer: OptimizerState::new(2 * 8 + 8 + 8 * 3 + 3),
            buffer,
            normalizer,
            shuffle_rng: ChaCha8Rng::seed_from_u64(1),
            sgld_rng: rng,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let checkpoint = sample_checkpoint();
        checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, checkpoint);
        for (a, b) in back
            .params
            .flatten()
            .iter()
            .zip(checkpoint.params.flatten())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn restored_rng_continues_the_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let checkpoint = sample_checkpoint();
        checkpoint.save(&path).unwrap();

        let mut live = checkpoint.sgld_rng.clone();
        let mut restored = Checkpoint::load(&path).unwrap().sgld_rng;
        for _ in 0..32 {
            assert_eq!(
                rand::Rng::random::<u64>(&mut live),
                rand::Rng::random::<u64>(&mut restored)
            );
        }
    }

    #[test]
    fn non_finite_params_are_refused() {
        let mut checkpoint = sample_checkpoint();
        let mut flat = checkpoint.params.flatten();
        flat[0] = f64::NAN;
        checkpoint.params.assign_from_flat(&flat).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(checkpoint.save(&dir.path().join("bad.json")).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut checkpoint = sample_checkpoint();
        checkpoint.version = 99;
        checkpoint.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Data(_))));
    }
}
