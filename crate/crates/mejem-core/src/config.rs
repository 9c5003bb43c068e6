//! Experiment configuration: one TOML file, fully defaulted, hashed for
//! provenance.
//!
//! Every knob of a run lives here; the CLI's `init-config` dumps the
//! defaults so a config file always shows the complete search space.
//! Defaults follow the reference training recipe (λ₁ = 1, λ₂ = 0.05,
//! margins at -10, SGLD ε = 0.1 with 15 steps over a 10k buffer, SAM
//! ρ = 0.05, weight decay 5e-4, momentum 0.9, warmup 1000 steps, decay
//! epochs 35/70/100) with a desk-scale synthetic benchmark sized to run
//! in minutes.
//!
//! [`ExperimentConfig::config_hash`] identifies the experiment, not its
//! location: the output directory is excluded so reruns in different
//! directories produce byte-identical reports.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{IdEnergy, LossWeights, MarginConfig, ObjectiveFlags};
use crate::sam::SamConfig;

/// Top-level experiment description. All fields have defaults, so a
/// partial TOML file is valid; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    /// Where artifacts land. Not part of the config hash.
    pub output_dir: String,
    pub model: ModelSection,
    pub data: DataSection,
    pub loss: LossSection,
    pub sgld: SgldSection,
    pub sam: SamSection,
    pub schedule: ScheduleSection,
    pub flags: FlagSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: "runs/default".into(),
            model: ModelSection::default(),
            data: DataSection::default(),
            loss: LossSection::default(),
            sgld: SgldSection::default(),
            sam: SamSection::default(),
            schedule: ScheduleSection::default(),
            flags: FlagSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Hidden widths only; input and output sizes come from the data.
    pub hidden_layers: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_layers: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub synthetic: SyntheticSection,
    pub csv: CsvSection,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            synthetic: SyntheticSection::default(),
            csv: CsvSection::default(),
        }
    }
}

/// The synthetic benchmark: an ID Gaussian mixture on a circle, auxiliary
/// outliers in a box minus an exclusion disk, and a distant noisy ring as
/// evaluation OOD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub dim: usize,
    pub n_train_per_class: usize,
    pub n_val_per_class: usize,
    pub n_test_per_class: usize,
    pub mean_radius: f64,
    pub std: f64,
    pub aux_n: usize,
    pub aux_box_halfwidth: f64,
    pub aux_exclusion_radius: f64,
    pub ood_n: usize,
    pub ood_radius: f64,
    pub ood_noise_std: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            num_classes: 3,
            dim: 2,
            n_train_per_class: 1000,
            n_val_per_class: 200,
            n_test_per_class: 200,
            mean_radius: 4.0,
            std: 1.0,
            aux_n: 3000,
            aux_box_halfwidth: 12.0,
            aux_exclusion_radius: 7.0,
            ood_n: 1000,
            ood_radius: 8.0,
            ood_noise_std: 0.5,
        }
    }
}

/// Pre-extracted feature vectors from CSV files. `id_val` may be omitted,
/// in which case the last 20% of `id_train` rows are carved off for
/// threshold calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSection {
    pub num_classes: usize,
    pub id_train: String,
    pub id_val: String,
    pub id_test: String,
    pub aux_ood: String,
    pub ood_test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// λ₁, the generative (contrastive-divergence) weight.
    pub lambda_gen: f64,
    /// λ₂, the margin weight.
    pub lambda_margin: f64,
    pub margin_in: f64,
    pub margin_out: f64,
    /// Which ID energy the margin penalizes: "marginal" or "joint".
    pub id_energy: IdEnergy,
}

impl Default for LossSection {
    fn default() -> Self {
        let weights = LossWeights::default();
        let margin = MarginConfig::default();
        LossSection {
            lambda_gen: weights.lambda_gen,
            lambda_margin: weights.lambda_margin,
            margin_in: margin.m_in,
            margin_out: margin.m_out,
            id_energy: margin.id_energy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgldSection {
    pub step_size: f64,
    pub n_steps: usize,
    pub buffer_capacity: usize,
    pub reinit_prob: f64,
}

impl Default for SgldSection {
    fn default() -> Self {
        SgldSection {
            step_size: 0.1,
            n_steps: 15,
            buffer_capacity: 10_000,
            reinit_prob: 0.05,
        }
    }
}

/// SAM hyperparameters. On/off lives in [`FlagSection::sam`] so the
/// ablation switch has a single source of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamSection {
    pub rho: f64,
    pub weight_decay: f64,
}

impl Default for SamSection {
    fn default() -> Self {
        SamSection {
            rho: 0.05,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub warmup_steps: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Extra checkpoint every this many epochs; 0 checkpoints only at the
    /// end.
    pub checkpoint_interval: usize,
}

impl Default for ScheduleSection {
    /// 120 epochs runs the warmup and the whole 35/70/100 decay ladder at
    /// desk scale (24 steps per epoch on the default synthetic data).
    fn default() -> Self {
        ScheduleSection {
            epochs: 120,
            batch_size: 128,
            base_lr: 0.1,
            momentum: 0.9,
            warmup_steps: 1000,
            decay_epochs: vec![35, 70, 100],
            decay_factor: 0.2,
            checkpoint_interval: 0,
        }
    }
}

/// Component switches for the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagSection {
    pub generative: bool,
    pub margin: bool,
    pub sam: bool,
    /// Whether auxiliary outlier data is loaded at all. Required by the
    /// margin flag.
    pub aux_data: bool,
}

impl Default for FlagSection {
    fn default() -> Self {
        FlagSection {
            generative: true,
            margin: true,
            sam: true,
            aux_data: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// ID true-positive rate retained by the open-set threshold.
    pub target_tpr: f64,
    pub histogram_bins: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            target_tpr: 0.95,
            histogram_bins: 50,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML string.
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Checks cross-field invariants beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        if self.flags.margin && !self.flags.aux_data {
            return Err(Error::Config(
                "the margin loss trains on auxiliary outliers: flags.margin requires \
                 flags.aux_data"
                    .into(),
            ));
        }
        if self.loss.lambda_gen < 0.0 || self.loss.lambda_margin < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got λ₁ = {}, λ₂ = {}",
                self.loss.lambda_gen, self.loss.lambda_margin
            )));
        }
        if !(self.loss.margin_in.is_finite() && self.loss.margin_out.is_finite()) {
            return Err(Error::Config("margins must be finite".into()));
        }
        if !(self.sgld.step_size > 0.0) {
            return Err(Error::Config(format!(
                "SGLD step size must be positive, got {}",
                self.sgld.step_size
            )));
        }
        if self.sgld.buffer_capacity == 0 {
            return Err(Error::Config("SGLD buffer capacity must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sgld.reinit_prob) {
            return Err(Error::Config(format!(
                "SGLD reinit probability must lie in [0, 1], got {}",
                self.sgld.reinit_prob
            )));
        }
        if self.schedule.epochs == 0 || self.schedule.batch_size == 0 {
            return Err(Error::Config(format!(
                "schedule needs epochs ≥ 1 and batch_size ≥ 1, got {} and {}",
                self.schedule.epochs, self.schedule.batch_size
            )));
        }
        if self.data.source == DataSource::Csv {
            let csv = &self.data.csv;
            if csv.num_classes < 2 {
                return Err(Error::Config(format!(
                    "CSV data needs num_classes ≥ 2, got {}",
                    csv.num_classes
                )));
            }
            for (field, value) in [
                ("id_train", &csv.id_train),
                ("id_test", &csv.id_test),
                ("ood_test", &csv.ood_test),
            ] {
                if value.is_empty() {
                    return Err(Error::Config(format!(
                        "CSV data source requires data.csv.{field}"
                    )));
                }
            }
            if self.flags.aux_data && csv.aux_ood.is_empty() {
                return Err(Error::Config(
                    "flags.aux_data requires data.csv.aux_ood".into(),
                ));
            }
        }
        if !(self.eval.target_tpr > 0.0 && self.eval.target_tpr <= 1.0) {
            return Err(Error::Config(format!(
                "target TPR must lie in (0, 1], got {}",
                self.eval.target_tpr
            )));
        }
        if self.eval.histogram_bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        // Delegate the remaining optimizer checks.
        self.sam_config().validate()?;
        Ok(())
    }

    /// First 16 hex characters of the SHA-256 of the canonical TOML form,
    /// with the output directory blanked.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = String::new();
        let digest = Sha256::digest(canonical.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_classes(&self) -> usize {
        match self.data.source {
            DataSource::Synthetic => self.data.synthetic.num_classes,
            DataSource::Csv => self.data.csv.num_classes,
        }
    }

    /// Full layer plan once the input dimension is known.
    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.model.hidden_layers.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&self.model.hidden_layers);
        sizes.push(self.num_classes());
        sizes
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_gen: self.loss.lambda_gen,
            lambda_margin: self.loss.lambda_margin,
        }
    }

    pub fn margin_config(&self) -> MarginConfig {
        MarginConfig {
            m_in: self.loss.margin_in,
            m_out: self.loss.margin_out,
            id_energy: self.loss.id_energy,
        }
    }

    pub fn objective_flags(&self) -> ObjectiveFlags {
        ObjectiveFlags {
            generative: self.flags.generative,
            margin: self.flags.margin,
        }
    }

    pub fn sam_config(&self) -> SamConfig {
        SamConfig {
            enabled: self.flags.sam,
            rho: self.sam.rho,
            weight_decay: self.sam.weight_decay,
            base_lr: self.schedule.base_lr,
            momentum: self.schedule.momentum,
            warmup_steps: self.schedule.warmup_steps,
            decay_epochs: self.schedule.decay_epochs.clone(),
            decay_factor: self.schedule.decay_factor,
        }
    }
}
