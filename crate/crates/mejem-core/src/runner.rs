//! Config-driven experiment pipelines: data assembly, the full training
//! loop, evaluation with artifact emission, the ablation grid, and report
//! rendering.
//!
//! Every random stream is a `ChaCha8Rng` seeded by [`derive_seed`] from
//! the master seed and a fixed tag, so (config, seed) determines every
//! emitted artifact byte. Per epoch the shuffle stream draws the ID
//! permutation first, then the auxiliary permutation when auxiliary data
//! is loaded; the SGLD stream is advanced only by the sampler, and only
//! when the generative term is active (flag set and λ₁ > 0). Inactive
//! terms therefore consume no randomness, which makes λ = 0 and
//! flag-off runs bitwise identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::config::{DataSource, ExperimentConfig, FlagSection};
use crate::data::{
    gen_aux_outliers, gen_gaussian_mixture, gen_ring_ood, load_feature_csv, write_feature_csv,
    LabeledBatch, Normalizer, Split,
};
use crate::error::{Error, Result};
use crate::losses::{LossTerms, ObjectiveInputs};
use crate::metrics::{closed_set_precision, histogram, Histogram, HistogramSpec, OodMetrics};
use crate::model::ModelParams;
use crate::sam::{sam_step, OptimizerState, StepEval};
use crate::scoring::{calibrate_threshold, predict_open_set, score_samples, ScoreKind};
use crate::sgld::{sample_negatives, ReplayBuffer, SgldConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Deterministic sub-seed: first eight little-endian bytes of
/// `SHA-256(master_le ‖ tag)`.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Canonical artifact locations under one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> RunPaths {
        RunPaths { dir: dir.into() }
    }

    pub fn for_config(config: &ExperimentConfig) -> RunPaths {
        RunPaths::new(&config.output_dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn config_hash(&self) -> PathBuf {
        self.dir.join("config_hash.txt")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_epoch_{epoch}.json"))
    }

    pub fn training_log(&self) -> PathBuf {
        self.dir.join("training_log.csv")
    }

    pub fn scores(&self, kind: ScoreKind) -> PathBuf {
        self.dir.join(format!("scores_{}.csv", kind.name()))
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }

    pub fn histogram_csv(&self, kind: ScoreKind) -> PathBuf {
        self.dir.join(format!("histogram_{}.csv", kind.name()))
    }

    pub fn histogram_svg(&self, kind: ScoreKind) -> PathBuf {
        self.dir.join(format!("histogram_{}.svg", kind.name()))
    }

    pub fn ablation_csv(&self) -> PathBuf {
        self.dir.join("ablation.csv")
    }

    pub fn ablation_json(&self) -> PathBuf {
        self.dir.join("ablation.json")
    }

    pub fn data_csv(&self, split: Split) -> PathBuf {
        self.dir.join(format!("{}.csv", split.name()))
    }
}

/// Human-readable model label derived from the component flags; lands in
/// the `model` field of every metrics record.
pub fn model_name(flags: &FlagSection) -> String {
    let base = match (flags.generative, flags.margin) {
        (true, true) => "mejem",
        (true, false) => "jem",
        (false, true) => "margin_only",
        (false, false) => "classifier",
    };
    if flags.sam {
        base.to_string()
    } else {
        format!("{base}_nosam")
    }
}

// ── Data assembly ──

/// All splits of one experiment, raw (unnormalized).
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub id_train: LabeledBatch,
    pub id_val: LabeledBatch,
    pub id_test: LabeledBatch,
    /// Present iff `flags.aux_data`.
    pub aux: Option<LabeledBatch>,
    pub ood: LabeledBatch,
}

impl DataBundle {
    pub fn dim(&self) -> usize {
        self.id_train.dim()
    }
}

/// Builds the experiment's data: synthetic splits from per-split derived
/// seeds, or CSV files (with the validation split carved from the last
/// 20% of training rows when no file is given).
pub fn load_data(config: &ExperimentConfig) -> Result<DataBundle> {
    let k = config.num_classes();
    let bundle = match config.data.source {
        DataSource::Synthetic => {
            let s = &config.data.synthetic;
            let gen_id = |split: Split, n_per_class: usize| {
                gen_gaussian_mixture(
                    s.num_classes,
                    n_per_class,
                    s.dim,
                    s.mean_radius,
                    s.std,
                    derive_seed(config.seed, split.name()),
                    split,
                )
            };
            let aux = if config.flags.aux_data {
                Some(gen_aux_outliers(
                    s.aux_n,
                    s.dim,
                    s.aux_box_halfwidth,
                    s.aux_exclusion_radius,
                    derive_seed(config.seed, Split::AuxOod.name()),
                )?)
            } else {
                None
            };
            DataBundle {
                id_train: gen_id(Split::IdTrain, s.n_train_per_class)?,
                id_val: gen_id(Split::IdVal, s.n_val_per_class)?,
                id_test: gen_id(Split::IdTest, s.n_test_per_class)?,
                aux,
                ood: gen_ring_ood(
                    s.ood_n,
                    s.dim,
                    s.ood_radius,
                    s.ood_noise_std,
                    derive_seed(config.seed, Split::OodTest.name()),
                )?,
            }
        }
        DataSource::Csv => {
            let c = &config.data.csv;
            let id_train_full = load_feature_csv(Path::new(&c.id_train), k, Split::IdTrain)?;
            let (id_train, id_val) = if c.id_val.is_empty() {
                carve_validation(id_train_full)?
            } else {
                (
                    id_train_full,
                    load_feature_csv(Path::new(&c.id_val), k, Split::IdVal)?,
                )
            };
            let aux = if config.flags.aux_data {
                Some(load_feature_csv(Path::new(&c.aux_ood), k, Split::AuxOod)?)
            } else {
                None
            };
            DataBundle {
                id_train,
                id_val,
                id_test: load_feature_csv(Path::new(&c.id_test), k, Split::IdTest)?,
                aux,
                ood: load_feature_csv(Path::new(&c.ood_test), k, Split::OodTest)?,
            }
        }
    };

    let d = bundle.dim();
    for batch in [
        Some(&bundle.id_val),
        Some(&bundle.id_test),
        bundle.aux.as_ref(),
        Some(&bundle.ood),
    ]
    .into_iter()
    .flatten()
    {
        if batch.dim() != d {
            return Err(Error::Data(format!(
                "split {} has dimension {}, expected {d}",
                batch.split.name(),
                batch.dim()
            )));
        }
        batch.validate(k)?;
    }
    bundle.id_train.validate(k)?;
    Ok(bundle)
}

fn carve_validation(train: LabeledBatch) -> Result<(LabeledBatch, LabeledBatch)> {
    let n = train.len();
    let n_val = n / 5;
    if n_val == 0 {
        return Err(Error::Data(format!(
            "id_train has {n} rows, too few to carve a 20% validation split"
        )));
    }
    let head: Vec<usize> = (0..n - n_val).collect();
    let tail: Vec<usize> = (n - n_val..n).collect();
    let new_train = train.select(&head)?;
    let val_part = train.select(&tail)?;
    let id_val = LabeledBatch::new(val_part.features, val_part.labels, Split::IdVal)?;
    Ok((new_train, id_val))
}

/// `gen-data`: writes every synthetic split as a feature CSV into the
/// output directory. Refused for CSV-sourced configs.
pub fn generate_data_files(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    if config.data.source != DataSource::Synthetic {
        return Err(Error::Config(
            "gen-data writes the synthetic benchmark; this config reads CSV files".into(),
        ));
    }
    let paths = RunPaths::for_config(config);
    std::fs::create_dir_all(paths.dir())?;
    let bundle = load_data(config)?;
    let mut written = Vec::new();
    let mut emit = |batch: &LabeledBatch| -> Result<()> {
        let path = paths.data_csv(batch.split);
        write_feature_csv(&path, batch)?;
        written.push(path);
        Ok(())
    };
    emit(&bundle.id_train)?;
    emit(&bundle.id_val)?;
    emit(&bundle.id_test)?;
    if let Some(aux) = &bundle.aux {
        emit(aux)?;
    }
    emit(&bundle.ood)?;
    Ok(written)
}

// ── Training ──

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    /// Diagnostics of the last completed step.
    pub final_terms: Option<LossTerms>,
    pub steps: usize,
    pub wall_clock_secs: f64,
}

/// Runs the full training loop and writes `config.toml`,
/// `config_hash.txt`, `training_log.csv`, and `checkpoint.json` into the
/// output directory. With `resume_from`, training continues a saved
/// checkpoint; the result is byte-identical to an uninterrupted run.
///
/// On divergence the partial training log is still written before the
/// error propagates.
pub fn train(config: &ExperimentConfig, resume_from: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let paths = RunPaths::for_config(config);
    std::fs::create_dir_all(paths.dir())?;
    let hash = config.config_hash();
    config.save(&paths.config())?;
    std::fs::write(paths.config_hash(), format!("{hash}\n"))?;

    let bundle = load_data(config)?;
    let normalizer = Normalizer::fit(&bundle.id_train)?;
    let id_train = normalizer.apply(&bundle.id_train)?;
    let aux = bundle.aux.as_ref().map(|a| normalizer.apply(a)).transpose()?;
    let dim = id_train.dim();

    let weights = config.loss_weights();
    let margin_cfg = config.margin_config();
    let obj_flags = config.objective_flags();
    let sam_cfg = config.sam_config();
    let gen_active = obj_flags.generative && weights.lambda_gen > 0.0;
    let margin_active = obj_flags.margin && weights.lambda_margin > 0.0;
    if margin_active && aux.is_none() {
        return Err(Error::Config(
            "margin loss requires auxiliary outlier data".into(),
        ));
    }

    let (init_low, init_high) = id_train.feature_range()?;
    let sgld_cfg = SgldConfig {
        step_size: config.sgld.step_size,
        n_steps: config.sgld.n_steps,
        reinit_prob: config.sgld.reinit_prob,
        init_low,
        init_high,
    };

    let (mut params, mut optimizer, mut buffer, mut shuffle_rng, mut sgld_rng, start_epoch) =
        match resume_from {
            Some(path) => {
                let ckpt = Checkpoint::load(path)?;
                if ckpt.config_hash != hash {
                    return Err(Error::Config(format!(
                        "checkpoint {} was trained under config {}, this config is {hash}",
                        path.display(),
                        ckpt.config_hash
                    )));
                }
                if ckpt.epoch >= config.schedule.epochs {
                    return Err(Error::Config(format!(
                        "checkpoint already covers {} epochs, schedule has {}",
                        ckpt.epoch, config.schedule.epochs
                    )));
                }
                (
                    ckpt.params,
                    ckpt.optimizer,
                    ckpt.buffer,
                    ckpt.shuffle_rng,
                    ckpt.sgld_rng,
                    ckpt.epoch,
                )
            }
            None => {
                let layer_sizes = config.layer_sizes(dim);
                let params =
                    ModelParams::init_mlp(&layer_sizes, derive_seed(config.seed, "model"))?;
                let optimizer = OptimizerState::new(params.num_params());
                let buffer = ReplayBuffer::new(dim, config.sgld.buffer_capacity)?;
                (
                    params,
                    optimizer,
                    buffer,
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle")),
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "sgld")),
                    0,
                )
            }
        };

    let mut log = String::from(
        "step,epoch,total,cross_entropy,generative,margin,mean_id_energy,mean_aux_energy,mean_neg_energy\n",
    );
    let mut final_terms = None;
    let mut steps_run = 0;

    let loop_result = (|| -> Result<()> {
        for epoch in start_epoch..config.schedule.epochs {
            optimizer.epoch = epoch;
            let mut id_order: Vec<usize> = (0..id_train.len()).collect();
            id_order.shuffle(&mut shuffle_rng);
            let mut aux_order: Vec<usize> = Vec::new();
            if let Some(aux) = &aux {
                aux_order = (0..aux.len()).collect();
                aux_order.shuffle(&mut shuffle_rng);
            }

            let mut aux_cursor = 0usize;
            for chunk in id_order.chunks(config.schedule.batch_size) {
                let id_batch = id_train.select(chunk)?;
                let labels = id_batch.labels.clone();
                let id_x = id_batch.features;

                let aux_x = if margin_active {
                    let aux = aux.as_ref().expect("checked above");
                    let idx: Vec<usize> = (0..chunk.len())
                        .map(|t| aux_order[(aux_cursor + t) % aux_order.len()])
                        .collect();
                    aux_cursor = (aux_cursor + chunk.len()) % aux_order.len();
                    Some(aux.select(&idx)?.features)
                } else {
                    None
                };

                let neg_x = if gen_active {
                    Some(sample_negatives(
                        &params,
                        &mut buffer,
                        chunk.len(),
                        &sgld_cfg,
                        &mut sgld_rng,
                    )?)
                } else {
                    None
                };

                let terms = sam_step(
                    &mut params,
                    |p: &ModelParams| -> Result<StepEval> {
                        let mut tape = Tape::new();
                        let model = p.register(&mut tape, true);
                        let objective = crate::losses::mejem_objective(
                            &mut tape,
                            &model,
                            ObjectiveInputs {
                                id_x: &id_x,
                                id_labels: &labels,
                                aux_x: aux_x.as_ref(),
                                neg_x: neg_x.as_ref(),
                            },
                            &weights,
                            &margin_cfg,
                            &obj_flags,
                        )?;
                        tape.backward(objective.total)?;
                        Ok(StepEval {
                            loss: objective.terms.total,
                            grads: model.collect_grads(&tape),
                            terms: objective.terms,
                        })
                    },
                    &mut optimizer,
                    &sam_cfg,
                )?;

                let _ = writeln!(
                    log,
                    "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    optimizer.step - 1,
                    epoch,
                    terms.total,
                    terms.cross_entropy,
                    terms.generative,
                    terms.margin,
                    terms.mean_id_energy,
                    terms.mean_aux_energy,
                    terms.mean_neg_energy,
                );
                final_terms = Some(terms);
                steps_run += 1;
            }

            let interval = config.schedule.checkpoint_interval;
            if interval > 0 && (epoch + 1) % interval == 0 && epoch + 1 < config.schedule.epochs {
                let snapshot = assemble_checkpoint(
                    &hash, epoch + 1, &params, &optimizer, &buffer, &normalizer,
                    &shuffle_rng, &sgld_rng,
                );
                snapshot.save(&paths.epoch_checkpoint(epoch + 1))?;
            }
        }
        Ok(())
    })();

    std::fs::write(paths.training_log(), &log)?;
    loop_result?;

    let checkpoint = assemble_checkpoint(
        &hash,
        config.schedule.epochs,
        &params,
        &optimizer,
        &buffer,
        &normalizer,
        &shuffle_rng,
        &sgld_rng,
    );
    let checkpoint_path = paths.checkpoint();
    checkpoint.save(&checkpoint_path)?;

    let wall_clock_secs = start.elapsed().as_secs_f64();
    log::info!(
        "trained {} ({steps_run} steps) in {wall_clock_secs:.1}s -> {}",
        model_name(&config.flags),
        checkpoint_path.display()
    );
    Ok(TrainOutcome {
        checkpoint,
        checkpoint_path,
        final_terms,
        steps: steps_run,
        wall_clock_secs,
    })
}

#[allow(clippy::too_many_arguments)]
fn assemble_checkpoint(
    hash: &str,
    epoch: usize,
    params: &ModelParams,
    optimizer: &OptimizerState,
    buffer: &ReplayBuffer,
    normalizer: &Normalizer,
    shuffle_rng: &ChaCha8Rng,
    sgld_rng: &ChaCha8Rng,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: hash.to_string(),
        epoch,
        params: params.clone(),
        optimizer: optimizer.clone(),
        buffer: buffer.clone(),
        normalizer: normalizer.clone(),
        shuffle_rng: shuffle_rng.clone(),
        sgld_rng: sgld_rng.clone(),
    }
}

// ── Evaluation ──

/// One line of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: String,
    pub score_kind: String,
    pub auroc: f64,
    pub fpr95: f64,
    pub precision: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub config_hash: String,
}

/// In-memory evaluation result; the serialized artifacts are the source
/// of truth.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub model: String,
    pub config_hash: String,
    pub precision: f64,
    pub softmax: OodMetrics,
    pub energy: OodMetrics,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn metric(&self, kind: ScoreKind) -> &OodMetrics {
        match kind {
            ScoreKind::Softmax => &self.softmax,
            ScoreKind::Energy => &self.energy,
        }
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        [ScoreKind::Softmax, ScoreKind::Energy]
            .into_iter()
            .map(|kind| {
                let m = self.metric(kind);
                MetricsRecord {
                    model: self.model.clone(),
                    score_kind: kind.name().to_string(),
                    auroc: m.auroc,
                    fpr95: m.fpr95,
                    precision: self.precision,
                    n_id: m.n_id,
                    n_ood: m.n_ood,
                    config_hash: self.config_hash.clone(),
                }
            })
            .collect()
    }
}

/// Evaluates a checkpoint on the config's test data and writes score
/// CSVs, `metrics.json`, and histogram CSV/SVG pairs, one per score kind.
/// The checkpoint defaults to `checkpoint.json` in the output directory.
pub fn evaluate(config: &ExperimentConfig, checkpoint_path: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let paths = RunPaths::for_config(config);
    std::fs::create_dir_all(paths.dir())?;
    let hash = config.config_hash();
    config.save(&paths.config())?;
    std::fs::write(paths.config_hash(), format!("{hash}\n"))?;

    let default_path = paths.checkpoint();
    let checkpoint = Checkpoint::load(checkpoint_path.unwrap_or(&default_path))?;
    if checkpoint.config_hash != hash {
        log::warn!(
            "checkpoint hash {} does not match config hash {hash}; evaluating anyway",
            checkpoint.config_hash
        );
    }

    let bundle = load_data(config)?;
    let normalizer = &checkpoint.normalizer;
    let id_val = normalizer.apply(&bundle.id_val)?;
    let id_test = normalizer.apply(&bundle.id_test)?;
    let ood = normalizer.apply(&bundle.ood)?;

    let logits_val = checkpoint.params.logits(&id_val.features)?;
    let logits_id = checkpoint.params.logits(&id_test.features)?;
    let logits_ood = checkpoint.params.logits(&ood.features)?;

    let mut is_ood = vec![false; id_test.len()];
    is_ood.extend(std::iter::repeat(true).take(ood.len()));
    let logits_all = concat_rows(&logits_id, &logits_ood)?;
    let scored = score_samples(&logits_all, &is_ood)?;

    let truth: Vec<usize> = id_test.labels.iter().map(|&l| l as usize).collect();
    let pred: Vec<usize> = scored[..id_test.len()]
        .iter()
        .map(|s| s.argmax_class)
        .collect();
    let precision = closed_set_precision(&pred, &truth)?;

    let model = model_name(&config.flags);
    let mut metrics = Vec::new();
    let mut records = Vec::new();
    for kind in [ScoreKind::Softmax, ScoreKind::Energy] {
        let pick = |s: &crate::scoring::ScoredSample| match kind {
            ScoreKind::Softmax => s.softmax_score,
            ScoreKind::Energy => s.energy_score,
        };
        let id_scores: Vec<f64> = scored[..id_test.len()].iter().map(pick).collect();
        let ood_scores: Vec<f64> = scored[id_test.len()..].iter().map(pick).collect();

        let val_scores = match kind {
            ScoreKind::Softmax => crate::scoring::softmax_score(&logits_val)?,
            ScoreKind::Energy => crate::scoring::energy_score(&logits_val)?,
        };
        let threshold = calibrate_threshold(&val_scores, kind, config.eval.target_tpr)?;
        let open_set = predict_open_set(&logits_all, &threshold)?;

        write_scores_csv(&paths.scores(kind), &scored, &open_set, id_test.len())?;

        let m = OodMetrics::compute(&id_scores, &ood_scores)?;
        let hist = histogram(
            &id_scores,
            &ood_scores,
            &HistogramSpec {
                bin_count: config.eval.histogram_bins,
            },
        )?;
        write_histogram_csv(&paths.histogram_csv(kind), &hist)?;
        let title = format!("{model}: {} score, ID vs OOD", kind.name());
        std::fs::write(paths.histogram_svg(kind), render_histogram_svg(&hist, &title))?;
        metrics.push(m);
        records.push((kind, m));
    }

    let report = RunReport {
        model,
        config_hash: hash,
        precision,
        softmax: metrics[0],
        energy: metrics[1],
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report.records())
        .map_err(|e| Error::Data(format!("metrics serialization failed: {e}")))?;
    std::fs::write(paths.metrics(), json + "\n")?;
    log::info!(
        "evaluated {} in {:.1}s: precision {:.4}, energy AUROC {:.4}",
        report.model,
        report.wall_clock_secs,
        report.precision,
        report.energy.auroc
    );
    Ok(report)
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, ka) = a.dims2()?;
    let (nb, kb) = b.dims2()?;
    if ka != kb {
        return Err(Error::Dim {
            op: "concat_rows",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity((na + nb) * ka);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::matrix(na + nb, ka, data)
}

fn write_scores_csv(
    path: &Path,
    scored: &[crate::scoring::ScoredSample],
    open_set: &[usize],
    n_id: usize,
) -> Result<()> {
    let mut out =
        String::from("sample_id,origin,softmax_score,energy_score,argmax_class,open_set_label\n");
    for (i, (s, &label)) in scored.iter().zip(open_set).enumerate() {
        let (origin, local) = if i < n_id { ("id", i) } else { ("ood", i - n_id) };
        let _ = writeln!(
            out,
            "{origin}_{local},{origin},{:.16e},{:.16e},{},{label}",
            s.softmax_score, s.energy_score, s.argmax_class
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut out = String::from("bin_left,bin_right,count_id,count_ood\n");
    for i in 0..hist.count_id.len() {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{},{}",
            hist.edges[i],
            hist.edges[i + 1],
            hist.count_id[i],
            hist.count_ood[i]
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Renders overlaid ID/OOD count bars as a standalone SVG. Purely a
/// function of the histogram and title, so reruns are byte-identical.
pub fn render_histogram_svg(hist: &Histogram, title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let bins = hist.count_id.len();
    let max_count = hist
        .count_id
        .iter()
        .chain(&hist.count_ood)
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{title}</text>",
        w / 2.0
    );
    for (counts, color) in [(&hist.count_id, "#1f77b4"), (&hist.count_ood, "#d62728")] {
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let bar_h = plot_h * c as f64 / max_count;
            let x = left + plot_w * i as f64 / bins as f64;
            let bw = plot_w / bins as f64;
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{bar_h:.2}\" \
                 fill=\"{color}\" fill-opacity=\"0.55\"/>",
                top + plot_h - bar_h
            );
        }
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        top + plot_h,
        w - right,
        top + plot_h
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.1}\" stroke=\"black\"/>",
        top + plot_h
    );
    let axis_label = |x: f64, text: String, anchor: &str| {
        format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"{anchor}\">{text}</text>",
            h - bottom + 20.0
        )
    };
    let _ = writeln!(
        svg,
        "{}",
        axis_label(left, format!("{:.3}", hist.edges[0]), "start")
    );
    let _ = writeln!(
        svg,
        "{}",
        axis_label(w - right, format!("{:.3}", hist.edges[bins]), "end")
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"end\">{}</text>",
        left - 8.0,
        top + 12.0,
        max_count as u64
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"#1f77b4\">ID</text>",
        w - right - 90.0,
        top + 16.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"#d62728\">OOD</text>",
        w - right - 50.0,
        top + 16.0
    );
    svg.push_str("</svg>\n");
    svg
}

// ── Ablation ──

/// The ablation grid: the 2×2 {generative} × {margin} cells with SAM on,
/// plus a SAM-off full-model baseline.
pub const ABLATION_CELLS: [(&str, bool, bool, bool); 5] = [
    ("full", true, true, true),
    ("generative_only", true, false, true),
    ("margin_only", false, true, true),
    ("flags_off", false, false, true),
    ("full_nosam", true, true, false),
];

/// Trains and evaluates every ablation cell under
/// `<output_dir>/<cell-name>`, then writes the combined comparison table
/// as `ablation.csv` and `ablation.json` in the base output directory.
pub fn ablate(base: &ExperimentConfig) -> Result<Vec<(String, RunReport)>> {
    base.validate()?;
    let base_paths = RunPaths::for_config(base);
    std::fs::create_dir_all(base_paths.dir())?;

    let mut reports = Vec::new();
    for (name, generative, margin, sam) in ABLATION_CELLS {
        let mut cell = base.clone();
        cell.flags.generative = generative;
        cell.flags.margin = margin;
        cell.flags.sam = sam;
        cell.output_dir = base_paths.dir().join(name).to_string_lossy().into_owned();
        train(&cell, None)?;
        let report = evaluate(&cell, None)?;
        reports.push((name.to_string(), report));
    }

    let mut csv = String::from(
        "cell,model,generative,margin,sam,score_kind,auroc,fpr95,precision,n_id,n_ood\n",
    );
    let mut json_rows = Vec::new();
    for ((name, report), (_, generative, margin, sam)) in reports.iter().zip(ABLATION_CELLS) {
        for record in report.records() {
            let _ = writeln!(
                csv,
                "{name},{},{generative},{margin},{sam},{},{:.16e},{:.16e},{:.16e},{},{}",
                record.model,
                record.score_kind,
                record.auroc,
                record.fpr95,
                record.precision,
                record.n_id,
                record.n_ood
            );
            json_rows.push(AblationRecord {
                cell: name.clone(),
                record,
            });
        }
    }
    std::fs::write(base_paths.ablation_csv(), csv)?;
    let json = serde_json::to_string_pretty(&json_rows)
        .map_err(|e| Error::Data(format!("ablation serialization failed: {e}")))?;
    std::fs::write(base_paths.ablation_json(), json + "\n")?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub cell: String,
    #[serde(flatten)]
    pub record: MetricsRecord,
}

// ── Reporting ──

/// Renders the artifacts in a run directory as a plain-text table. Works
/// on both single evaluations (`metrics.json`) and ablation directories
/// (`ablation.json`).
pub fn render_report(dir: &Path) -> Result<String> {
    let paths = RunPaths::new(dir);
    if paths.ablation_json().exists() {
        let text = std::fs::read_to_string(paths.ablation_json())?;
        let rows: Vec<AblationRecord> = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("unreadable ablation table: {e}")))?;
        let mut out = format!("ablation grid under {}\n\n", dir.display());
        let _ = writeln!(
            out,
            "{:<16} {:<18} {:<8} {:>8} {:>8} {:>10}",
            "cell", "model", "score", "AUROC", "FPR95", "precision"
        );
        for row in &rows {
            let _ = writeln!(
                out,
                "{:<16} {:<18} {:<8} {:>8.4} {:>8.4} {:>10.4}",
                row.cell,
                row.record.model,
                row.record.score_kind,
                row.record.auroc,
                row.record.fpr95,
                row.record.precision
            );
        }
        return Ok(out);
    }
    if paths.metrics().exists() {
        let text = std::fs::read_to_string(paths.metrics())?;
        let rows: Vec<MetricsRecord> = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("unreadable metrics: {e}")))?;
        let hash = rows
            .first()
            .map(|r| r.config_hash.clone())
            .unwrap_or_default();
        let mut out = format!("run {} (config {hash})\n\n", dir.display());
        let _ = writeln!(
            out,
            "{:<18} {:<8} {:>8} {:>8} {:>10} {:>6} {:>6}",
            "model", "score", "AUROC", "FPR95", "precision", "n_id", "n_ood"
        );
        for row in &rows {
            let _ = writeln!(
                out,
                "{:<18} {:<8} {:>8.4} {:>8.4} {:>10.4} {:>6} {:>6}",
                row.model, row.score_kind, row.auroc, row.fpr95, row.precision, row.n_id, row.n_ood
            );
        }
        return Ok(out);
    }
    Err(Error::Data(format!(
        "{} holds neither metrics.json nor ablation.json; run evaluate or ablate first",
        dir.display()
    )))
}
