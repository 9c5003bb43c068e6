//! Training objectives: cross-entropy, the contrastive generative
//! surrogate, the hybrid energy margin loss, and their weighted sum.
//!
//! The combined objective is minimized:
//!
//! ```text
//! total = CE + λ₁·(mean E(x⁺) - mean E(x⁻)) + λ₂·margin/(n_id + n_aux)
//! ```
//!
//! Minimizing the generative term raises in-distribution density (its
//! parameter gradient estimates the negative data log-likelihood
//! gradient); the margin term pushes ID energies below `m_in` with a
//! square hinge and auxiliary-outlier energies above `m_out` with a linear
//! hinge. A term is active only when its flag is set *and* its weight is
//! positive; inactive terms contribute no tape nodes at all, which makes
//! weight-zero and flag-off training trajectories bitwise identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TapedModel;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Weights λ₁ (generative) and λ₂ (margin) of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_gen: f64,
    pub lambda_margin: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            lambda_gen: 1.0,
            lambda_margin: 0.05,
        }
    }
}

/// Which energy the ID half of the margin loss penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdEnergy {
    /// Marginal energy `-logsumexp f(x)` (default; OOD rows have no label,
    /// so this is the only reading that treats both halves alike).
    Marginal,
    /// Joint energy `-f(x)[y]` of the labeled class.
    Joint,
}

/// Margin thresholds and the ID energy choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub m_in: f64,
    pub m_out: f64,
    pub id_energy: IdEnergy,
}

impl Default for MarginConfig {
    fn default() -> MarginConfig {
        MarginConfig {
            m_in: -10.0,
            m_out: -10.0,
            id_energy: IdEnergy::Marginal,
        }
    }
}

/// Which optional objective terms are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveFlags {
    pub generative: bool,
    pub margin: bool,
}

/// Batch inputs to the combined objective. Negatives are sampled by the
/// caller and enter as constants, so one SGLD draw can serve several
/// objective evaluations (the sharpness-aware optimizer needs two).
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub id_x: &'a Tensor,
    pub id_labels: &'a [i64],
    pub aux_x: Option<&'a Tensor>,
    pub neg_x: Option<&'a Tensor>,
}

/// Scalar diagnostics of one objective evaluation. Inactive terms and
/// unavailable energies read as NaN.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub cross_entropy: f64,
    pub generative: f64,
    pub margin: f64,
    pub mean_id_energy: f64,
    pub mean_aux_energy: f64,
    pub mean_neg_energy: f64,
}

/// The combined objective on a tape: the scalar node to differentiate plus
/// its per-term diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: TensorId,
    pub terms: LossTerms,
}

/// Mean of `logsumexp(logits_i) - logits_i[label_i]`, the negative mean
/// log-posterior.
pub fn cross_entropy(tape: &mut Tape, logits: TensorId, labels: &[i64]) -> Result<TensorId> {
    let idx = validate_labels(tape.value(logits), labels)?;
    let lse = tape.logsumexp_last(logits)?;
    let picked = tape.gather_last(logits, idx)?;
    let diff = tape.sub(lse, picked)?;
    tape.mean(diff)
}

/// Contrastive surrogate `mean E(x_pos) - mean E(x_neg)`. Stage `x_neg` as
/// a tape constant: no gradient may flow through the sampling chain.
pub fn generative_loss(
    tape: &mut Tape,
    model: &TapedModel,
    x_pos: TensorId,
    x_neg: TensorId,
) -> Result<TensorId> {
    let e_pos = model.marginal_energy(tape, x_pos)?;
    let e_neg = model.marginal_energy(tape, x_neg)?;
    let mean_pos = tape.mean(e_pos)?;
    let mean_neg = tape.mean(e_neg)?;
    tape.sub(mean_pos, mean_neg)
}

/// Hybrid hinge sum over a batch of energies: square hinge
/// `max(E - m_in, 0)²` for ID rows, linear hinge `max(m_out - E, 0)` for
/// OOD rows. Unnormalized; the combined objective divides by batch size.
pub fn margin_loss(
    tape: &mut Tape,
    energies: TensorId,
    is_ood: &[bool],
    cfg: &MarginConfig,
) -> Result<TensorId> {
    let n = match tape.value(energies).shape() {
        [n] => *n,
        other => {
            return Err(Error::Contract(format!(
                "margin loss expects rank-1 energies, got shape {other:?}"
            )))
        }
    };
    if is_ood.len() != n {
        return Err(Error::Contract(format!(
            "{n} energies but {} origin flags",
            is_ood.len()
        )));
    }
    let id_idx: Vec<usize> = (0..n).filter(|&i| !is_ood[i]).collect();
    let ood_idx: Vec<usize> = (0..n).filter(|&i| is_ood[i]).collect();

    let e_id = tape.take(energies, id_idx)?;
    let hinged_id = tape.hinge(e_id, cfg.m_in);
    let sq_id = tape.square(hinged_id);
    let id_part = tape.sum(sq_id);

    let e_ood = tape.take(energies, ood_idx)?;
    let neg_e = tape.scale(e_ood, -1.0);
    let hinged_ood = tape.hinge(neg_e, -cfg.m_out);
    let ood_part = tape.sum(hinged_ood);

    tape.add(id_part, ood_part)
}

/// Builds the full objective on `tape` for a staged model.
///
/// A term is active only when its flag is set and its weight is positive;
/// inactive terms add no nodes. An active generative term requires
/// `neg_x`; an active margin term requires a non-empty `aux_x`.
pub fn mejem_objective(
    tape: &mut Tape,
    model: &TapedModel,
    inputs: ObjectiveInputs<'_>,
    weights: &LossWeights,
    margin_cfg: &MarginConfig,
    flags: &ObjectiveFlags,
) -> Result<Objective> {
    if weights.lambda_gen < 0.0 || weights.lambda_margin < 0.0 {
        return Err(Error::Config(format!(
            "loss weights must be non-negative, got λ₁ = {}, λ₂ = {}",
            weights.lambda_gen, weights.lambda_margin
        )));
    }
    let gen_active = flags.generative && weights.lambda_gen > 0.0;
    let margin_active = flags.margin && weights.lambda_margin > 0.0;

    let (n_id, _) = inputs.id_x.dims2()?;
    if inputs.id_labels.len() != n_id {
        return Err(Error::Contract(format!(
            "{n_id} feature rows but {} labels",
            inputs.id_labels.len()
        )));
    }

    let id_x = tape.constant(inputs.id_x.clone());
    let logits = model.forward(tape, id_x)?;
    let label_idx = validate_labels(tape.value(logits), inputs.id_labels)?;
    let lse = tape.logsumexp_last(logits)?;
    let picked = tape.gather_last(logits, label_idx.clone())?;
    let ce_diff = tape.sub(lse, picked)?;
    let ce = tape.mean(ce_diff)?;
    let e_id = tape.scale(lse, -1.0);
    let mean_id_energy_node = tape.mean(e_id)?;
    let mean_id_energy = tape.value(mean_id_energy_node).scalar_value()?;

    let mut total = ce;
    let mut terms = LossTerms {
        total: f64::NAN,
        cross_entropy: tape.value(ce).scalar_value()?,
        generative: f64::NAN,
        margin: f64::NAN,
        mean_id_energy,
        mean_aux_energy: f64::NAN,
        mean_neg_energy: f64::NAN,
    };

    if gen_active {
        let neg = inputs.neg_x.ok_or_else(|| {
            Error::Config("generative term is active but no negative samples were given".into())
        })?;
        let neg_x = tape.constant(neg.clone());
        let e_neg = model.marginal_energy(tape, neg_x)?;
        let mean_neg = tape.mean(e_neg)?;
        let gen = tape.sub(mean_id_energy_node, mean_neg)?;
        terms.generative = tape.value(gen).scalar_value()?;
        terms.mean_neg_energy = tape.value(mean_neg).scalar_value()?;
        let weighted = tape.scale(gen, weights.lambda_gen);
        total = tape.add(total, weighted)?;
    }

    if margin_active {
        let aux = inputs.aux_x.ok_or_else(|| {
            Error::Config("margin term is active but no auxiliary outlier data was given".into())
        })?;
        let (n_aux, _) = aux.dims2()?;
        if n_aux == 0 {
            return Err(Error::Config(
                "margin term is active but the auxiliary outlier batch is empty".into(),
            ));
        }
        let aux_x = tape.constant(aux.clone());
        let e_aux = model.marginal_energy(tape, aux_x)?;
        let mean_aux = tape.mean(e_aux)?;
        terms.mean_aux_energy = tape.value(mean_aux).scalar_value()?;

        let e_id_margin = match margin_cfg.id_energy {
            IdEnergy::Marginal => e_id,
            IdEnergy::Joint => {
                let joint_logits = tape.gather_last(logits, label_idx)?;
                tape.scale(joint_logits, -1.0)
            }
        };
        let hinged_id = tape.hinge(e_id_margin, margin_cfg.m_in);
        let sq_id = tape.square(hinged_id);
        let id_part = tape.sum(sq_id);
        let neg_e_aux = tape.scale(e_aux, -1.0);
        let hinged_aux = tape.hinge(neg_e_aux, -margin_cfg.m_out);
        let aux_part = tape.sum(hinged_aux);
        let margin_sum = tape.add(id_part, aux_part)?;
        let normalized = tape.scale(margin_sum, 1.0 / (n_id + n_aux) as f64);
        terms.margin = tape.value(normalized).scalar_value()?;
        let weighted = tape.scale(normalized, weights.lambda_margin);
        total = tape.add(total, weighted)?;
    }

    terms.total = tape.value(total).scalar_value()?;
    Ok(Objective { total, terms })
}

fn validate_labels(logits: &Tensor, labels: &[i64]) -> Result<Vec<usize>> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    to_class_indices(labels, k)
}

fn to_class_indices(labels: &[i64], k: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(row, &y)| {
            if y < 0 || y as usize >= k {
                Err(Error::Data(format!(
                    "label {y} at row {row} is outside 0..{k}"
                )))
            } else {
                Ok(y as usize)
            }
        })
        .collect()
}
