//! Warm-up cross-entropy, the robust adaptive term `-p^gamma`, the
//! per-sample and overall losses, and their analytic gradients.
//!
//! For a sample of modality `P` the intra-modal probability is taken from
//! bank `P` at the sample's own-modality label, the inter-modal probability
//! from bank `Q` (the other modality) at the cross-modal label. Memory
//! centers are constants inside a step: they are moved only by momentum.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{Modality, PerModality};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::memory::MemoryBank;

pub const PROB_FLOOR: f64 = 1e-12;

static CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// Number of probabilities clamped to [`PROB_FLOOR`] since process start.
pub fn clamp_count() -> usize {
    CLAMPED.load(Ordering::Relaxed)
}

fn clamp_prob(p: f64) -> f64 {
    if p < PROB_FLOOR {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        PROB_FLOOR
    } else {
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub lambda: f64,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        TradeoffConfig { lambda: 0.6 }
    }
}

impl TradeoffConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.lambda) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )))
        }
    }
}

/// Weights on the intra- and inter-modal terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub intra: f64,
    pub inter: f64,
}

impl TermWeights {
    pub fn from_lambda(lambda: f64) -> Self {
        TermWeights {
            intra: lambda,
            inter: 1.0 - lambda,
        }
    }

    /// Unweighted sum used by the warm-up cross-entropy.
    pub fn unit() -> Self {
        TermWeights {
            intra: 1.0,
            inter: 1.0,
        }
    }
}

/// Training target of one sample in the consuming model's bank index
/// spaces: `intra` indexes the sample's own-modality bank, `inter` the
/// other modality's bank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainLabel {
    pub intra: Option<usize>,
    pub inter: Option<usize>,
}

impl TrainLabel {
    pub fn is_empty(&self) -> bool {
        self.intra.is_none() && self.inter.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    CrossEntropy,
    RobustAdaptive,
}

/// `-ln p_intra - ln p_inter` for one sample.
pub fn ce_loss(p_intra: f64, p_inter: f64) -> f64 {
    -clamp_prob(p_intra).ln() - clamp_prob(p_inter).ln()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "gamma {gamma} outside (0, 1]"
        )))
    }
}

/// `-p^gamma`.
pub fn ra_term(p: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(-clamp_prob(p).powf(gamma))
}

/// `-lambda p_intra^gamma - (1 - lambda) p_inter^gamma`.
pub fn per_sample_loss(p_intra: f64, p_inter: f64, gamma: f64, lambda: f64) -> Result<f64> {
    Ok(lambda * ra_term(p_intra, gamma)? + (1.0 - lambda) * ra_term(p_inter, gamma)?)
}

/// Gradient of `-p_y^gamma` with respect to the logits that produced `probs`.
pub fn ra_logit_gradient(probs: ArrayView1<f64>, label: usize, gamma: f64) -> Array1<f64> {
    let scale = gamma * clamp_prob(probs[label]).powf(gamma);
    let mut g = probs.mapv(|p| scale * p);
    g[label] -= scale;
    g
}

/// Gradient of `-ln p_y` with respect to the logits.
pub fn ce_logit_gradient(probs: ArrayView1<f64>, label: usize) -> Array1<f64> {
    let mut g = probs.to_owned();
    g[label] -= 1.0;
    g
}

fn term(
    objective: Objective,
    probs: ArrayView1<f64>,
    label: usize,
    gamma: f64,
) -> (f64, Array1<f64>) {
    match objective {
        Objective::CrossEntropy => (
            -clamp_prob(probs[label]).ln(),
            ce_logit_gradient(probs, label),
        ),
        Objective::RobustAdaptive => (
            -clamp_prob(probs[label]).powf(gamma),
            ra_logit_gradient(probs, label, gamma),
        ),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    /// Unweighted sum of intra-modal terms.
    pub intra_term: f64,
    /// Unweighted sum of inter-modal terms.
    pub inter_term: f64,
    pub per_sample: Vec<f64>,
}

/// One embedded sample entering [`total_loss`].
#[derive(Clone, Debug)]
pub struct LossInput<'a> {
    pub feature: ArrayView1<'a, f64>,
    pub modality: Modality,
    pub label: TrainLabel,
    pub gamma: f64,
}

/// One raw sample entering [`loss_gradient`].
#[derive(Clone, Debug)]
pub struct BatchSample<'a> {
    pub input: ArrayView1<'a, f64>,
    pub modality: Modality,
    pub label: TrainLabel,
    pub gamma: f64,
}

fn bank_for(
    banks: &PerModality<MemoryBank>,
    modality: Modality,
    label: usize,
) -> Result<&MemoryBank> {
    let bank = banks.get(modality);
    if label >= bank.len() {
        return Err(Error::LabelOutOfRange {
            label,
            count: bank.len(),
        });
    }
    Ok(bank)
}

struct SampleEval {
    loss: f64,
    intra: f64,
    inter: f64,
    grad_feature: Array1<f64>,
}

fn evaluate_sample(
    feature: ArrayView1<f64>,
    modality: Modality,
    label: TrainLabel,
    gamma: f64,
    banks: &PerModality<MemoryBank>,
    weights: TermWeights,
    objective: Objective,
) -> Result<SampleEval> {
    if objective == Objective::RobustAdaptive {
        check_gamma(gamma)?;
    }
    let mut out = SampleEval {
        loss: 0.0,
        intra: 0.0,
        inter: 0.0,
        grad_feature: Array1::zeros(feature.len()),
    };
    let targets = [
        (label.intra, modality, weights.intra, true),
        (label.inter, modality.other(), weights.inter, false),
    ];
    for (target, bank_modality, weight, is_intra) in targets {
        let Some(y) = target else { continue };
        let bank = bank_for(banks, bank_modality, y)?;
        let probs = bank.class_probabilities(feature);
        let (value, g_logits) = term(objective, probs.view(), y, gamma);
        if is_intra {
            out.intra = value;
        } else {
            out.inter = value;
        }
        out.loss += weight * value;
        if weight != 0.0 {
            // logits = C v / tau  =>  dL/dv = C^T dL/dlogits / tau
            out.grad_feature
                .scaled_add(weight / bank.tau(), &bank.centers().t().dot(&g_logits));
        }
    }
    Ok(out)
}

/// Weighted sum of per-sample losses over embedded features.
pub fn total_loss(
    inputs: &[LossInput],
    banks: &PerModality<MemoryBank>,
    weights: TermWeights,
    objective: Objective,
) -> Result<LossReport> {
    let mut report = LossReport::default();
    for item in inputs {
        let e = evaluate_sample(
            item.feature,
            item.modality,
            item.label,
            item.gamma,
            banks,
            weights,
            objective,
        )?;
        report.intra_term += e.intra;
        report.inter_term += e.inter;
        report.per_sample.push(e.loss);
    }
    report.total = weights.intra * report.intra_term + weights.inter * report.inter_term;
    Ok(report)
}

/// Loss report and exact parameter gradient for a raw batch.
pub fn loss_gradient(
    encoder: &EncoderParams,
    batch: &[BatchSample],
    banks: &PerModality<MemoryBank>,
    weights: TermWeights,
    objective: Objective,
) -> Result<(LossReport, EncoderParams)> {
    let mut grads = encoder.zeros_like();
    let mut report = LossReport::default();
    for (idx, item) in batch.iter().enumerate() {
        let projector = encoder.get(item.modality);
        let cache = projector.forward_cached(item.input).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("batch item {idx}: {msg}")),
            other => other,
        })?;
        let e = evaluate_sample(
            cache.output.view(),
            item.modality,
            item.label,
            item.gamma,
            banks,
            weights,
            objective,
        )?;
        if !e.loss.is_finite() || !e.grad_feature.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss or gradient at batch item {idx}"
            )));
        }
        projector.backward(&cache, e.grad_feature.view(), grads.get_mut(item.modality));
        report.intra_term += e.intra;
        report.inter_term += e.inter;
        report.per_sample.push(e.loss);
    }
    report.total = weights.intra * report.intra_term + weights.inter * report.inter_term;
    Ok((report, grads))
}

/// Cross-entropy diagnostic `-lambda ln p_intra - (1 - lambda) ln p_inter`
/// over whichever targets the label carries; `None` for an empty label.
pub fn diagnostic_loss(
    feature: ArrayView1<f64>,
    modality: Modality,
    label: TrainLabel,
    banks: &PerModality<MemoryBank>,
    lambda: f64,
) -> Result<Option<f64>> {
    if label.is_empty() {
        return Ok(None);
    }
    let mut loss = 0.0;
    if let Some(y) = label.intra {
        let p = bank_for(banks, modality, y)?.class_probabilities(feature)[y];
        loss -= lambda * clamp_prob(p).ln();
    }
    if let Some(y) = label.inter {
        let p = bank_for(banks, modality.other(), y)?.class_probabilities(feature)[y];
        loss -= (1.0 - lambda) * clamp_prob(p).ln();
    }
    Ok(Some(loss))
}
