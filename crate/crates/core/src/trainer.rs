//! Two-model co-training. Each epoch both models cluster their own
//! embeddings, refresh their memory banks, align labels across modalities
//! and then across models, fit per-sample exponents, and finally take
//! gradient steps in which each model is supervised by its peer's labels.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assignment::linear_assignment;
use crate::ccm::{match_clusters, relabel, CostMatrix, Direction, Matching};
use crate::clustering::{cluster_centers, dbscan, ClusterAssignment, DbscanConfig};
use crate::data::{Modality, PerModality, UnlabeledView};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::linalg::normalize_rows;
use crate::memory::MemoryBank;
use crate::objectives::{
    diagnostic_loss, loss_gradient, BatchSample, Objective, TermWeights, TrainLabel,
};
use crate::ral::{adaptive_gammas, RalConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_ral_intra: bool,
    pub no_ral_inter: bool,
    pub no_ccm_cross_modal: bool,
    pub no_ccm_cross_model: bool,
    /// Train model A alone on its own labels.
    pub single_model: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_period: usize,
    pub warmup_epochs: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    pub lambda: f64,
    pub eta: f64,
    pub tau: f64,
    pub ral: RalConfig,
    pub dbscan: DbscanConfig,
    pub embed_dim: usize,
    pub hidden_dim: Option<usize>,
    pub ablation: Ablation,
    /// Use this exponent for every sample instead of the adaptive rule.
    pub fixed_gamma: Option<f64>,
    /// Fraction of cluster labels flipped to a random other cluster right
    /// after clustering.
    pub injected_label_noise: f64,
    /// Standard deviation of Gaussian jitter added to batch inputs.
    pub jitter_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 3.5e-4,
            lr_decay_factor: 10.0,
            lr_decay_period: 25,
            warmup_epochs: 2,
            seed_a: 1,
            seed_b: 2,
            lambda: 0.6,
            eta: 0.15,
            tau: 0.05,
            ral: RalConfig::default(),
            dbscan: DbscanConfig::default(),
            embed_dim: 32,
            hidden_dim: None,
            ablation: Ablation::default(),
            fixed_gamma: None,
            injected_label_noise: 0.0,
            jitter_sigma: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be >= 0", self.lr));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("decay factor {} must be > 0", self.lr_decay_factor));
        }
        if self.lr_decay_period == 0 {
            return bad("decay period must be >= 1".into());
        }
        if self.seed_a == self.seed_b {
            return bad(format!(
                "models need distinct seeds, both are {}",
                self.seed_a
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta {} outside [0, 1]", self.eta));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau {} must be > 0", self.tau));
        }
        if self.embed_dim == 0 || self.hidden_dim == Some(0) {
            return bad("embedding and hidden widths must be >= 1".into());
        }
        if let Some(g) = self.fixed_gamma {
            if !(g > 0.0 && g <= 1.0) {
                return bad(format!("fixed gamma {g} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.injected_label_noise) {
            return bad(format!(
                "label noise {} outside [0, 1]",
                self.injected_label_noise
            ));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return bad(format!("jitter {} must be >= 0", self.jitter_sigma));
        }
        self.ral.validate()?;
        self.dbscan.validate()
    }

    /// Training loss weights for main epochs after ablation switches.
    pub fn term_weights(&self) -> TermWeights {
        let mut w = TermWeights::from_lambda(self.lambda);
        if self.ablation.no_ral_intra {
            w.intra = 0.0;
        }
        if self.ablation.no_ral_inter {
            w.inter = 0.0;
        }
        w
    }

    pub fn dual(&self) -> bool {
        !self.ablation.single_model
    }
}

/// `lr0 * factor^(-floor(epoch / period))` for a zero-based main epoch.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr
        * config
            .lr_decay_factor
            .powi(-((epoch / config.lr_decay_period) as i32))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelId {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub id: ModelId,
    pub encoder: EncoderParams,
    pub banks: Option<PerModality<MemoryBank>>,
}

impl ModelState {
    pub fn init(id: ModelId, input_dim: usize, config: &TrainConfig) -> ModelState {
        let seed = match id {
            ModelId::A => config.seed_a,
            ModelId::B => config.seed_b,
        };
        ModelState {
            id,
            encoder: EncoderParams::init(input_dim, config.hidden_dim, config.embed_dim, seed),
            banks: None,
        }
    }

    pub fn embed(&self, data: &UnlabeledView) -> Result<PerModality<Array2<f64>>> {
        PerModality::try_from_fn(|m| self.encoder.get(m).forward_rows(data.get(m).view()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GammaStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl GammaStats {
    fn of(values: impl Iterator<Item = f64>) -> GammaStats {
        let (mut n, mut sum, mut min, mut max) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        if n == 0 {
            return GammaStats::default();
        }
        GammaStats {
            mean: sum / n as f64,
            min,
            max,
        }
    }
}

/// Everything one model saw and did during a main epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEpochLog {
    pub model: ModelId,
    /// Clustering of this model's embeddings, before label noise.
    pub clusters: PerModality<Vec<Option<usize>>>,
    pub cluster_counts: PerModality<usize>,
    /// Labels after injected noise; `injected` marks the flipped ones.
    pub own_labels: PerModality<Vec<Option<usize>>>,
    pub injected: PerModality<Vec<bool>>,
    /// Labels this model trained on, in its own index spaces.
    pub consumed: PerModality<Vec<TrainLabel>>,
    /// Cross-entropy diagnostic loss per sample at epoch start.
    pub diagnostic: PerModality<Vec<Option<f64>>>,
    pub gammas: PerModality<Vec<f64>>,
    pub gamma_stats: GammaStats,
    /// Visible-to-infrared cluster matching within this model.
    pub cross_modal: Option<Matching>,
    /// Matching from the producer's clusters to this model's clusters.
    pub cross_model: Option<PerModality<Matching>>,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub models: Vec<ModelEpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupLog {
    pub model: ModelId,
    pub epoch: usize,
    pub cluster_counts: PerModality<usize>,
    pub first_batch_loss: f64,
    pub last_batch_loss: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub warmup: Vec<WarmupLog>,
    pub epochs: Vec<EpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub a: ModelState,
    pub b: ModelState,
    pub log: RunLog,
}

const STREAM_WARMUP: u64 = 0x5741;
const STREAM_MAIN: u64 = 0x4d41;

fn rng_for(config: &TrainConfig, stream: u64, epoch: usize, model: ModelId) -> ChaCha8Rng {
    let mut h = config.seed_a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ config.seed_b.rotate_left(29);
    for v in [stream, epoch as u64, model as u64] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

struct Clustered {
    assignment: PerModality<ClusterAssignment>,
    centers: PerModality<Array2<f64>>,
    labels: PerModality<Vec<Option<usize>>>,
    injected: PerModality<Vec<bool>>,
}

fn cluster_model(
    features: &PerModality<Array2<f64>>,
    config: &TrainConfig,
    noise_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Clustered> {
    let assignment = PerModality::try_from_fn(|m| {
        let a = dbscan(features.get(m).view(), &config.dbscan)?;
        if a.cluster_count == 0 {
            return Err(Error::EmptyClusters(format!(
                "clustering found no clusters in modality {m} ({} samples, eps {}, min_pts {})",
                a.labels.len(),
                config.dbscan.eps,
                config.dbscan.min_pts
            )));
        }
        Ok(a)
    })?;
    let centers =
        PerModality::try_from_fn(|m| cluster_centers(features.get(m).view(), assignment.get(m)))?;
    let mut labels = assignment.map(|_, a| a.labels.clone());
    let mut injected = labels.map(|_, l| vec![false; l.len()]);
    if noise_rate > 0.0 {
        for m in Modality::ALL {
            let k = assignment.get(m).cluster_count;
            for (l, flag) in labels
                .get_mut(m)
                .iter_mut()
                .zip(injected.get_mut(m).iter_mut())
            {
                let Some(y) = *l else { continue };
                if k >= 2 && rng.random::<f64>() < noise_rate {
                    let r = rng.random_range(0..k - 1);
                    *l = Some(if r >= y { r + 1 } else { r });
                    *flag = true;
                }
            }
        }
    }
    Ok(Clustered {
        assignment,
        centers,
        labels,
        injected,
    })
}

/// Fresh banks when cluster counts change; otherwise the old rows are
/// reordered to the new clusters by one-to-one cosine matching and moved
/// toward the new centers with momentum.
fn refresh_banks(
    old: Option<&PerModality<MemoryBank>>,
    centers: &PerModality<Array2<f64>>,
    config: &TrainConfig,
) -> Result<PerModality<MemoryBank>> {
    PerModality::try_from_fn(|m| {
        let new = centers.get(m);
        match old.map(|b| b.get(m)) {
            Some(bank) if bank.len() == new.nrows() => {
                let cost = CostMatrix::from_centers(new.view(), bank.centers().view())?;
                let perm = linear_assignment(cost.entries().view())?;
                let old_rows = bank.centers();
                let reordered =
                    Array2::from_shape_fn(new.dim(), |(k, d)| old_rows[[perm.row_to_col[k], d]]);
                let mut next = MemoryBank::new(reordered, m, config.eta, config.tau)?;
                let normalized = normalize_rows(new)?;
                let rows: Vec<_> = normalized.outer_iter().map(Some).collect();
                next.update(&rows)?;
                next.renormalize()?;
                Ok(next)
            }
            _ => MemoryBank::from_cluster_centers(new, m, config.eta, config.tau),
        }
    })
}

/// Attach cross-modal targets to a model's own labels.
fn cross_modal_labels(
    banks: &PerModality<MemoryBank>,
    own: &PerModality<Vec<Option<usize>>>,
    ablate: bool,
) -> Result<(PerModality<Vec<TrainLabel>>, Option<Matching>)> {
    let zip = |intra: &[Option<usize>], inter: Vec<Option<usize>>| -> Vec<TrainLabel> {
        intra
            .iter()
            .zip(inter)
            .map(|(&intra, inter)| TrainLabel { intra, inter })
            .collect()
    };
    if ablate {
        // No assignment: each cluster takes its nearest center in the other
        // modality, collisions allowed.
        let cost = CostMatrix::from_centers(
            banks.visible.centers().view(),
            banks.infrared.centers().view(),
        )?;
        let nearest = |row: ndarray::ArrayView1<f64>| {
            row.iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .map(|(k, _)| k)
                .expect("non-empty bank")
        };
        let v_to_i: Vec<usize> = cost.entries().outer_iter().map(nearest).collect();
        let i_to_v: Vec<usize> = cost.entries().columns().into_iter().map(nearest).collect();
        let inter_v = own.visible.iter().map(|l| l.map(|y| v_to_i[y])).collect();
        let inter_i = own.infrared.iter().map(|l| l.map(|y| i_to_v[y])).collect();
        let labels = PerModality::new(zip(&own.visible, inter_v), zip(&own.infrared, inter_i));
        return Ok((labels, None));
    }
    let matching = match_clusters(
        banks.visible.centers().view(),
        banks.infrared.centers().view(),
    )?;
    let inter_v = relabel(&own.visible, &matching, Direction::PToQ)?;
    let inter_i = relabel(&own.infrared, &matching, Direction::QToP)?;
    let labels = PerModality::new(zip(&own.visible, inter_v), zip(&own.infrared, inter_i));
    Ok((labels, Some(matching)))
}

/// Translate a producer's labels into a consumer's index spaces.
fn cross_model_labels(
    produced: &PerModality<Vec<TrainLabel>>,
    producer_centers: &PerModality<Array2<f64>>,
    consumer_centers: &PerModality<Array2<f64>>,
    ablate: bool,
) -> Result<(PerModality<Vec<TrainLabel>>, Option<PerModality<Matching>>)> {
    if ablate {
        let counts = consumer_centers.map(|_, c| c.nrows());
        let labels = PerModality::from_fn(|m| {
            produced
                .get(m)
                .iter()
                .map(|l| TrainLabel {
                    intra: l.intra.filter(|&y| y < *counts.get(m)),
                    inter: l.inter.filter(|&y| y < *counts.get(m.other())),
                })
                .collect()
        });
        return Ok((labels, None));
    }
    let matchings = PerModality::try_from_fn(|m| {
        match_clusters(
            producer_centers.get(m).view(),
            consumer_centers.get(m).view(),
        )
    })?;
    let labels = PerModality::try_from_fn(|m| -> Result<Vec<TrainLabel>> {
        let intra: Vec<_> = produced.get(m).iter().map(|l| l.intra).collect();
        let inter: Vec<_> = produced.get(m).iter().map(|l| l.inter).collect();
        let intra = relabel(&intra, matchings.get(m), Direction::PToQ)?;
        let inter = relabel(&inter, matchings.get(m.other()), Direction::PToQ)?;
        Ok(intra
            .into_iter()
            .zip(inter)
            .map(|(intra, inter)| TrainLabel { intra, inter })
            .collect())
    })?;
    Ok((labels, Some(matchings)))
}

fn joint_embeddings(
    a: &PerModality<Array2<f64>>,
    b: &PerModality<Array2<f64>>,
) -> Result<PerModality<Array2<f64>>> {
    PerModality::try_from_fn(|m| normalize_rows(&((a.get(m) + b.get(m)) * 0.5)))
}

fn gammas_for(
    features: &PerModality<Array2<f64>>,
    labels: &PerModality<Vec<TrainLabel>>,
    banks: &PerModality<MemoryBank>,
    config: &TrainConfig,
) -> Result<(PerModality<Vec<Option<f64>>>, PerModality<Vec<f64>>)> {
    let diagnostic = PerModality::try_from_fn(|m| -> Result<Vec<Option<f64>>> {
        features
            .get(m)
            .outer_iter()
            .zip(labels.get(m))
            .map(|(f, &l)| diagnostic_loss(f, m, l, banks, config.lambda))
            .collect()
    })?;
    let gammas = PerModality::try_from_fn(|m| -> Result<Vec<f64>> {
        let diag = diagnostic.get(m);
        if let Some(g) = config.fixed_gamma {
            return Ok(vec![g; diag.len()]);
        }
        let present: Vec<f64> = diag.iter().flatten().copied().collect();
        let fitted = adaptive_gammas(&present, &config.ral)?;
        let mut it = fitted.gammas.into_iter();
        Ok(diag
            .iter()
            .map(|d| match d {
                Some(_) => it.next().expect("one gamma per present loss"),
                None => config.ral.gamma_floor,
            })
            .collect())
    })?;
    Ok((diagnostic, gammas))
}

/// Supervision handed to one model for the gradient phase of an epoch.
struct Plan {
    labels: PerModality<Vec<TrainLabel>>,
    /// The model's own clustering; bank row `j` follows the batch mean of
    /// its cluster `j`.
    bank_labels: PerModality<Vec<Option<usize>>>,
    gammas: PerModality<Vec<f64>>,
    weights: TermWeights,
    objective: Objective,
}

struct StepLosses {
    sum: f64,
    count: usize,
    first: Option<f64>,
    last: f64,
}

/// One gradient step on the rows in `batch` followed by a momentum update
/// of the intra-modal banks. Returns the summed loss and item count.
fn batch_step(
    model: &mut ModelState,
    data: &UnlabeledView,
    batch: &[(Modality, usize)],
    plan: &Plan,
    lr: f64,
    jitter: Option<(&Normal<f64>, &mut ChaCha8Rng)>,
) -> Result<(f64, usize)> {
    let items: Vec<(Modality, usize)> = batch
        .iter()
        .copied()
        .filter(|&(m, r)| !plan.labels.get(m)[r].is_empty())
        .collect();
    if items.is_empty() {
        return Ok((0.0, 0));
    }
    let inputs: Vec<Array1<f64>> = match jitter {
        Some((dist, rng)) => items
            .iter()
            .map(|&(m, r)| data.get(m).row(r).mapv(|x| x + dist.sample(rng)))
            .collect(),
        None => items
            .iter()
            .map(|&(m, r)| data.get(m).row(r).to_owned())
            .collect(),
    };
    let samples: Vec<BatchSample> = items
        .iter()
        .zip(&inputs)
        .map(|(&(m, r), x)| BatchSample {
            input: x.view(),
            modality: m,
            label: plan.labels.get(m)[r],
            gamma: plan.gammas.get(m)[r],
        })
        .collect();
    let banks = model
        .banks
        .as_mut()
        .expect("banks exist before gradient steps");
    let (report, grads) = loss_gradient(
        &model.encoder,
        &samples,
        banks,
        plan.weights,
        plan.objective,
    )?;
    model.encoder.scaled_add(-lr / items.len() as f64, &grads);
    if !model.encoder.is_finite() {
        return Err(Error::NonFinite(
            "encoder parameters after gradient step".into(),
        ));
    }
    for m in Modality::ALL {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &(im, r) in batch {
            if let (true, Some(y)) = (im == m, plan.bank_labels.get(m)[r]) {
                rows.push(model.encoder.get(m).forward(data.get(m).row(r))?);
                labels.push(y);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let block =
            ndarray::stack(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let bank = banks.get_mut(m);
        bank.update_from_batch(block.view(), &labels)?;
        bank.renormalize()?;
    }
    Ok((report.total, items.len()))
}

fn shuffled_batches(
    data: &UnlabeledView,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<(Modality, usize)>> {
    let mut order: Vec<(Modality, usize)> = Modality::ALL
        .iter()
        .flat_map(|&m| (0..data.get(m).nrows()).map(move |r| (m, r)))
        .collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn run_batches(
    models: &mut [(&mut ModelState, &Plan)],
    data: &UnlabeledView,
    config: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StepLosses>> {
    let batches = shuffled_batches(data, config.batch_size, rng);
    let jitter = (config.jitter_sigma > 0.0)
        .then(|| {
            Normal::new(0.0, config.jitter_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))
        })
        .transpose()?;
    let mut losses: Vec<StepLosses> = models
        .iter()
        .map(|_| StepLosses {
            sum: 0.0,
            count: 0,
            first: None,
            last: 0.0,
        })
        .collect();
    for batch in &batches {
        for ((model, plan), acc) in models.iter_mut().zip(losses.iter_mut()) {
            let j = jitter.as_ref().map(|d| (d, &mut *rng));
            let (sum, n) = batch_step(model, data, batch, plan, lr, j)?;
            if n > 0 {
                let mean = sum / n as f64;
                acc.first.get_or_insert(mean);
                acc.last = mean;
                acc.sum += sum;
                acc.count += n;
            }
        }
    }
    Ok(losses)
}

fn check_input(model: &ModelState, data: &UnlabeledView) -> Result<()> {
    for m in Modality::ALL {
        let x = data.get(m);
        if x.nrows() == 0 {
            return Err(Error::InvalidDataset(format!("no {m} samples")));
        }
        let expected = model.encoder.get(m).input_dim();
        if x.ncols() != expected {
            return Err(Error::Shape(format!(
                "{m} features have {} columns, encoder expects {expected}",
                x.ncols()
            )));
        }
    }
    Ok(())
}

fn counts(a: &PerModality<ClusterAssignment>) -> PerModality<usize> {
    a.map(|_, a| a.cluster_count)
}

/// Cross-entropy training on the model's own cluster labels with fresh
/// banks every epoch. `first_epoch` offsets the noise and shuffle streams.
pub fn warm_up(
    model: &mut ModelState,
    data: &UnlabeledView,
    config: &TrainConfig,
    epochs: usize,
    first_epoch: usize,
) -> Result<Vec<WarmupLog>> {
    config.validate()?;
    check_input(model, data)?;
    let snapshot = model.clone();
    let result: Result<Vec<WarmupLog>> = (first_epoch..first_epoch + epochs)
        .map(|epoch| warm_up_epoch(model, data, config, epoch))
        .collect();
    if result.is_err() {
        *model = snapshot;
    }
    result
}

fn warm_up_epoch(
    model: &mut ModelState,
    data: &UnlabeledView,
    config: &TrainConfig,
    epoch: usize,
) -> Result<WarmupLog> {
    let mut rng = rng_for(config, STREAM_WARMUP, epoch, model.id);
    let features = model.embed(data)?;
    // Injected noise is a diagnostic of the robust phase; warm-up sees the
    // clustering output as is.
    let clustered = cluster_model(&features, config, 0.0, &mut rng)?;
    let banks = refresh_banks(None, &clustered.centers, config)?;
    let (labels, _) = cross_modal_labels(
        &banks,
        &clustered.labels,
        config.ablation.no_ccm_cross_modal,
    )?;
    model.banks = Some(banks);
    let plan = Plan {
        gammas: labels.map(|_, l| vec![1.0; l.len()]),
        bank_labels: clustered.assignment.map(|_, a| a.labels.clone()),
        labels,
        weights: TermWeights::unit(),
        objective: Objective::CrossEntropy,
    };
    let losses = run_batches(&mut [(model, &plan)], data, config, config.lr, &mut rng)?;
    let l = &losses[0];
    Ok(WarmupLog {
        model: model.id,
        epoch,
        cluster_counts: counts(&clustered.assignment),
        first_batch_loss: l.first.unwrap_or(0.0),
        last_batch_loss: l.last,
        mean_loss: if l.count > 0 {
            l.sum / l.count as f64
        } else {
            0.0
        },
    })
}

struct Prepared {
    features: PerModality<Array2<f64>>,
    clustered: Clustered,
    own: PerModality<Vec<TrainLabel>>,
    cross_modal: Option<Matching>,
}

fn prepare(
    model: &mut ModelState,
    data: &UnlabeledView,
    config: &TrainConfig,
    epoch: usize,
) -> Result<Prepared> {
    let mut rng = rng_for(config, STREAM_MAIN, epoch, model.id);
    let features = model.embed(data)?;
    let clustered = cluster_model(&features, config, config.injected_label_noise, &mut rng)?;
    let banks = refresh_banks(model.banks.as_ref(), &clustered.centers, config)?;
    let (own, cross_modal) = cross_modal_labels(
        &banks,
        &clustered.labels,
        config.ablation.no_ccm_cross_modal,
    )?;
    model.banks = Some(banks);
    Ok(Prepared {
        features,
        clustered,
        own,
        cross_modal,
    })
}

fn centers_in(
    space: &PerModality<Array2<f64>>,
    assignment: &PerModality<ClusterAssignment>,
) -> Result<PerModality<Array2<f64>>> {
    PerModality::try_from_fn(|m| cluster_centers(space.get(m).view(), assignment.get(m)))
}

fn build_plan(
    consumer: &ModelState,
    prepared: &Prepared,
    labels: PerModality<Vec<TrainLabel>>,
    config: &TrainConfig,
) -> Result<(Plan, PerModality<Vec<Option<f64>>>)> {
    let banks = consumer.banks.as_ref().expect("banks refreshed in prepare");
    let (diagnostic, gammas) = gammas_for(&prepared.features, &labels, banks, config)?;
    Ok((
        Plan {
            labels,
            bank_labels: prepared.clustered.assignment.map(|_, a| a.labels.clone()),
            gammas,
            weights: config.term_weights(),
            objective: Objective::RobustAdaptive,
        },
        diagnostic,
    ))
}

fn epoch_log(
    model: ModelId,
    prepared: Prepared,
    plan: Plan,
    diagnostic: PerModality<Vec<Option<f64>>>,
    cross_model: Option<PerModality<Matching>>,
    losses: &StepLosses,
) -> ModelEpochLog {
    let labelled_gammas = Modality::ALL.iter().flat_map(|&m| {
        plan.gammas
            .get(m)
            .iter()
            .zip(plan.labels.get(m))
            .filter(|(_, l)| !l.is_empty())
            .map(|(g, _)| *g)
            .collect::<Vec<_>>()
    });
    ModelEpochLog {
        model,
        cluster_counts: counts(&prepared.clustered.assignment),
        clusters: prepared.clustered.assignment.map(|_, a| a.labels.clone()),
        own_labels: prepared.clustered.labels,
        injected: prepared.clustered.injected,
        gamma_stats: GammaStats::of(labelled_gammas),
        consumed: plan.labels,
        diagnostic,
        gammas: plan.gammas,
        cross_modal: prepared.cross_modal,
        cross_model,
        mean_loss: if losses.count > 0 {
            losses.sum / losses.count as f64
        } else {
            0.0
        },
    }
}

/// One main epoch. On error both models are restored to their state at
/// entry.
pub fn train_epoch(
    a: &mut ModelState,
    b: &mut ModelState,
    data: &UnlabeledView,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochLog> {
    let snapshot = (a.clone(), b.clone());
    let result = train_epoch_inner(a, b, data, config, epoch);
    if result.is_err() {
        (*a, *b) = snapshot;
    }
    result
}

fn train_epoch_inner(
    a: &mut ModelState,
    b: &mut ModelState,
    data: &UnlabeledView,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochLog> {
    config.validate()?;
    check_input(a, data)?;
    let lr = learning_rate(config, epoch);
    let mut rng = rng_for(config, STREAM_MAIN, epoch, ModelId::A);
    // Shuffle stream distinct from the one used for noise in `prepare`.
    rng.set_stream(1);

    if !config.dual() {
        let prep = prepare(a, data, config, epoch)?;
        let (plan, diag) = build_plan(a, &prep, prep.own.clone(), config)?;
        let losses = run_batches(&mut [(a, &plan)], data, config, lr, &mut rng)?;
        return Ok(EpochLog {
            epoch,
            lr,
            models: vec![epoch_log(ModelId::A, prep, plan, diag, None, &losses[0])],
        });
    }

    check_input(b, data)?;
    let prep_a = prepare(a, data, config, epoch)?;
    let prep_b = prepare(b, data, config, epoch)?;
    let ablate = config.ablation.no_ccm_cross_model;
    let (joint_a, joint_b) = if ablate {
        (
            prep_a.clustered.centers.clone(),
            prep_b.clustered.centers.clone(),
        )
    } else {
        let joint = joint_embeddings(&prep_a.features, &prep_b.features)?;
        (
            centers_in(&joint, &prep_a.clustered.assignment)?,
            centers_in(&joint, &prep_b.clustered.assignment)?,
        )
    };
    let (for_a, match_ba) = cross_model_labels(&prep_b.own, &joint_b, &joint_a, ablate)?;
    let (for_b, match_ab) = cross_model_labels(&prep_a.own, &joint_a, &joint_b, ablate)?;
    let (plan_a, diag_a) = build_plan(a, &prep_a, for_a, config)?;
    let (plan_b, diag_b) = build_plan(b, &prep_b, for_b, config)?;
    let losses = run_batches(
        &mut [(a, &plan_a), (b, &plan_b)],
        data,
        config,
        lr,
        &mut rng,
    )?;
    Ok(EpochLog {
        epoch,
        lr,
        models: vec![
            epoch_log(ModelId::A, prep_a, plan_a, diag_a, match_ba, &losses[0]),
            epoch_log(ModelId::B, prep_b, plan_b, diag_b, match_ab, &losses[1]),
        ],
    })
}

/// Warm-up followed by `config.epochs` main epochs.
pub fn train(data: &UnlabeledView, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let input_dim = data.visible.ncols();
    let mut a = ModelState::init(ModelId::A, input_dim, config);
    let mut b = ModelState::init(ModelId::B, input_dim, config);
    check_input(&a, data)?;
    let mut log = RunLog::default();
    log.warmup
        .extend(warm_up(&mut a, data, config, config.warmup_epochs, 0)?);
    if config.dual() {
        log.warmup
            .extend(warm_up(&mut b, data, config, config.warmup_epochs, 0)?);
    }
    for epoch in 0..config.epochs {
        let entry = train_epoch(&mut a, &mut b, data, config, epoch)?;
        log::debug!(
            "epoch {epoch}: lr {:.3e}, clusters {:?}, loss {:?}",
            entry.lr,
            entry
                .models
                .iter()
                .map(|m| m.cluster_counts.clone())
                .collect::<Vec<_>>(),
            entry.models.iter().map(|m| m.mean_loss).collect::<Vec<_>>()
        );
        log.epochs.push(entry);
    }
    Ok(TrainOutcome { a, b, log })
}
