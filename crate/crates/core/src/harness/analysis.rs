//! Diagnostics computed from run logs and ground-truth identities:
//! clean/noisy loss separation, loss histograms, cluster-matching mismatch
//! rates and robust trend slopes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ccm::Matching;
use crate::data::{Dataset, Modality, PerModality};
use crate::error::{Error, Result};
use crate::trainer::{EpochLog, ModelEpochLog, RunLog};

/// Probability that a random noisy loss exceeds a random clean loss (ties
/// count one half). `None` when either group is empty.
pub fn auc(clean: &[f64], noisy: &[f64]) -> Option<f64> {
    if clean.is_empty() || noisy.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = clean
        .iter()
        .map(|&x| (x, false))
        .chain(noisy.iter().map(|&x| (x, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Midranks over tie groups, then the Mann-Whitney statistic.
    let mut rank_sum_noisy = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_noisy += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (n1, n0) = (noisy.len() as f64, clean.len() as f64);
    Some((rank_sum_noisy - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Most frequent identity per cluster (smallest identity on ties).
fn majorities(labels: &[Option<usize>], ids: &[usize]) -> HashMap<usize, usize> {
    let mut counts: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (l, &id) in labels.iter().zip(ids) {
        if let Some(l) = l {
            *counts.entry(*l).or_default().entry(id).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(l, c)| {
            let best = c
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(id, _)| id)
                .expect("counted clusters are non-empty");
            (l, best)
        })
        .collect()
}

/// Loss of one labelled sample and whether its training label points at a
/// cluster dominated by a different identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedLoss {
    pub modality: Modality,
    pub row: usize,
    pub loss: f64,
    pub noisy: bool,
}

pub fn tagged_losses(model: &ModelEpochLog, dataset: &Dataset) -> Result<Vec<TaggedLoss>> {
    let mut out = Vec::new();
    for m in Modality::ALL {
        let ids = dataset.identities(m);
        let clusters = model.clusters.get(m);
        if clusters.len() != ids.len() {
            return Err(Error::Shape(format!(
                "log covers {} {m} samples, dataset has {}",
                clusters.len(),
                ids.len()
            )));
        }
        let majority = majorities(clusters, &ids);
        for (row, (label, loss)) in model
            .consumed
            .get(m)
            .iter()
            .zip(model.diagnostic.get(m))
            .enumerate()
        {
            let (Some(y), Some(loss)) = (label.intra, loss) else {
                continue;
            };
            let Some(&owner) = majority.get(&y) else {
                continue;
            };
            out.push(TaggedLoss {
                modality: m,
                row,
                loss: *loss,
                noisy: owner != ids[row],
            });
        }
    }
    Ok(out)
}

fn epoch_tagged(epoch: &EpochLog, dataset: &Dataset) -> Result<Vec<TaggedLoss>> {
    let mut all = Vec::new();
    for m in &epoch.models {
        all.extend(tagged_losses(m, dataset)?);
    }
    Ok(all)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationPoint {
    pub epoch: usize,
    pub clean: usize,
    pub noisy: usize,
    pub auc: Option<f64>,
}

/// Clean/noisy separation of diagnostic losses per main epoch, pooled over
/// the models that trained.
pub fn loss_separation(log: &RunLog, dataset: &Dataset) -> Result<Vec<SeparationPoint>> {
    if log.epochs.is_empty() {
        return Err(Error::MissingDiagnostics(
            "run log has no main epochs".into(),
        ));
    }
    log.epochs
        .iter()
        .map(|e| {
            let tagged = epoch_tagged(e, dataset)?;
            let (noisy, clean): (Vec<_>, Vec<_>) = tagged.iter().partition(|t| t.noisy);
            let losses = |v: &[&TaggedLoss]| v.iter().map(|t| t.loss).collect::<Vec<_>>();
            Ok(SeparationPoint {
                epoch: e.epoch,
                clean: clean.len(),
                noisy: noisy.len(),
                auc: auc(&losses(&clean), &losses(&noisy)),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub epoch: usize,
    pub lower: f64,
    pub upper: f64,
    pub clean: usize,
    pub noisy: usize,
}

/// Per-epoch histograms of diagnostic losses, min-max normalized per
/// epoch into `bins` equal-width bins.
pub fn loss_histograms(log: &RunLog, dataset: &Dataset, bins: usize) -> Result<Vec<HistogramRow>> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    if log.epochs.is_empty() {
        return Err(Error::MissingDiagnostics(
            "run log has no main epochs".into(),
        ));
    }
    let mut rows = Vec::new();
    for e in &log.epochs {
        let tagged = epoch_tagged(e, dataset)?;
        let lo = tagged.iter().map(|t| t.loss).fold(f64::INFINITY, f64::min);
        let hi = tagged
            .iter()
            .map(|t| t.loss)
            .fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut counts = vec![(0usize, 0usize); bins];
        for t in &tagged {
            let b = (((t.loss - lo) / span * bins as f64) as usize).min(bins - 1);
            if t.noisy {
                counts[b].1 += 1;
            } else {
                counts[b].0 += 1;
            }
        }
        rows.extend(
            counts
                .into_iter()
                .enumerate()
                .map(|(b, (clean, noisy))| HistogramRow {
                    epoch: e.epoch,
                    lower: b as f64 / bins as f64,
                    upper: (b + 1) as f64 / bins as f64,
                    clean,
                    noisy,
                }),
        );
    }
    Ok(rows)
}

/// Fraction of matched pairs whose clusters are dominated by different
/// identities.
pub fn mismatch_rate(
    matching: &Matching,
    p_labels: &[Option<usize>],
    p_ids: &[usize],
    q_labels: &[Option<usize>],
    q_ids: &[usize],
) -> Option<f64> {
    if matching.pairs.is_empty() {
        return None;
    }
    let mp = majorities(p_labels, p_ids);
    let mq = majorities(q_labels, q_ids);
    let wrong = matching
        .pairs
        .iter()
        .filter(|pair| mp.get(&pair.p) != mq.get(&pair.q))
        .count();
    Some(wrong as f64 / matching.pairs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub epoch: usize,
    pub cross_modal: Option<f64>,
    pub cross_model: Option<f64>,
}

fn mean_opt(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-epoch mismatch rates of the cross-modal matchings and of the
/// cross-model matchings, each averaged over models (and modalities).
pub fn mismatch_rates(log: &RunLog, dataset: &Dataset) -> Result<Vec<MismatchRow>> {
    if log.epochs.is_empty() {
        return Err(Error::MissingDiagnostics(
            "run log has no main epochs".into(),
        ));
    }
    let ids = PerModality::from_fn(|m| dataset.identities(m));
    let mut rows = Vec::new();
    for e in &log.epochs {
        let mut modal = Vec::new();
        let mut model = Vec::new();
        for (k, m) in e.models.iter().enumerate() {
            if let Some(mt) = &m.cross_modal {
                modal.extend(mismatch_rate(
                    mt,
                    &m.clusters.visible,
                    &ids.visible,
                    &m.clusters.infrared,
                    &ids.infrared,
                ));
            }
            if let Some(per) = &m.cross_model {
                let producer = &e.models[1 - k];
                for md in Modality::ALL {
                    model.extend(mismatch_rate(
                        per.get(md),
                        producer.clusters.get(md),
                        ids.get(md),
                        m.clusters.get(md),
                        ids.get(md),
                    ));
                }
            }
        }
        rows.push(MismatchRow {
            epoch: e.epoch,
            cross_modal: mean_opt(&modal),
            cross_model: mean_opt(&model),
        });
    }
    if rows
        .iter()
        .all(|r| r.cross_modal.is_none() && r.cross_model.is_none())
    {
        return Err(Error::MissingDiagnostics(
            "run log holds no matching reports".into(),
        ));
    }
    Ok(rows)
}

/// Median of pairwise slopes.
pub fn theil_sen_slope(points: &[(f64, f64)]) -> Option<f64> {
    let mut slopes = Vec::new();
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            if b.0 != a.0 {
                slopes.push((b.1 - a.1) / (b.0 - a.0));
            }
        }
    }
    if slopes.is_empty() {
        return None;
    }
    slopes.sort_by(f64::total_cmp);
    let n = slopes.len();
    Some(if n % 2 == 1 {
        slopes[n / 2]
    } else {
        0.5 * (slopes[n / 2 - 1] + slopes[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccm::MatchPair;

    #[test]
    fn auc_extremes_and_symmetry() {
        assert_eq!(auc(&[0.1, 0.2], &[0.8, 0.9]), Some(1.0));
        assert_eq!(auc(&[0.8, 0.9], &[0.1, 0.2]), Some(0.0));
        assert_eq!(auc(&[0.3, 0.5, 0.7], &[0.3, 0.5, 0.7]), Some(0.5));
        assert_eq!(auc(&[], &[1.0]), None);
    }

    #[test]
    fn auc_matches_pair_count() {
        let clean = [0.1, 0.4, 0.4, 0.9];
        let noisy = [0.4, 0.5, 0.05];
        let mut wins = 0.0;
        for n in noisy {
            for c in clean {
                wins += if n > c {
                    1.0
                } else if n == c {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let expected = wins / 12.0;
        assert!((auc(&clean, &noisy).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_clusters_never_mismatch() {
        let m = Matching {
            p_count: 2,
            q_count: 2,
            pairs: vec![
                MatchPair {
                    p: 0,
                    q: 1,
                    round: 1,
                    cost: 1.0,
                },
                MatchPair {
                    p: 1,
                    q: 0,
                    round: 1,
                    cost: 1.0,
                },
            ],
        };
        let p = [Some(0), Some(0), Some(1)];
        let q = [Some(1), Some(0), Some(0)];
        assert_eq!(mismatch_rate(&m, &p, &[3, 3, 4], &q, &[3, 4, 4]), Some(0.0));
        assert_eq!(mismatch_rate(&m, &p, &[3, 3, 4], &q, &[4, 3, 3]), Some(1.0));
    }

    #[test]
    fn theil_sen_ignores_outlier() {
        let pts: Vec<(f64, f64)> = (0..9).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let mut bent = pts.clone();
        bent[4].1 = 100.0;
        assert_eq!(theil_sen_slope(&pts), Some(2.0));
        assert_eq!(theil_sen_slope(&bent), Some(2.0));
        assert_eq!(theil_sen_slope(&[(1.0, 1.0)]), None);
    }
}
