//! Cross-modal retrieval metrics: CMC Rank-k, mAP and mINP.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Modality, PerModality};
use crate::error::{Error, Result};
use crate::linalg::normalize_rows;
use crate::trainer::ModelState;

/// Which model(s) produce retrieval features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Average of both models' embeddings.
    #[default]
    Joint,
    OnlyA,
    OnlyB,
}

/// `0.5 (f_a + f_b)`, unit-normalized; a zero sum stays zero.
pub fn joint_feature(fa: ArrayView1<f64>, fb: ArrayView1<f64>) -> Array1<f64> {
    let avg = (&fa + &fb) * 0.5;
    let n = avg.dot(&avg).sqrt();
    if n > 0.0 {
        avg / n
    } else {
        avg
    }
}

/// Retrieval features for every sample of `dataset`.
pub fn embed_for_eval(
    a: &ModelState,
    b: &ModelState,
    dataset: &Dataset,
    mode: EvalMode,
) -> Result<PerModality<Array2<f64>>> {
    let view = dataset.unlabeled();
    match mode {
        EvalMode::OnlyA => a.embed(&view),
        EvalMode::OnlyB => b.embed(&view),
        EvalMode::Joint => {
            let fa = a.embed(&view)?;
            let fb = b.embed(&view)?;
            PerModality::try_from_fn(|m| normalize_rows(&((fa.get(m) + fb.get(m)) * 0.5)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub query: usize,
    /// Gallery indices by descending similarity, ties by ascending index.
    pub order: Vec<usize>,
    /// Relevance of each entry of `order`.
    pub relevant: Vec<bool>,
}

impl Ranking {
    fn relevant_ranks(&self) -> impl Iterator<Item = usize> + '_ {
        self.relevant
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| i + 1)
    }

    pub fn relevant_count(&self) -> usize {
        self.relevant.iter().filter(|&&r| r).count()
    }
}

pub fn rank_gallery(
    queries: ArrayView2<f64>,
    query_ids: &[usize],
    gallery: ArrayView2<f64>,
    gallery_ids: &[usize],
) -> Result<Vec<Ranking>> {
    if queries.ncols() != gallery.ncols() {
        return Err(Error::Shape(format!(
            "query dim {} vs gallery dim {}",
            queries.ncols(),
            gallery.ncols()
        )));
    }
    if queries.nrows() != query_ids.len() || gallery.nrows() != gallery_ids.len() {
        return Err(Error::Shape(
            "identity list length differs from feature rows".into(),
        ));
    }
    let sims = queries.dot(&gallery.t());
    Ok((0..queries.nrows())
        .into_par_iter()
        .map(|q| {
            let row = sims.row(q);
            let mut order: Vec<usize> = (0..gallery.nrows()).collect();
            order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
            let relevant = order
                .iter()
                .map(|&g| gallery_ids[g] == query_ids[q])
                .collect();
            Ranking {
                query: q,
                order,
                relevant,
            }
        })
        .collect())
}

fn scored(rankings: &[Ranking]) -> impl Iterator<Item = &Ranking> {
    rankings.iter().filter(|r| {
        let keep = r.relevant_count() > 0;
        if !keep {
            log::warn!("query {} has no relevant gallery item; excluded", r.query);
        }
        keep
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Fraction of queries with a relevant item in the top `k`.
pub fn cmc(rankings: &[Ranking], k: usize) -> f64 {
    mean(scored(rankings).map(|r| f64::from(u8::from(r.relevant.iter().take(k).any(|&x| x)))))
}

pub fn average_precision(r: &Ranking) -> f64 {
    let ranks: Vec<usize> = r.relevant_ranks().collect();
    let sum: f64 = ranks
        .iter()
        .enumerate()
        .map(|(i, &rank)| (i + 1) as f64 / rank as f64)
        .sum();
    sum / ranks.len() as f64
}

/// Relevant count over the rank of the last relevant item.
pub fn inverse_negative_penalty(r: &Ranking) -> f64 {
    let last = r.relevant_ranks().last().unwrap_or(usize::MAX);
    r.relevant_count() as f64 / last as f64
}

pub fn map_score(rankings: &[Ranking]) -> f64 {
    mean(scored(rankings).map(average_precision))
}

pub fn minp(rankings: &[Ranking]) -> f64 {
    mean(scored(rankings).map(inverse_negative_penalty))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rank1: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
    pub minp: f64,
    pub queries: usize,
}

impl Metrics {
    pub fn from_rankings(rankings: &[Ranking]) -> Metrics {
        Metrics {
            rank1: cmc(rankings, 1),
            rank10: cmc(rankings, 10),
            rank20: cmc(rankings, 20),
            map: map_score(rankings),
            minp: minp(rankings),
            queries: scored(rankings).count(),
        }
    }
}

/// Metrics for both retrieval directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Infrared queries against a visible gallery (the default direction).
    pub infrared_to_visible: Metrics,
    pub visible_to_infrared: Metrics,
}

pub fn evaluate_features(
    features: &PerModality<Array2<f64>>,
    dataset: &Dataset,
) -> Result<EvalReport> {
    let ids = PerModality::from_fn(|m| dataset.identities(m));
    let direction = |q: Modality| -> Result<Metrics> {
        let g = q.other();
        let r = rank_gallery(
            features.get(q).view(),
            ids.get(q),
            features.get(g).view(),
            ids.get(g),
        )?;
        Ok(Metrics::from_rankings(&r))
    };
    Ok(EvalReport {
        infrared_to_visible: direction(Modality::Infrared)?,
        visible_to_infrared: direction(Modality::Visible)?,
    })
}

pub fn evaluate(
    a: &ModelState,
    b: &ModelState,
    dataset: &Dataset,
    mode: EvalMode,
) -> Result<EvalReport> {
    evaluate_features(&embed_for_eval(a, b, dataset, mode)?, dataset)
}
