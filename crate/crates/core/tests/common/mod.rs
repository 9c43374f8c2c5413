//! Independent reference implementations used as test oracles. They favor
//! obviousness over speed and share no code with the library.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use duoreid_core::data::{Modality, PerModality};
use duoreid_core::encoder::EncoderParams;
use duoreid_core::memory::MemoryBank;
use duoreid_core::objectives::{loss_gradient, BatchSample, Objective, TermWeights, TrainLabel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn unit_rows(m: Array2<f64>) -> Array2<f64> {
    let mut m = m;
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m
}

fn cos(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// DBSCAN by definition: core points are those with at least `min_pts`
/// points (self included) within `eps`; connected components of the core
/// graph are clusters, numbered by their lowest core index; a border point
/// joins the lowest-numbered cluster among its core neighbors.
pub fn brute_dbscan(x: ArrayView2<f64>, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = x.nrows();
    let near = |i: usize, j: usize| 1.0 - cos(x.row(i), x.row(j)) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut number = vec![None; n];
    let mut next = 0;
    let mut labels = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            if number[r].is_none() {
                number[r] = Some(next);
                next += 1;
            }
            labels[i] = number[r];
        }
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = (0..n)
                .filter(|&j| core[j] && near(i, j))
                .filter_map(|j| labels[j])
                .min();
        }
    }
    labels
}

/// Every permutation in lexicographic order; returns the first one reaching
/// the minimum total.
pub fn brute_assignment(cost: ArrayView2<f64>) -> (Vec<usize>, f64) {
    fn rec(
        cost: ArrayView2<f64>,
        row: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<usize>,
        acc: f64,
        best: &mut (Vec<usize>, f64),
    ) {
        let n = cost.nrows();
        if row == n {
            if best.1.is_infinite() || acc < best.1 - 1e-9 * best.1.abs().max(1.0) {
                *best = (cur.clone(), acc);
            }
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                rec(cost, row + 1, used, cur, acc + cost[[row, c]], best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let n = cost.nrows();
    let mut best = (Vec::new(), f64::INFINITY);
    rec(
        cost,
        0,
        &mut vec![false; n],
        &mut Vec::new(),
        0.0,
        &mut best,
    );
    best
}

/// Retrieval metrics recounted from the rank formula
/// `rank(g) = 1 + #{h : s_h > s_g or (s_h = s_g and h < g)}`.
pub struct Recount {
    pub cmc: [f64; 3],
    pub map: f64,
    pub minp: f64,
}

pub fn recount(q: ArrayView2<f64>, qid: &[usize], g: ArrayView2<f64>, gid: &[usize]) -> Recount {
    let ks = [1, 10, 20];
    let mut hits = [0.0; 3];
    let (mut ap, mut inp, mut scored) = (0.0, 0.0, 0usize);
    for (i, query) in q.rows().into_iter().enumerate() {
        let s: Vec<f64> = g.rows().into_iter().map(|row| query.dot(&row)).collect();
        let mut ranks: Vec<usize> = (0..g.nrows())
            .filter(|&j| gid[j] == qid[i])
            .map(|j| {
                1 + (0..g.nrows())
                    .filter(|&h| s[h] > s[j] || (s[h] == s[j] && h < j))
                    .count()
            })
            .collect();
        if ranks.is_empty() {
            continue;
        }
        ranks.sort_unstable();
        scored += 1;
        for (t, k) in ks.iter().enumerate() {
            if ranks[0] <= *k {
                hits[t] += 1.0;
            }
        }
        ap += ranks
            .iter()
            .enumerate()
            .map(|(t, &r)| (t + 1) as f64 / r as f64)
            .sum::<f64>()
            / ranks.len() as f64;
        inp += ranks.len() as f64 / *ranks.last().unwrap() as f64;
    }
    let d = scored.max(1) as f64;
    Recount {
        cmc: hits.map(|h| h / d),
        map: ap / d,
        minp: inp / d,
    }
}

/// A random small loss instance: encoder, banks and a raw batch.
pub struct GradInstance {
    pub encoder: EncoderParams,
    pub banks: PerModality<MemoryBank>,
    pub inputs: Vec<(Array1<f64>, Modality, TrainLabel, f64)>,
    pub weights: TermWeights,
    pub objective: Objective,
}

impl GradInstance {
    pub fn random(seed: u64) -> GradInstance {
        let mut r = rng(seed);
        let input_dim = r.random_range(2..6);
        let out_dim = r.random_range(2..6);
        let hidden = if r.random_bool(0.5) {
            Some(r.random_range(2..6))
        } else {
            None
        };
        let encoder = EncoderParams::init(input_dim, hidden, out_dim, seed);
        let k = PerModality::new(r.random_range(2..6), r.random_range(2..6));
        let tau = r.random_range(0.05..0.5);
        let banks = PerModality::from_fn(|m| {
            let c = unit_rows(gaussian(&mut r, *k.get(m), out_dim));
            MemoryBank::new(c, m, 0.15, tau).unwrap()
        });
        let n = r.random_range(1..6);
        let inputs = (0..n)
            .map(|_| {
                let m = if r.random_bool(0.5) {
                    Modality::Visible
                } else {
                    Modality::Infrared
                };
                let x = gaussian(&mut r, 1, input_dim).row(0).to_owned();
                let label = TrainLabel {
                    intra: r.random_bool(0.8).then(|| r.random_range(0..*k.get(m))),
                    inter: r
                        .random_bool(0.8)
                        .then(|| r.random_range(0..*k.get(m.other()))),
                };
                (x, m, label, r.random_range(0.01..=1.0))
            })
            .collect();
        let lambda = r.random_range(0.0..=1.0);
        GradInstance {
            encoder,
            banks,
            inputs,
            weights: TermWeights::from_lambda(lambda),
            objective: if r.random_bool(0.7) {
                Objective::RobustAdaptive
            } else {
                Objective::CrossEntropy
            },
        }
    }

    fn batch(&self) -> Vec<BatchSample<'_>> {
        self.inputs
            .iter()
            .map(|(x, m, l, g)| BatchSample {
                input: x.view(),
                modality: *m,
                label: *l,
                gamma: *g,
            })
            .collect()
    }

    pub fn loss_at(&self, encoder: &EncoderParams) -> f64 {
        loss_gradient(
            encoder,
            &self.batch(),
            &self.banks,
            self.weights,
            self.objective,
        )
        .unwrap()
        .0
        .total
    }

    /// `||analytic - central FD|| / max(||analytic||, ||FD||)`.
    pub fn relative_error(&self, step: f64) -> f64 {
        let (_, grad) = loss_gradient(
            &self.encoder,
            &self.batch(),
            &self.banks,
            self.weights,
            self.objective,
        )
        .unwrap();
        let analytic = grad.flatten();
        let theta = self.encoder.flatten();
        let mut probe = self.encoder.clone();
        let mut numeric = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] = theta[i] + step;
            probe.assign_flat(&t).unwrap();
            let up = self.loss_at(&probe);
            t[i] = theta[i] - step;
            probe.assign_flat(&t).unwrap();
            let down = self.loss_at(&probe);
            numeric.push((up - down) / (2.0 * step));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        if scale == 0.0 {
            0.0
        } else {
            norm(&diff) / scale
        }
    }
}
