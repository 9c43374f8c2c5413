//! Cluster consistency matching: align cluster centers of two label spaces
//! (two modalities, or two models) by an exponential-cosine cost
//! assignment, then translate pseudo-labels between the spaces.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::assignment::linear_assignment;
use crate::error::{Error, Result};
use crate::linalg::normalize_rows;

/// Padding cost for rectangular problems; above every real entry (<= e^2).
pub const PAD_COST: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
}

impl CostMatrix {
    /// `S_ij = exp(1 - cos(p_i, q_j))`.
    pub fn from_centers(p: ArrayView2<f64>, q: ArrayView2<f64>) -> Result<Self> {
        if p.ncols() != q.ncols() {
            return Err(Error::Shape(format!(
                "center dimensions differ: {} vs {}",
                p.ncols(),
                q.ncols()
            )));
        }
        let pn = normalize_rows(&p.to_owned())?;
        let qn = normalize_rows(&q.to_owned())?;
        let entries = pn.dot(&qn.t()).mapv(|c| (1.0 - c.clamp(-1.0, 1.0)).exp());
        Ok(CostMatrix { entries })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub p: usize,
    pub q: usize,
    /// 1 for the one-to-one round, 2 for completion of leftovers.
    pub round: u32,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub p_count: usize,
    pub q_count: usize,
    pub pairs: Vec<MatchPair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Translate P labels into Q's index space.
    PToQ,
    QToP,
}

impl Matching {
    /// Counterpart of P-cluster `p`: its round-1 partner if it has one,
    /// otherwise its cheapest later pair.
    pub fn forward(&self, p: usize) -> Option<usize> {
        self.best(|pair| (pair.p == p).then_some(pair.q))
    }

    pub fn backward(&self, q: usize) -> Option<usize> {
        self.best(|pair| (pair.q == q).then_some(pair.p))
    }

    fn best(&self, pick: impl Fn(&MatchPair) -> Option<usize>) -> Option<usize> {
        self.pairs
            .iter()
            .filter_map(|pair| pick(pair).map(|t| (pair.round, pair.cost, t)))
            .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
            .map(|(_, _, t)| t)
    }

    pub fn is_complete(&self) -> bool {
        (0..self.p_count).all(|p| self.forward(p).is_some())
            && (0..self.q_count).all(|q| self.backward(q).is_some())
    }

    pub fn round_one(&self) -> impl Iterator<Item = &MatchPair> {
        self.pairs.iter().filter(|p| p.round == 1)
    }
}

/// Match the rows of `p` to the rows of `q`. Round 1 is a one-to-one
/// assignment over `min(N_p, N_q)` pairs (rectangular costs are padded with
/// [`PAD_COST`]); every cluster left over on the larger side is then paired
/// with its cheapest counterpart on the smaller side.
pub fn match_clusters(p: ArrayView2<f64>, q: ArrayView2<f64>) -> Result<Matching> {
    if p.nrows() == 0 || q.nrows() == 0 {
        return Err(Error::EmptyClusters(format!(
            "cannot match {} clusters against {}",
            p.nrows(),
            q.nrows()
        )));
    }
    let cost = CostMatrix::from_centers(p, q)?;
    let (np, nq) = cost.shape();
    let n = np.max(nq);
    let mut padded = Array2::from_elem((n, n), PAD_COST);
    padded
        .slice_mut(ndarray::s![..np, ..nq])
        .assign(cost.entries());
    let round1 = linear_assignment(padded.view())?;

    let mut pairs = Vec::new();
    let mut p_done = vec![false; np];
    let mut q_done = vec![false; nq];
    for (i, &j) in round1.row_to_col.iter().enumerate() {
        if i < np && j < nq {
            pairs.push(MatchPair {
                p: i,
                q: j,
                round: 1,
                cost: cost.entries[[i, j]],
            });
            p_done[i] = true;
            q_done[j] = true;
        }
    }
    let argmin = |row: ndarray::ArrayView1<f64>| {
        row.iter().enumerate().fold(
            (0, f64::INFINITY),
            |best, (k, &c)| if c < best.1 { (k, c) } else { best },
        )
    };
    for i in (0..np).filter(|&i| !p_done[i]) {
        let (j, c) = argmin(cost.entries.row(i));
        pairs.push(MatchPair {
            p: i,
            q: j,
            round: 2,
            cost: c,
        });
    }
    for j in (0..nq).filter(|&j| !q_done[j]) {
        let (i, c) = argmin(cost.entries.column(j));
        pairs.push(MatchPair {
            p: i,
            q: j,
            round: 2,
            cost: c,
        });
    }
    Ok(Matching {
        p_count: np,
        q_count: nq,
        pairs,
    })
}

/// Translate labels through `matching`; unlabeled (noise) entries stay
/// unlabeled.
pub fn relabel(
    labels: &[Option<usize>],
    matching: &Matching,
    direction: Direction,
) -> Result<Vec<Option<usize>>> {
    labels
        .iter()
        .map(|l| match l {
            None => Ok(None),
            Some(l) => {
                let mapped = match direction {
                    Direction::PToQ => matching.forward(*l),
                    Direction::QToP => matching.backward(*l),
                };
                mapped.map(Some).ok_or(Error::UncoveredLabel(*l))
            }
        })
        .collect()
}
