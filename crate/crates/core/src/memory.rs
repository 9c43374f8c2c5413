//! Cluster-level memory banks with momentum updates and temperature-scaled
//! class probabilities.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, normalize_rows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    centers: Array2<f64>,
    modality: Modality,
    /// Updating rate: weight kept by the stored center on each update.
    eta: f64,
    /// Softmax temperature.
    tau: f64,
}

impl MemoryBank {
    pub fn new(centers: Array2<f64>, modality: Modality, eta: f64, tau: f64) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::EmptyClusters(
                "memory bank needs at least one center".into(),
            ));
        }
        if !all_finite(centers.iter()) {
            return Err(Error::NonFinite("memory bank center".into()));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidConfig(format!("eta {eta} outside [0, 1]")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau {tau} must be > 0")));
        }
        Ok(MemoryBank {
            centers,
            modality,
            eta,
            tau,
        })
    }

    /// Bank whose centers are the L2-normalized rows of `centers`.
    pub fn from_cluster_centers(
        centers: &Array2<f64>,
        modality: Modality,
        eta: f64,
        tau: f64,
    ) -> Result<Self> {
        MemoryBank::new(normalize_rows(centers)?, modality, eta, tau)
    }

    pub fn centers(&self) -> &Array2<f64> {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.nrows() == 0
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Momentum update `m_j <- eta * m_j + (1 - eta) * mean_j` for each row
    /// with an observed mean; `None` rows stay as they are.
    pub fn update(&mut self, class_means: &[Option<ArrayView1<f64>>]) -> Result<()> {
        if class_means.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} class means for a bank of {} centers",
                class_means.len(),
                self.len()
            )));
        }
        for (j, mean) in class_means.iter().enumerate() {
            if let Some(mean) = mean {
                if mean.len() != self.centers.ncols() {
                    return Err(Error::Shape(format!(
                        "class mean of length {} for centers of length {}",
                        mean.len(),
                        self.centers.ncols()
                    )));
                }
                let eta = self.eta;
                self.centers
                    .row_mut(j)
                    .zip_mut_with(mean, |m, v| *m = eta * *m + (1.0 - eta) * v);
            }
        }
        Ok(())
    }

    /// Momentum update from a block of features and their bank labels.
    pub fn update_from_batch(&mut self, features: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
        let k = self.len();
        let mut sums = Array2::<f64>::zeros((k, self.centers.ncols()));
        let mut counts = vec![0usize; k];
        for (row, &l) in features.outer_iter().zip(labels) {
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, count: k });
            }
            let mut s = sums.row_mut(l);
            s += &row;
            counts[l] += 1;
        }
        let means: Vec<Option<Array1<f64>>> = counts
            .iter()
            .enumerate()
            .map(|(j, &c)| (c > 0).then(|| sums.row(j).mapv(|x| x / c as f64)))
            .collect();
        let views: Vec<Option<ArrayView1<f64>>> =
            means.iter().map(|m| m.as_ref().map(|a| a.view())).collect();
        self.update(&views)
    }

    /// Rescale every center to unit length.
    pub fn renormalize(&mut self) -> Result<()> {
        self.centers = normalize_rows(&self.centers)?;
        Ok(())
    }

    /// Logits `m_k . v / tau` for every center.
    pub fn logits(&self, feature: ArrayView1<f64>) -> Array1<f64> {
        self.centers.dot(&feature) / self.tau
    }

    pub fn class_probabilities(&self, feature: ArrayView1<f64>) -> Array1<f64> {
        softmax(self.logits(feature).view())
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut e = logits.mapv(|x| (x - max).exp());
    let z = e.sum();
    e /= z;
    e
}
