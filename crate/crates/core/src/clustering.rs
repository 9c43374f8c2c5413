//! Density-based clustering over cosine distance, and cluster centers.
//!
//! Labels are numbered in discovery order: the scan visits samples by
//! ascending index, so cluster 0 holds the lowest-indexed core point. A
//! border point reachable from several clusters joins the one discovered
//! first.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::normalize_rows;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbscanConfig {
    /// Cosine-distance radius.
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig {
            eps: 0.6,
            min_pts: 4,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig("dbscan eps must be > 0".into()));
        }
        if self.min_pts == 0 {
            return Err(Error::InvalidConfig("dbscan min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// `None` marks a noise sample.
    pub labels: Vec<Option<usize>>,
    pub cluster_count: usize,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Members of each cluster, in ascending sample order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(k) = l {
                out[*k].push(i);
            }
        }
        out
    }
}

/// Pairwise cosine distances `1 - cos(u, v)` between rows.
pub fn cosine_distances(features: ArrayView2<f64>) -> Result<Array2<f64>> {
    let unit = normalize_rows(&features.to_owned())?;
    let mut d = unit.dot(&unit.t());
    d.mapv_inplace(|c| 1.0 - c);
    Ok(d)
}

pub fn dbscan(features: ArrayView2<f64>, config: &DbscanConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Shape("dbscan needs at least one sample".into()));
    }
    let dist = cosine_distances(features)?;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[[i, j]] <= config.eps).collect())
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut k = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        if neighbors[i].len() < config.min_pts {
            continue;
        }
        labels[i] = Some(k);
        let mut queue: VecDeque<usize> = neighbors[i].iter().copied().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(k);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            if neighbors[j].len() >= config.min_pts {
                queue.extend(
                    neighbors[j]
                        .iter()
                        .copied()
                        .filter(|&q| !visited[q] || labels[q].is_none()),
                );
            }
        }
        k += 1;
    }
    Ok(ClusterAssignment {
        labels,
        cluster_count: k,
    })
}

/// Row `k` is the mean of the features labeled `k`; noise rows are ignored.
pub fn cluster_centers(
    features: ArrayView2<f64>,
    assignment: &ClusterAssignment,
) -> Result<Array2<f64>> {
    if assignment.cluster_count == 0 {
        return Err(Error::EmptyClusters("assignment has no clusters".into()));
    }
    if assignment.labels.len() != features.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} feature rows",
            assignment.labels.len(),
            features.nrows()
        )));
    }
    let mut sums = Array2::<f64>::zeros((assignment.cluster_count, features.ncols()));
    let mut counts = vec![0usize; assignment.cluster_count];
    for (row, label) in features.axis_iter(Axis(0)).zip(&assignment.labels) {
        if let Some(k) = *label {
            if k >= assignment.cluster_count {
                return Err(Error::LabelOutOfRange {
                    label: k,
                    count: assignment.cluster_count,
                });
            }
            let mut s = sums.row_mut(k);
            s += &row;
            counts[k] += 1;
        }
    }
    for (k, c) in counts.iter().enumerate() {
        if *c == 0 {
            return Err(Error::EmptyClusters(format!("cluster {k} has no members")));
        }
        sums.row_mut(k).mapv_inplace(|x| x / *c as f64);
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Points on the unit circle at the given angles.
    fn rays(angles: &[f64]) -> Array2<f64> {
        let mut m = Array2::zeros((angles.len(), 2));
        for (i, a) in angles.iter().enumerate() {
            m[[i, 0]] = a.cos();
            m[[i, 1]] = a.sin();
        }
        m
    }

    #[test]
    fn two_triples() {
        // angles 0, .1, .2 and 1.0, 1.01, 1.02 rad; within-triple cosine
        // distances <= 1 - cos(0.2) = 0.0199, across >= 1 - cos(0.8) = 0.303
        let f = rays(&[0.0, 0.1, 0.2, 1.0, 1.01, 1.02]);
        let a = dbscan(
            f.view(),
            &DbscanConfig {
                eps: 0.05,
                min_pts: 3,
            },
        )
        .unwrap();
        assert_eq!(a.cluster_count, 2);
        assert_eq!(
            a.labels,
            vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)]
        );
    }

    #[test]
    fn single_point_is_noise() {
        let f = array![[1.0, 2.0]];
        let a = dbscan(
            f.view(),
            &DbscanConfig {
                eps: 0.1,
                min_pts: 2,
            },
        )
        .unwrap();
        assert_eq!(a.cluster_count, 0);
        assert_eq!(a.labels, vec![None]);
    }

    #[test]
    fn identical_points_one_cluster() {
        let f = Array2::from_elem((7, 3), 0.5);
        let a = dbscan(
            f.view(),
            &DbscanConfig {
                eps: 0.01,
                min_pts: 7,
            },
        )
        .unwrap();
        assert_eq!(a.cluster_count, 1);
        assert_eq!(a.noise_count(), 0);
    }

    #[test]
    fn zero_row_rejected() {
        let f = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            dbscan(f.view(), &DbscanConfig::default()),
            Err(Error::ZeroNorm { row: 1 })
        ));
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // 0..3 dense around angle 0, 4..7 dense around angle 0.5, point 8 at
        // 0.25 sits within eps of the edge of both groups but is not core.
        let f = rays(&[0.0, 0.01, 0.02, 0.03, 0.5, 0.49, 0.48, 0.47, 0.25]);
        let eps = 1.0 - (0.225f64).cos();
        let a = dbscan(f.view(), &DbscanConfig { eps, min_pts: 4 }).unwrap();
        assert_eq!(a.cluster_count, 2);
        assert_eq!(a.labels[8], Some(0));
    }

    #[test]
    fn centers_are_means() {
        let f = array![[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let a = ClusterAssignment {
            labels: vec![Some(0), Some(0), Some(1)],
            cluster_count: 2,
        };
        let c = cluster_centers(f.view(), &a).unwrap();
        assert_eq!(c, array![[0.5, 0.5], [5.0, 5.0]]);
    }

    #[test]
    fn noise_rows_do_not_move_centers() {
        let f = array![[1.0, 0.0], [9.0, 9.0], [0.0, 1.0], [3.0, 3.0]];
        let with_noise = ClusterAssignment {
            labels: vec![Some(0), None, Some(0), Some(1)],
            cluster_count: 2,
        };
        let stripped = array![[1.0, 0.0], [0.0, 1.0], [3.0, 3.0]];
        let without = ClusterAssignment {
            labels: vec![Some(0), Some(0), Some(1)],
            cluster_count: 2,
        };
        assert_eq!(
            cluster_centers(f.view(), &with_noise).unwrap(),
            cluster_centers(stripped.view(), &without).unwrap()
        );
    }

    #[test]
    fn empty_assignment_rejected() {
        let f = array![[1.0, 0.0]];
        let a = ClusterAssignment {
            labels: vec![None],
            cluster_count: 0,
        };
        assert!(matches!(
            cluster_centers(f.view(), &a),
            Err(Error::EmptyClusters(_))
        ));
    }
}
