//! Adaptive per-sample exponents: a two-component Gaussian mixture over
//! per-sample losses separates a low-loss (clean) component from a
//! high-loss (noisy) one, and the clean posterior `w` is sharpened into
//! `gamma = ln((1 - w)^0.25 / mu + 1)`, clamped to `[floor, 1]`.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RalConfig {
    /// Scale `mu` of the sharpening rule.
    pub mu: f64,
    pub sharpening_exponent: f64,
    pub gamma_floor: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RalConfig {
    fn default() -> Self {
        RalConfig {
            // gamma(w = 0) = ln(e - 1 + 1) = 1
            mu: 1.0 / (E - 1.0),
            sharpening_exponent: 0.25,
            gamma_floor: 0.01,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

impl RalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu {} must be > 0", self.mu)));
        }
        if !(self.gamma_floor > 0.0 && self.gamma_floor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma floor {} outside (0, 1)",
                self.gamma_floor
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig(
                "gmm max iterations must be >= 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("gmm tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Two-component 1-D mixture; component 0 has the lower mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
}

impl GmmParams {
    fn log_joint(&self, x: f64) -> [f64; 2] {
        [0, 1].map(|k| {
            let v = self.variances[k];
            self.weights[k].ln()
                - 0.5 * (2.0 * PI * v).ln()
                - (x - self.means[k]).powi(2) / (2.0 * v)
        })
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| log_sum_exp(self.log_joint(x))).sum()
    }

    fn ordered(mut self) -> Self {
        if self.means[1] < self.means[0] {
            self.means.swap(0, 1);
            self.variances.swap(0, 1);
            self.weights.swap(0, 1);
        }
        self
    }
}

fn log_sum_exp(v: [f64; 2]) -> f64 {
    let m = v[0].max(v[1]);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((v[0] - m).exp() + (v[1] - m).exp()).ln()
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn fit_gmm_2(losses: &[f64], config: &RalConfig) -> Result<GmmParams> {
    fit_gmm_2_traced(losses, config).map(|(p, _)| p)
}

/// EM fit plus the log-likelihood after initialization and after every
/// M-step.
pub fn fit_gmm_2_traced(losses: &[f64], config: &RalConfig) -> Result<(GmmParams, Vec<f64>)> {
    config.validate()?;
    if losses.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("loss fed to mixture fit".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) else {
        return Err(Error::DegenerateLosses);
    };
    if !(hi > lo) {
        return Err(Error::DegenerateLosses);
    }

    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = (losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);
    let (mut m0, mut m1) = (percentile(&sorted, 0.25), percentile(&sorted, 0.75));
    if !(m1 > m0) {
        (m0, m1) = (lo, hi);
    }
    let mut params = GmmParams {
        means: [m0, m1],
        variances: [var, var],
        weights: [0.5, 0.5],
    };

    let mut trace = vec![params.log_likelihood(losses)];
    let mut resp = vec![[0.0f64; 2]; losses.len()];
    for _ in 0..config.max_iter {
        for (r, &x) in resp.iter_mut().zip(losses) {
            let lj = params.log_joint(x);
            let z = log_sum_exp(lj);
            *r = [(lj[0] - z).exp(), (lj[1] - z).exp()];
        }
        let mut next = params;
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk <= f64::MIN_POSITIVE {
                continue;
            }
            let mu = resp.iter().zip(losses).map(|(r, x)| r[k] * x).sum::<f64>() / nk;
            let v = resp
                .iter()
                .zip(losses)
                .map(|(r, x)| r[k] * (x - mu).powi(2))
                .sum::<f64>()
                / nk;
            next.means[k] = mu;
            next.variances[k] = v.max(VARIANCE_FLOOR);
            next.weights[k] = nk / n;
        }
        let wsum = next.weights[0] + next.weights[1];
        next.weights = [next.weights[0] / wsum, next.weights[1] / wsum];
        params = next;
        let ll = params.log_likelihood(losses);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if (ll - prev).abs() < config.tol {
            break;
        }
    }
    Ok((params.ordered(), trace))
}

/// Posterior probability of the lower-mean (clean) component.
pub fn clean_posterior(gmm: &GmmParams, loss: f64) -> f64 {
    let lj = gmm.log_joint(loss);
    (lj[0] - log_sum_exp(lj)).exp()
}

pub fn gamma_from_posterior(w: f64, config: &RalConfig) -> f64 {
    let w = w.clamp(0.0, 1.0);
    let raw = ((1.0 - w).powf(config.sharpening_exponent) / config.mu + 1.0).ln();
    raw.clamp(config.gamma_floor, 1.0)
}

/// Per-sample exponents derived from one (model, modality) loss vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGammas {
    pub gammas: Vec<f64>,
    pub posteriors: Vec<f64>,
    /// `None` when the losses were degenerate and the floor was used.
    pub gmm: Option<GmmParams>,
}

/// Min-max normalize `losses` to `[0, 1]`, fit the mixture and sharpen the
/// posteriors. Degenerate inputs fall back to `gamma = floor` everywhere.
pub fn adaptive_gammas(losses: &[f64], config: &RalConfig) -> Result<AdaptiveGammas> {
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized: Vec<f64> = if hi > lo {
        losses.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; losses.len()]
    };
    match fit_gmm_2(&normalized, config) {
        Ok(gmm) => {
            let posteriors: Vec<f64> = normalized
                .iter()
                .map(|&x| clean_posterior(&gmm, x))
                .collect();
            let gammas = posteriors
                .iter()
                .map(|&w| gamma_from_posterior(w, config))
                .collect();
            Ok(AdaptiveGammas {
                gammas,
                posteriors,
                gmm: Some(gmm),
            })
        }
        Err(Error::DegenerateLosses) => Ok(AdaptiveGammas {
            gammas: vec![config.gamma_floor; losses.len()],
            posteriors: vec![1.0; losses.len()],
            gmm: None,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_clusters_recovered() {
        let losses = [0.09, 0.10, 0.11, 0.89, 0.90, 0.91];
        let g = fit_gmm_2(&losses, &RalConfig::default()).unwrap();
        assert!((g.means[0] - 0.10).abs() < 0.02);
        assert!((g.means[1] - 0.90).abs() < 0.02);
    }

    #[test]
    fn two_point_fixed_point() {
        let g = fit_gmm_2(&[0.0, 1.0], &RalConfig::default()).unwrap();
        assert!(g.means[0].abs() < 1e-9 && (g.means[1] - 1.0).abs() < 1e-9);
        assert!((g.weights[0] - 0.5).abs() < 1e-9 && (g.weights[1] - 0.5).abs() < 1e-9);
        assert_eq!(g.variances, [VARIANCE_FLOOR, VARIANCE_FLOOR]);
    }

    #[test]
    fn all_equal_is_degenerate() {
        assert!(matches!(
            fit_gmm_2(&[0.4, 0.4, 0.4], &RalConfig::default()),
            Err(Error::DegenerateLosses)
        ));
        let a = adaptive_gammas(&[2.0, 2.0], &RalConfig::default()).unwrap();
        assert_eq!(a.gammas, vec![0.01, 0.01]);
        assert!(a.gmm.is_none());
    }

    fn separated() -> GmmParams {
        GmmParams {
            means: [0.1, 0.9],
            variances: [0.01, 0.01],
            weights: [0.5, 0.5],
        }
    }

    #[test]
    fn posterior_extremes_and_midpoint() {
        let g = separated();
        assert!(clean_posterior(&g, 0.1) > 0.99);
        assert!(clean_posterior(&g, 0.9) < 0.01);
        assert!((clean_posterior(&g, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gamma_rule_values() {
        let c = RalConfig::default();
        assert!((c.mu - 0.581977).abs() < 1e-6);
        assert!((gamma_from_posterior(0.0, &c) - 1.0).abs() < 1e-12);
        assert_eq!(gamma_from_posterior(1.0, &c), c.gamma_floor);
        let w = 1.0 - 0.2f64.powi(4);
        let expected = (0.2 * (E - 1.0) + 1.0).ln();
        assert!((gamma_from_posterior(w, &c) - expected).abs() < 1e-12);
        assert!((expected - 0.29539).abs() < 1e-5);
    }

    #[test]
    fn config_validation() {
        let bad = RalConfig {
            mu: 0.0,
            ..RalConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RalConfig {
            gamma_floor: 1.0,
            ..RalConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn gamma_monotone_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let c = RalConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(gamma_from_posterior(lo, &c) >= gamma_from_posterior(hi, &c));
        }

        #[test]
        fn log_likelihood_never_decreases(xs in proptest::collection::vec(0.0f64..1.0, 3..60)) {
            prop_assume!(xs.iter().any(|&x| x != xs[0]));
            let (_, trace) = fit_gmm_2_traced(&xs, &RalConfig { tol: 1e-12, ..RalConfig::default() }).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
            }
        }

        #[test]
        fn posteriors_in_unit_interval(x in -2.0f64..3.0) {
            let w = clean_posterior(&separated(), x);
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }
}
