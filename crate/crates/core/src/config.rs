//! Plain-text `key = value` settings files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the same
//! spelling as the command-line flags (`lr`, `min-pts`, `noise-sigma`, ...).
//! Later assignments win, so command-line overrides are applied after the
//! file.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Everything a settings file can configure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub train: TrainConfig,
    pub synth: SynthSpec,
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch-size",
    "lr",
    "lr-decay-factor",
    "lr-decay-period",
    "warmup-epochs",
    "seed-a",
    "seed-b",
    "lambda",
    "eta",
    "tau",
    "mu",
    "sharpening-exponent",
    "gamma-floor",
    "gmm-max-iter",
    "gmm-tol",
    "eps",
    "min-pts",
    "embed-dim",
    "hidden-dim",
    "no-ral-intra",
    "no-ral-inter",
    "no-ccm-cross-modal",
    "no-ccm-cross-model",
    "single-model",
    "fixed-gamma",
    "label-noise",
    "jitter",
];

pub const SYNTH_KEYS: &[&str] = &[
    "identities",
    "samples-per-modality",
    "dim",
    "center-spread",
    "noise-sigma",
    "modality-offset",
    "outlier-fraction",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

/// `none` (any case) maps to `None`.
fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl Settings {
    /// Assign one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synth;
        let v = value.trim();
        match key.trim() {
            "epochs" => t.epochs = parse(key, v)?,
            "batch-size" => t.batch_size = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "lr-decay-factor" => t.lr_decay_factor = parse(key, v)?,
            "lr-decay-period" => t.lr_decay_period = parse(key, v)?,
            "warmup-epochs" => t.warmup_epochs = parse(key, v)?,
            "seed-a" => t.seed_a = parse(key, v)?,
            "seed-b" => t.seed_b = parse(key, v)?,
            "lambda" => t.lambda = parse(key, v)?,
            "eta" => t.eta = parse(key, v)?,
            "tau" => t.tau = parse(key, v)?,
            "mu" => t.ral.mu = parse(key, v)?,
            "sharpening-exponent" => t.ral.sharpening_exponent = parse(key, v)?,
            "gamma-floor" => t.ral.gamma_floor = parse(key, v)?,
            "gmm-max-iter" => t.ral.max_iter = parse(key, v)?,
            "gmm-tol" => t.ral.tol = parse(key, v)?,
            "eps" => t.dbscan.eps = parse(key, v)?,
            "min-pts" => t.dbscan.min_pts = parse(key, v)?,
            "embed-dim" => t.embed_dim = parse(key, v)?,
            "hidden-dim" => t.hidden_dim = parse_opt(key, v)?,
            "no-ral-intra" => t.ablation.no_ral_intra = parse(key, v)?,
            "no-ral-inter" => t.ablation.no_ral_inter = parse(key, v)?,
            "no-ccm-cross-modal" => t.ablation.no_ccm_cross_modal = parse(key, v)?,
            "no-ccm-cross-model" => t.ablation.no_ccm_cross_model = parse(key, v)?,
            "single-model" => t.ablation.single_model = parse(key, v)?,
            "fixed-gamma" => t.fixed_gamma = parse_opt(key, v)?,
            "label-noise" => t.injected_label_noise = parse(key, v)?,
            "jitter" => t.jitter_sigma = parse(key, v)?,
            "identities" => s.identities = parse(key, v)?,
            "samples-per-modality" => s.samples_per_modality = parse(key, v)?,
            "dim" => s.dim = parse(key, v)?,
            "center-spread" => s.center_spread = parse(key, v)?,
            "noise-sigma" => s.noise_sigma = parse(key, v)?,
            "modality-offset" => s.modality_offset = parse(key, v)?,
            "outlier-fraction" => s.outlier_fraction = parse(key, v)?,
            "seed" => s.seed = parse(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Apply every assignment of a settings text; `origin` names the source
    /// in error messages.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| Error::MalformedRecord {
                path: origin.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("expected key = value, got {line:?}")))?;
            self.set(key, value).map_err(|e| malformed(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Apply `key=value` override strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {o:?} is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Render as a settings file that reproduces `self` when applied to
    /// defaults.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.synth;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let pairs: Vec<(&str, String)> = vec![
            ("epochs", t.epochs.to_string()),
            ("batch-size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("lr-decay-factor", t.lr_decay_factor.to_string()),
            ("lr-decay-period", t.lr_decay_period.to_string()),
            ("warmup-epochs", t.warmup_epochs.to_string()),
            ("seed-a", t.seed_a.to_string()),
            ("seed-b", t.seed_b.to_string()),
            ("lambda", t.lambda.to_string()),
            ("eta", t.eta.to_string()),
            ("tau", t.tau.to_string()),
            ("mu", t.ral.mu.to_string()),
            ("sharpening-exponent", t.ral.sharpening_exponent.to_string()),
            ("gamma-floor", t.ral.gamma_floor.to_string()),
            ("gmm-max-iter", t.ral.max_iter.to_string()),
            ("gmm-tol", t.ral.tol.to_string()),
            ("eps", t.dbscan.eps.to_string()),
            ("min-pts", t.dbscan.min_pts.to_string()),
            ("embed-dim", t.embed_dim.to_string()),
            ("hidden-dim", opt(t.hidden_dim.map(|h| h.to_string()))),
            ("no-ral-intra", t.ablation.no_ral_intra.to_string()),
            ("no-ral-inter", t.ablation.no_ral_inter.to_string()),
            (
                "no-ccm-cross-modal",
                t.ablation.no_ccm_cross_modal.to_string(),
            ),
            (
                "no-ccm-cross-model",
                t.ablation.no_ccm_cross_model.to_string(),
            ),
            ("single-model", t.ablation.single_model.to_string()),
            ("fixed-gamma", opt(t.fixed_gamma.map(|g| g.to_string()))),
            ("label-noise", t.injected_label_noise.to_string()),
            ("jitter", t.jitter_sigma.to_string()),
            ("identities", s.identities.to_string()),
            ("samples-per-modality", s.samples_per_modality.to_string()),
            ("dim", s.dim.to_string()),
            ("center-spread", s.center_spread.to_string()),
            ("noise-sigma", s.noise_sigma.to_string()),
            ("modality-offset", s.modality_offset.to_string()),
            ("outlier-fraction", s.outlier_fraction.to_string()),
            ("seed", s.seed.to_string()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
