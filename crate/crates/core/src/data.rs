//! Samples, datasets, the synthetic two-modality generator and the
//! line-delimited record format.
//!
//! Each record is one JSON object per line:
//!
//! ```text
//! {"identity":3,"modality":"V","feature":[0.25,-1.5,0.0]}
//! ```
//!
//! Identities travel with the data but only evaluation and diagnostic code
//! may read them; the trainer works from [`UnlabeledView`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "V")]
    Visible,
    #[serde(rename = "I")]
    Infrared,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visible, Modality::Infrared];

    pub fn other(self) -> Modality {
        match self {
            Modality::Visible => Modality::Infrared,
            Modality::Infrared => Modality::Visible,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Modality::Visible => 0,
            Modality::Infrared => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visible => "V",
            Modality::Infrared => "I",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One value per modality.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerModality<T> {
    pub visible: T,
    pub infrared: T,
}

impl<T> PerModality<T> {
    pub fn new(visible: T, infrared: T) -> Self {
        PerModality { visible, infrared }
    }

    pub fn from_fn(mut f: impl FnMut(Modality) -> T) -> Self {
        let visible = f(Modality::Visible);
        let infrared = f(Modality::Infrared);
        PerModality { visible, infrared }
    }

    pub fn try_from_fn<E>(
        mut f: impl FnMut(Modality) -> std::result::Result<T, E>,
    ) -> std::result::Result<Self, E> {
        let visible = f(Modality::Visible)?;
        let infrared = f(Modality::Infrared)?;
        Ok(PerModality { visible, infrared })
    }

    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::Visible => &self.visible,
            Modality::Infrared => &self.infrared,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut T {
        match m {
            Modality::Visible => &mut self.visible,
            Modality::Infrared => &mut self.infrared,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Modality, &T) -> U) -> PerModality<U> {
        PerModality {
            visible: f(Modality::Visible, &self.visible),
            infrared: f(Modality::Infrared, &self.infrared),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub identity: usize,
    pub modality: Modality,
    pub feature: Vec<f64>,
}

/// An immutable collection of samples sharing one feature dimension, with
/// at least one sample per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        };
        let dim = first.feature.len();
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension is zero".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.feature.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has dimension {}, expected {dim}",
                    s.feature.len()
                )));
            }
            if !s.feature.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has a non-finite feature"
                )));
            }
        }
        for m in Modality::ALL {
            if !samples.iter().any(|s| s.modality == m) {
                return Err(Error::InvalidDataset(format!("no samples of modality {m}")));
            }
        }
        Ok(Dataset { samples, dim })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.samples
            .iter()
            .filter(|s| s.modality == modality)
            .count()
    }

    fn of(&self, modality: Modality) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.modality == modality)
    }

    /// Feature matrix of one modality, rows in dataset order.
    pub fn features(&self, modality: Modality) -> Array2<f64> {
        let rows: Vec<f64> = self
            .of(modality)
            .flat_map(|s| s.feature.iter().copied())
            .collect();
        Array2::from_shape_vec((rows.len() / self.dim, self.dim), rows)
            .expect("rows share the dataset dimension")
    }

    /// Ground-truth identities of one modality, aligned with [`Dataset::features`].
    pub fn identities(&self, modality: Modality) -> Vec<usize> {
        self.of(modality).map(|s| s.identity).collect()
    }

    pub fn unlabeled(&self) -> UnlabeledView {
        PerModality::from_fn(|m| self.features(m))
    }

    /// Keep only samples whose identity satisfies `keep`.
    pub fn filter_identities(&self, keep: impl Fn(usize) -> bool) -> Result<Dataset> {
        Dataset::new(
            self.samples
                .iter()
                .filter(|s| keep(s.identity))
                .cloned()
                .collect(),
        )
    }
}

/// Label-free per-modality feature matrices handed to the trainer.
pub type UnlabeledView = PerModality<Array2<f64>>;

/// Parameters of the synthetic two-modality generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub identities: usize,
    pub samples_per_modality: usize,
    pub dim: usize,
    pub center_spread: f64,
    pub noise_sigma: f64,
    pub modality_offset: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            identities: 20,
            samples_per_modality: 10,
            dim: 32,
            center_spread: 1.0,
            noise_sigma: 0.3,
            modality_offset: 1.0,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.identities == 0 {
            return bad("identities must be >= 1");
        }
        if self.samples_per_modality == 0 {
            return bad("samples per modality must be >= 1");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if !(self.center_spread > 0.0 && self.center_spread.is_finite()) {
            return bad("center spread must be > 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be >= 0");
        }
        if !(self.modality_offset >= 0.0 && self.modality_offset.is_finite()) {
            return bad("modality offset must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad("outlier fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Latent quantities behind a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub centers: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    /// Per-sample outlier flag, aligned with `Dataset::samples`.
    pub outlier: Vec<bool>,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    generate_synthetic_with_truth(spec).map(|(d, _)| d)
}

/// Samples are emitted visible-first, identity-major within a modality.
/// Infrared samples carry one offset vector shared by every identity.
pub fn generate_synthetic_with_truth(spec: &SynthSpec) -> Result<(Dataset, SyntheticTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spread = Normal::new(0.0, spec.center_spread).expect("validated spread");

    let centers: Vec<Vec<f64>> = (0..spec.identities)
        .map(|_| (0..spec.dim).map(|_| spread.sample(&mut rng)).collect())
        .collect();

    let direction: Vec<f64> = (0..spec.dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let dnorm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    let offset: Vec<f64> = if dnorm > 0.0 {
        direction
            .iter()
            .map(|x| x / dnorm * spec.modality_offset)
            .collect()
    } else {
        vec![0.0; spec.dim]
    };

    let mut samples = Vec::with_capacity(2 * spec.identities * spec.samples_per_modality);
    let mut outlier = Vec::with_capacity(samples.capacity());
    for modality in Modality::ALL {
        for (identity, center) in centers.iter().enumerate() {
            for _ in 0..spec.samples_per_modality {
                let is_outlier =
                    spec.outlier_fraction > 0.0 && rng.random::<f64>() < spec.outlier_fraction;
                let mut feature: Vec<f64> = if is_outlier {
                    (0..spec.dim).map(|_| spread.sample(&mut rng)).collect()
                } else {
                    center
                        .iter()
                        .map(|c| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            c + spec.noise_sigma * z
                        })
                        .collect()
                };
                if modality == Modality::Infrared {
                    for (f, o) in feature.iter_mut().zip(&offset) {
                        *f += o;
                    }
                }
                samples.push(Sample {
                    identity,
                    modality,
                    feature,
                });
                outlier.push(is_outlier);
            }
        }
    }

    // Emit in random order: DBSCAN numbers clusters by first visit, so an
    // identity-sorted file would leak identities into cluster indices.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let samples: Vec<Sample> = order
        .iter()
        .map(|&i| slots[i].take().expect("permutation"))
        .collect();
    let outlier: Vec<bool> = order.iter().map(|&i| outlier[i]).collect();

    let dataset = Dataset::new(samples)?;
    Ok((
        dataset,
        SyntheticTruth {
            centers,
            offset,
            outlier,
        },
    ))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: line_no,
            reason: e.to_string(),
        })?;
        match dim {
            None => dim = Some(sample.feature.len()),
            Some(expected) if expected != sample.feature.len() => {
                return Err(Error::DimensionMismatch {
                    path: path.to_path_buf(),
                    line: line_no,
                    expected,
                    found: sample.feature.len(),
                });
            }
            Some(_) => {}
        }
        samples.push(sample);
    }
    Dataset::new(samples)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in dataset.samples() {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn zero_noise_pairs_differ_by_offset() {
        let spec = SynthSpec {
            identities: 2,
            samples_per_modality: 1,
            dim: 5,
            noise_sigma: 0.0,
            modality_offset: 0.7,
            ..SynthSpec::default()
        };
        let (d, truth) = generate_synthetic_with_truth(&spec).unwrap();
        assert_eq!(d.len(), 4);
        let v = d.features(Modality::Visible);
        let i = d.features(Modality::Infrared);
        for id in 0..2 {
            for k in 0..5 {
                assert!((i[[id, k]] - v[[id, k]] - truth.offset[k]).abs() < 1e-12);
            }
        }
        let n: f64 = truth.offset.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 0.7).abs() < 1e-12);
    }

    #[test]
    fn no_noise_no_offset_collapses_identity() {
        let spec = SynthSpec {
            identities: 3,
            samples_per_modality: 4,
            noise_sigma: 0.0,
            modality_offset: 0.0,
            ..SynthSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        for s in d.samples() {
            let first = d
                .samples()
                .iter()
                .find(|t| t.identity == s.identity)
                .unwrap();
            assert_eq!(s.feature, first.feature);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec {
            outlier_fraction: 0.2,
            seed: 99,
            ..SynthSpec::default()
        };
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
        let other = SynthSpec { seed: 100, ..spec };
        assert_ne!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn inlier_noise_bounded_over_seeds() {
        for seed in 0..100 {
            let spec = SynthSpec {
                identities: 5,
                samples_per_modality: 5,
                dim: 8,
                noise_sigma: 0.2,
                seed,
                ..SynthSpec::default()
            };
            let (d, truth) = generate_synthetic_with_truth(&spec).unwrap();
            for s in d.samples() {
                let c = &truth.centers[s.identity];
                for k in 0..spec.dim {
                    let shift = if s.modality == Modality::Infrared {
                        truth.offset[k]
                    } else {
                        0.0
                    };
                    assert!((s.feature[k] - c[k] - shift).abs() <= 6.0 * spec.noise_sigma);
                }
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SynthSpec {
            outlier_fraction: 1.5,
            ..SynthSpec::default()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::InvalidConfig(_))
        ));
        let spec = SynthSpec {
            identities: 0,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn load_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"identity\":0,\"modality\":\"V\",\"feature\":[1.0,2.0,3.0]}\n\
             {\"identity\":0,\"modality\":\"I\",\"feature\":[1.5,2.0,3.0]}\n",
        );
        let d = load_dataset(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 3);
    }

    #[test]
    fn load_dimension_mismatch_names_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"identity\":0,\"modality\":\"V\",\"feature\":[1,2,3,4]}\n\
             {\"identity\":0,\"modality\":\"I\",\"feature\":[1,2,3]}\n",
        );
        match load_dataset(&p) {
            Err(Error::DimensionMismatch {
                line,
                expected,
                found,
                ..
            }) => {
                assert_eq!((line, expected, found), (2, 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_malformed_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"identity\":0,\"modality\":\"V\",\"feature\":[1]}\n\nnot json\n",
        );
        match load_dataset(&p) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_single_modality_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"identity\":0,\"modality\":\"V\",\"feature\":[1]}\n\
             {\"identity\":1,\"modality\":\"V\",\"feature\":[2]}\n",
        );
        assert!(matches!(load_dataset(&p), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn empty_dataset_refused() {
        assert!(matches!(
            Dataset::new(vec![]),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn save_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "garbage that is much longer than what follows\n"
                .repeat(50)
                .as_str(),
        );
        let d = generate_synthetic(&SynthSpec {
            identities: 2,
            samples_per_modality: 2,
            dim: 3,
            ..SynthSpec::default()
        })
        .unwrap();
        save_dataset(&d, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);
    }
}
