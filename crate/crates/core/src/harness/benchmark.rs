//! Fixed synthetic benchmarks shared by the test suite, the command line
//! and the documentation.
//!
//! Raw features live in 16 dimensions and are projected to 64, so a
//! random initial projection roughly preserves cosine geometry. The
//! infrared offset of 4 center-spread units is large enough that the
//! untrained joint embedding retrieves poorly, yet small enough that
//! infrared identities remain mostly resolvable by density clustering.

use crate::data::SynthSpec;
use crate::harness::suite::{seed_config, DataSource, SuiteSpec};
use crate::trainer::TrainConfig;

fn base_config() -> TrainConfig {
    let mut c = TrainConfig {
        epochs: 30,
        lr: 0.05,
        lr_decay_period: 20,
        embed_dim: 64,
        ..TrainConfig::default()
    };
    c.dbscan.eps = 0.1;
    c
}

/// 40 identities, 10 samples per modality each, 30% of pseudo-labels
/// flipped after clustering.
pub fn noisy() -> (SynthSpec, TrainConfig) {
    let spec = SynthSpec {
        identities: 40,
        samples_per_modality: 10,
        dim: 16,
        noise_sigma: 0.3,
        modality_offset: 4.0,
        ..SynthSpec::default()
    };
    let config = TrainConfig {
        injected_label_noise: 0.3,
        ..base_config()
    };
    (spec, config)
}

/// 20 identities, 20 samples per modality each, tight identity clusters and
/// no injected noise.
pub fn separable() -> (SynthSpec, TrainConfig) {
    let spec = SynthSpec {
        identities: 20,
        samples_per_modality: 20,
        dim: 16,
        noise_sigma: 0.1,
        modality_offset: 4.0,
        ..SynthSpec::default()
    };
    let config = TrainConfig {
        epochs: 20,
        ..base_config()
    };
    (spec, config)
}

/// The noisy benchmark over the given seeds.
pub fn noisy_suite(seeds: &[u64]) -> SuiteSpec {
    let (spec, config) = noisy();
    SuiteSpec {
        source: DataSource::Synthetic(spec),
        config,
        seeds: seeds.to_vec(),
        output_dir: None,
    }
}

/// Dataset and configuration of one seed of a preset.
pub fn instance(preset: fn() -> (SynthSpec, TrainConfig), seed: u64) -> (SynthSpec, TrainConfig) {
    let (spec, config) = preset();
    (SynthSpec { seed, ..spec }, seed_config(&config, seed))
}
