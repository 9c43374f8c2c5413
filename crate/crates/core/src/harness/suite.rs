//! Experiment plans: named training runs, executed independently, each
//! summarized into one serializable record.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalMode, EvalReport};
use crate::harness::analysis::{loss_separation, mismatch_rates, MismatchRow, SeparationPoint};
use crate::trainer::{train, RunLog, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SynthSpec),
    File(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::File(path) => load_dataset(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub source: DataSource,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub runs: Vec<RunSpec>,
    pub output_dir: Option<PathBuf>,
    /// Keep full per-epoch logs in the returned records.
    pub keep_logs: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.runs {
            if !seen.insert(r.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate run name {:?}",
                    r.name
                )));
            }
            r.config.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub joint: EvalReport,
    pub only_a: EvalReport,
    /// Absent for single-model runs.
    pub only_b: Option<EvalReport>,
    pub separation: Vec<SeparationPoint>,
    pub mismatch: Vec<MismatchRow>,
}

impl RunMetrics {
    /// Retrieval report of the features the run is scored with: the joint
    /// embedding for two models, model A alone otherwise.
    pub fn primary(&self) -> &EvalReport {
        if self.only_b.is_some() {
            &self.joint
        } else {
            &self.only_a
        }
    }

    pub fn final_auc(&self) -> Option<f64> {
        self.separation.last().and_then(|s| s.auc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub source: DataSource,
    pub config: TrainConfig,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
    pub log: Option<RunLog>,
}

fn summarize(
    outcome: &TrainOutcome,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<RunMetrics> {
    let dual = config.dual();
    let (a, b) = (&outcome.a, &outcome.b);
    let only_a = evaluate(a, b, dataset, EvalMode::OnlyA)?;
    let (joint, only_b) = if dual {
        (
            evaluate(a, b, dataset, EvalMode::Joint)?,
            Some(evaluate(a, b, dataset, EvalMode::OnlyB)?),
        )
    } else {
        (only_a, None)
    };
    let has_epochs = !outcome.log.epochs.is_empty();
    let separation = if has_epochs {
        loss_separation(&outcome.log, dataset)?
    } else {
        Vec::new()
    };
    let mismatch = if has_epochs {
        mismatch_rates(&outcome.log, dataset).unwrap_or_default()
    } else {
        Vec::new()
    };
    Ok(RunMetrics {
        joint,
        only_a,
        only_b,
        separation,
        mismatch,
    })
}

pub fn execute_run(spec: &RunSpec, keep_log: bool) -> RunRecord {
    let result = spec.source.load().and_then(|dataset| {
        let outcome = train(&dataset.unlabeled(), &spec.config)?;
        let metrics = summarize(&outcome, &dataset, &spec.config)?;
        Ok((metrics, outcome.log))
    });
    let (metrics, error, log) = match result {
        Ok((m, log)) => (Some(m), None, keep_log.then_some(log)),
        Err(e) => {
            log::warn!("run {} failed: {e}", spec.name);
            (None, Some(e.to_string()), None)
        }
    };
    RunRecord {
        name: spec.name.clone(),
        source: spec.source.clone(),
        config: spec.config.clone(),
        metrics,
        error,
        log,
    }
}

fn file_name(run: &str) -> String {
    run.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect::<String>()
        + ".json"
}

pub fn write_record(dir: &Path, record: &RunRecord) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(file_name(&record.name));
    fs::write(&path, serde_json::to_string_pretty(record)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Execute every run (in parallel, results in plan order). A failing run is
/// recorded and does not stop the others.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    let records: Vec<RunRecord> = plan
        .runs
        .par_iter()
        .map(|r| execute_run(r, plan.keep_logs || plan.output_dir.is_some()))
        .collect();
    if let Some(dir) = &plan.output_dir {
        for r in &records {
            write_record(dir, r)?;
        }
    }
    Ok(records)
}

/// Model seeds for repetition `s`: `2s+1` and `2s+2`.
pub fn seed_config(config: &TrainConfig, s: u64) -> TrainConfig {
    TrainConfig {
        seed_a: 2 * s + 1,
        seed_b: 2 * s + 2,
        ..config.clone()
    }
}

/// Seeds for one repetition: data seed `s` (synthetic sources only) and
/// the model seeds of [`seed_config`].
pub fn seeded(source: &DataSource, config: &TrainConfig, s: u64) -> (DataSource, TrainConfig) {
    let source = match source {
        DataSource::Synthetic(spec) => DataSource::Synthetic(SynthSpec {
            seed: s,
            ..spec.clone()
        }),
        other => other.clone(),
    };
    (source, seed_config(config, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoRalIntra,
    NoRalInter,
    NoCcmCrossModel,
    NoCcmCrossModal,
    SingleA,
    SingleB,
    /// Trained as a pair, evaluated with model A's features only.
    PairTestA,
    PairTestB,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::NoRalIntra,
        Variant::NoRalInter,
        Variant::NoCcmCrossModel,
        Variant::NoCcmCrossModal,
        Variant::SingleA,
        Variant::SingleB,
        Variant::PairTestA,
        Variant::PairTestB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRalIntra => "no-ral-intra",
            Variant::NoRalInter => "no-ral-inter",
            Variant::NoCcmCrossModel => "no-ccm-cross-model",
            Variant::NoCcmCrossModal => "no-ccm-cross-modal",
            Variant::SingleA => "single-a",
            Variant::SingleB => "single-b",
            Variant::PairTestA => "pair-test-a",
            Variant::PairTestB => "pair-test-b",
        }
    }

    /// Configuration to train, or `None` when the variant reuses the full
    /// run.
    fn configure(self, base: &TrainConfig) -> Option<TrainConfig> {
        let mut c = base.clone();
        let ab = &mut c.ablation;
        match self {
            Variant::Full => {}
            Variant::NoRalIntra => ab.no_ral_intra = true,
            Variant::NoRalInter => ab.no_ral_inter = true,
            Variant::NoCcmCrossModel => ab.no_ccm_cross_model = true,
            Variant::NoCcmCrossModal => ab.no_ccm_cross_modal = true,
            Variant::SingleA => ab.single_model = true,
            Variant::SingleB => {
                ab.single_model = true;
                std::mem::swap(&mut c.seed_a, &mut c.seed_b);
            }
            Variant::PairTestA | Variant::PairTestB => return None,
        }
        Some(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub source: DataSource,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// Per-seed scores; `None` marks a failed run.
    pub rank1: Vec<Option<f64>>,
    pub map: Vec<Option<f64>>,
    pub minp: Vec<Option<f64>>,
    /// Final-epoch clean/noisy loss AUC per seed, where available.
    pub auc: Vec<Option<f64>>,
}

impl TableRow {
    fn new(label: impl Into<String>) -> Self {
        TableRow {
            label: label.into(),
            rank1: Vec::new(),
            map: Vec::new(),
            minp: Vec::new(),
            auc: Vec::new(),
        }
    }

    fn push(&mut self, report: Option<&EvalReport>, auc: Option<f64>) {
        let m = report.map(|r| r.infrared_to_visible);
        self.rank1.push(m.map(|m| m.rank1));
        self.map.push(m.map(|m| m.map));
        self.minp.push(m.map(|m| m.minp));
        self.auc.push(auc);
    }

    fn mean(v: &[Option<f64>]) -> Option<f64> {
        let ok: Vec<f64> = v.iter().flatten().copied().collect();
        (ok.len() == v.len() && !ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
    }

    /// Mean Rank-1 over seeds; `None` if any seed failed.
    pub fn mean_rank1(&self) -> Option<f64> {
        Self::mean(&self.rank1)
    }

    pub fn mean_map(&self) -> Option<f64> {
        Self::mean(&self.map)
    }

    pub fn mean_minp(&self) -> Option<f64> {
        Self::mean(&self.minp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
    pub records: Vec<RunRecord>,
}

impl ResultTable {
    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Comma-separated table of mean scores (infrared queries).
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut s = String::from("setting,rank1,map,minp\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{}\n",
                r.label,
                fmt(r.mean_rank1()),
                fmt(r.mean_map()),
                fmt(r.mean_minp())
            );
        }
        s
    }
}

fn variant_runs(spec: &SuiteSpec) -> Vec<RunSpec> {
    let mut runs = Vec::new();
    for &s in &spec.seeds {
        let (source, config) = seeded(&spec.source, &spec.config, s);
        for v in Variant::ALL {
            if let Some(c) = v.configure(&config) {
                runs.push(RunSpec {
                    name: format!("{}-seed{s}", v.name()),
                    source: source.clone(),
                    config: c,
                });
            }
        }
    }
    runs
}

/// Full method, each ablation, both single models and the pair evaluated
/// with one model's features, on identical seeds.
pub fn run_ablation_suite(spec: &SuiteSpec) -> Result<ResultTable> {
    let plan = ExperimentPlan {
        runs: variant_runs(spec),
        output_dir: spec.output_dir.clone(),
        keep_logs: false,
    };
    let records = run_plan(&plan)?;
    let find = |name: String| records.iter().find(|r| r.name == name);
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let mut row = TableRow::new(v.name());
        for &s in &spec.seeds {
            let source_variant = match v {
                Variant::PairTestA | Variant::PairTestB => Variant::Full,
                other => other,
            };
            let rec = find(format!("{}-seed{s}", source_variant.name()));
            let metrics = rec.and_then(|r| r.metrics.as_ref());
            let report = metrics.and_then(|m| match v {
                Variant::PairTestA => Some(&m.only_a),
                Variant::PairTestB => m.only_b.as_ref(),
                _ => Some(m.primary()),
            });
            row.push(report, metrics.and_then(|m| m.final_auc()));
        }
        rows.push(row);
    }
    Ok(ResultTable { rows, records })
}

/// One run per fixed exponent plus one adaptive run, per seed.
pub fn run_gamma_sweep(spec: &SuiteSpec, gammas: &[f64]) -> Result<ResultTable> {
    if gammas.is_empty() {
        return Err(Error::InvalidConfig(
            "gamma sweep needs at least one value".into(),
        ));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0 && g <= 1.0)) {
        return Err(Error::InvalidConfig(format!("gamma {g} outside (0, 1]")));
    }
    let settings: Vec<(String, Option<f64>)> = gammas
        .iter()
        .map(|&g| (format!("gamma={g}"), Some(g)))
        .chain(std::iter::once(("adaptive".to_string(), None)))
        .collect();
    let mut runs = Vec::new();
    for &s in &spec.seeds {
        let (source, config) = seeded(&spec.source, &spec.config, s);
        for (label, g) in &settings {
            runs.push(RunSpec {
                name: format!("{label}-seed{s}"),
                source: source.clone(),
                config: TrainConfig {
                    fixed_gamma: *g,
                    ..config.clone()
                },
            });
        }
    }
    let plan = ExperimentPlan {
        runs,
        output_dir: spec.output_dir.clone(),
        keep_logs: false,
    };
    let records = run_plan(&plan)?;
    let rows = settings
        .iter()
        .map(|(label, _)| {
            let mut row = TableRow::new(label.clone());
            for &s in &spec.seeds {
                let m = records
                    .iter()
                    .find(|r| r.name == format!("{label}-seed{s}"))
                    .and_then(|r| r.metrics.as_ref());
                row.push(m.map(|m| m.primary()), m.and_then(|m| m.final_auc()));
            }
            row
        })
        .collect();
    Ok(ResultTable { rows, records })
}
