//! Experiment orchestration and result analysis.

pub mod analysis;
pub mod benchmark;
pub mod export;
pub mod suite;

pub use analysis::{auc, loss_histograms, loss_separation, mismatch_rates, theil_sen_slope};
pub use export::{export_run, read_csv, write_csv};
pub use suite::{
    run_ablation_suite, run_gamma_sweep, run_plan, DataSource, ExperimentPlan, ResultTable,
    RunRecord, RunSpec, SuiteSpec, Variant,
};
