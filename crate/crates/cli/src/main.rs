use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use duoreid_core::checkpoint::Checkpoint;
use duoreid_core::config::Settings;
use duoreid_core::data::{generate_synthetic, save_dataset, Dataset};
use duoreid_core::evaluation::{evaluate, EvalMode, EvalReport};
use duoreid_core::harness::benchmark;
use duoreid_core::harness::export::export_run;
use duoreid_core::harness::{
    run_ablation_suite, run_gamma_sweep, DataSource, ResultTable, SuiteSpec,
};
use duoreid_core::trainer::{train, RunLog};

#[derive(Parser)]
#[command(
    name = "duoreid",
    version,
    about = "Co-trained visible-infrared re-identification on feature vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-modality dataset.
    Generate {
        #[command(flatten)]
        settings: SettingsArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model pair and write checkpoint, run log and metrics.
    Train {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_enum, default_value = "joint")]
        mode: ModeArg,
        /// Metrics file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full method and every ablation on the same seeds.
    Ablate {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Compare fixed exponents against the adaptive rule.
    SweepGamma {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
        )]
        gammas: Vec<f64>,
    },
    /// Loss histograms, clean/noisy separation, mismatch rates and matching
    /// reports of a saved run log.
    Export {
        #[arg(long)]
        run_log: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    A,
    B,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Joint => EvalMode::Joint,
            ModeArg::A => EvalMode::OnlyA,
            ModeArg::B => EvalMode::OnlyB,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Noisy,
    Separable,
}

#[derive(Args)]
struct SourceArgs {
    /// Line-delimited dataset; synthetic data from the settings otherwise.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Per-run records and the summary table go here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Settings resolved in order: preset, config file, individual flags,
/// `--set` assignments.
#[derive(Args)]
struct SettingsArgs {
    /// Start from a benchmark preset instead of the library defaults.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Plain-text key = value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value assignment, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    lr_decay_period: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    seed_a: Option<u64>,
    #[arg(long)]
    seed_b: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sharpening_exponent: Option<f64>,
    #[arg(long)]
    gamma_floor: Option<f64>,
    #[arg(long)]
    gmm_max_iter: Option<usize>,
    #[arg(long)]
    gmm_tol: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Hidden width, or `none` for an affine encoder.
    #[arg(long)]
    hidden_dim: Option<String>,
    #[arg(long)]
    no_ral_intra: bool,
    #[arg(long)]
    no_ral_inter: bool,
    #[arg(long)]
    no_ccm_cross_modal: bool,
    #[arg(long)]
    no_ccm_cross_model: bool,
    #[arg(long)]
    single_model: bool,
    /// One exponent for all samples, or `none` for the adaptive rule.
    #[arg(long)]
    fixed_gamma: Option<String>,
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,

    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    samples_per_modality: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    center_spread: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    modality_offset: Option<f64>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SettingsArgs {
    fn flag_overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{k}={v}"));
            }
        };
        let s = |v: &Option<String>| v.clone();
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch-size", self.batch_size.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put(
            "lr-decay-factor",
            self.lr_decay_factor.map(|v| v.to_string()),
        );
        put(
            "lr-decay-period",
            self.lr_decay_period.map(|v| v.to_string()),
        );
        put("warmup-epochs", self.warmup_epochs.map(|v| v.to_string()));
        put("seed-a", self.seed_a.map(|v| v.to_string()));
        put("seed-b", self.seed_b.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("eta", self.eta.map(|v| v.to_string()));
        put("tau", self.tau.map(|v| v.to_string()));
        put("mu", self.mu.map(|v| v.to_string()));
        put(
            "sharpening-exponent",
            self.sharpening_exponent.map(|v| v.to_string()),
        );
        put("gamma-floor", self.gamma_floor.map(|v| v.to_string()));
        put("gmm-max-iter", self.gmm_max_iter.map(|v| v.to_string()));
        put("gmm-tol", self.gmm_tol.map(|v| v.to_string()));
        put("eps", self.eps.map(|v| v.to_string()));
        put("min-pts", self.min_pts.map(|v| v.to_string()));
        put("embed-dim", self.embed_dim.map(|v| v.to_string()));
        put("hidden-dim", s(&self.hidden_dim));
        put("no-ral-intra", self.no_ral_intra.then(|| "true".into()));
        put("no-ral-inter", self.no_ral_inter.then(|| "true".into()));
        put(
            "no-ccm-cross-modal",
            self.no_ccm_cross_modal.then(|| "true".into()),
        );
        put(
            "no-ccm-cross-model",
            self.no_ccm_cross_model.then(|| "true".into()),
        );
        put("single-model", self.single_model.then(|| "true".into()));
        put("fixed-gamma", s(&self.fixed_gamma));
        put("label-noise", self.label_noise.map(|v| v.to_string()));
        put("jitter", self.jitter.map(|v| v.to_string()));
        put("identities", self.identities.map(|v| v.to_string()));
        put(
            "samples-per-modality",
            self.samples_per_modality.map(|v| v.to_string()),
        );
        put("dim", self.dim.map(|v| v.to_string()));
        put("center-spread", self.center_spread.map(|v| v.to_string()));
        put("noise-sigma", self.noise_sigma.map(|v| v.to_string()));
        put(
            "modality-offset",
            self.modality_offset.map(|v| v.to_string()),
        );
        put(
            "outlier-fraction",
            self.outlier_fraction.map(|v| v.to_string()),
        );
        put("seed", self.seed.map(|v| v.to_string()));
        out
    }

    fn resolve(&self) -> Result<Settings> {
        let mut settings = match self.preset {
            None => Settings::default(),
            Some(p) => {
                let (synth, train) = match p {
                    Preset::Noisy => benchmark::noisy(),
                    Preset::Separable => benchmark::separable(),
                };
                Settings { train, synth }
            }
        };
        if let Some(path) = &self.config {
            settings.apply_file(path)?;
        }
        settings.apply_overrides(&self.flag_overrides())?;
        settings.apply_overrides(&self.set)?;
        settings.train.validate()?;
        Ok(settings)
    }
}

fn source(args: &SourceArgs, settings: &Settings) -> DataSource {
    match &args.dataset {
        Some(p) => DataSource::File(p.clone()),
        None => DataSource::Synthetic(settings.synth.clone()),
    }
}

fn load(args: &SourceArgs, settings: &Settings) -> Result<Dataset> {
    let src = source(args, settings);
    src.load().with_context(|| match &src {
        DataSource::File(p) => format!("loading {}", p.display()),
        DataSource::Synthetic(_) => "generating synthetic data".into(),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn summary_line(name: &str, r: &EvalReport) -> String {
    let (q, v) = (&r.infrared_to_visible, &r.visible_to_infrared);
    format!(
        "{name}: I->V rank1 {:.4} map {:.4} minp {:.4} | V->I rank1 {:.4} map {:.4} minp {:.4}",
        q.rank1, q.map, q.minp, v.rank1, v.map, v.minp
    )
}

fn print_table(table: &ResultTable, out_dir: Option<&Path>, name: &str) -> Result<()> {
    let csv = table.to_csv();
    emit(&csv)?;
    for r in &table.records {
        if let Some(e) = &r.error {
            eprintln!("run {} failed: {e}", r.name);
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{name}.csv")), csv)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { settings, out } => {
            let s = settings.resolve()?;
            let data = generate_synthetic(&s.synth)?;
            save_dataset(&data, &out)?;
            info!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Train {
            settings,
            source: src,
            out_dir,
        } => {
            let s = settings.resolve()?;
            let data = load(&src, &s)?;
            let outcome = train(&data.unlabeled(), &s.train)?;
            fs::create_dir_all(&out_dir)?;
            let ck = Checkpoint::new(s.train.clone(), outcome.a.clone(), outcome.b.clone());
            ck.save(&out_dir.join("checkpoint.json"))?;
            write_json(&out_dir.join("runlog.json"), &outcome.log)?;
            fs::write(out_dir.join("settings.txt"), s.to_text())?;
            let mode = if s.train.dual() {
                EvalMode::Joint
            } else {
                EvalMode::OnlyA
            };
            let report = evaluate(&outcome.a, &outcome.b, &data, mode)?;
            write_json(&out_dir.join("metrics.json"), &report)?;
            emit_line(&summary_line("train", &report))?;
        }
        Command::Eval {
            checkpoint,
            settings,
            source: src,
            mode,
            out,
        } => {
            let s = settings.resolve()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let mode = EvalMode::from(mode);
            if mode != EvalMode::OnlyA && !ck.config.dual() {
                bail!("checkpoint holds a single trained model; use --mode a");
            }
            let data = load(&src, &s)?;
            let report = evaluate(&ck.a, &ck.b, &data, mode)?;
            match out {
                Some(p) => {
                    write_json(&p, &report)?;
                    emit_line(&summary_line("eval", &report))?;
                }
                None => emit_line(&serde_json::to_string_pretty(&report)?)?,
            }
        }
        Command::Ablate {
            settings,
            source: src,
            suite,
        } => {
            let s = settings.resolve()?;
            let spec = SuiteSpec {
                source: source(&src, &s),
                config: s.train,
                seeds: suite.seeds,
                output_dir: suite.out_dir.clone(),
            };
            let table = run_ablation_suite(&spec)?;
            print_table(&table, suite.out_dir.as_deref(), "ablation")?;
        }
        Command::SweepGamma {
            settings,
            source: src,
            suite,
            gammas,
        } => {
            let s = settings.resolve()?;
            let spec = SuiteSpec {
                source: source(&src, &s),
                config: s.train,
                seeds: suite.seeds,
                output_dir: suite.out_dir.clone(),
            };
            let table = run_gamma_sweep(&spec, &gammas)?;
            print_table(&table, suite.out_dir.as_deref(), "gamma_sweep")?;
        }
        Command::Export {
            run_log,
            settings,
            source: src,
            out_dir,
            bins,
        } => {
            let s = settings.resolve()?;
            let text = fs::read_to_string(&run_log)
                .with_context(|| format!("reading {}", run_log.display()))?;
            let log: RunLog = serde_json::from_str(&text).context("parsing run log")?;
            let data = load(&src, &s)?;
            for p in export_run(&log, &data, &out_dir, bins)? {
                emit_line(&p.display().to_string())?;
            }
        }
    }
    Ok(())
}

/// Write to stdout; a closed pipe (`duoreid eval | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit_line(text: &str) -> Result<()> {
    emit(&format!("{text}\n"))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
