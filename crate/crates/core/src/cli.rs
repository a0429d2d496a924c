//! Command-line front end: config resolution, subcommand dispatch and the
//! run manifest.
//!
//! Config precedence, lowest first: built-in defaults, `LADLAB_SEED`, the
//! `--config` file, then `--set key.path=value` overrides. Exit codes are 0
//! on success, 1 on runtime failure and 2 on validation or usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::biasdata::{load_dataset, save_dataset, DatasetManifest, LabeledDataset};
use crate::checkpoint::Checkpoint;
use crate::diagnostics::{run_one_pixel_experiment, write_gr_csv, OnePixelConfig};
use crate::error::{Error, Result};
use crate::nn::{classifier_checkpoint, classifier_from_checkpoint, EpochSummary};
use crate::pipeline::{
    build_datasets, debias_stage, default_suite, evaluate, factor_extractor, mutual_information,
    run_experiment, run_suite, train_f_stage, train_strong_stage, train_vqvae_stage,
    write_suite_csv, ExperimentConfig, SuiteRow,
};
use crate::vqvae::{VqEpochRecord, VqVaeParams};
use crate::walk::WalkTraceRow;

pub const SEED_ENV: &str = "LADLAB_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "ladlab",
    version,
    about = "Collider-bias experiments and latent adversarial debiasing",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// directory for every artefact of the run
    #[arg(long, short = 'o')]
    pub output_dir: PathBuf,
    /// dotted-key override, e.g. `walk.alpha=0.07`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// allow writing into a non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the biased training set and the evaluation sets
    Generate(CommonArgs),
    /// Train the VQ-VAE on a dataset file (or the configured training set)
    TrainVqvae {
        #[command(flatten)]
        common: CommonArgs,
        /// dataset file; defaults to the configured training set
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the biased latent classifier f
    TrainBiased {
        #[command(flatten)]
        common: CommonArgs,
        /// dataset file; defaults to the configured training set
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// VQ-VAE checkpoint
        #[arg(long)]
        vqvae: PathBuf,
    },
    /// Walk every example's latents and decode a debiased dataset
    Walk {
        #[command(flatten)]
        common: CommonArgs,
        /// dataset file; defaults to the configured training set
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// VQ-VAE checkpoint
        #[arg(long)]
        vqvae: PathBuf,
        /// biased classifier checkpoint
        #[arg(long)]
        f: PathBuf,
    },
    /// Train f_strong on a dataset file (debiased or original)
    TrainStrong {
        #[command(flatten)]
        common: CommonArgs,
        /// dataset file; defaults to the configured training set
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a classifier checkpoint on dataset files (or the configured eval sets)
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// classifier checkpoint
        #[arg(long)]
        classifier: PathBuf,
        /// dataset file to score; repeatable
        #[arg(long)]
        dataset: Vec<PathBuf>,
    },
    /// Gradient-ratio time series on the one-pixel problem
    OnePixel(CommonArgs),
    /// One full vanilla or LAD run
    RunExperiment(CommonArgs),
    /// Several experiments over several seeds
    RunSuite {
        #[command(flatten)]
        common: CommonArgs,
        /// concurrent runs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::TrainVqvae { .. } => "train-vqvae",
            Command::TrainBiased { .. } => "train-biased",
            Command::Walk { .. } => "walk",
            Command::TrainStrong { .. } => "train-strong",
            Command::Evaluate { .. } => "evaluate",
            Command::OnePixel(_) => "one-pixel",
            Command::RunExperiment(_) => "run-experiment",
            Command::RunSuite { .. } => "run-suite",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Generate(c) | Command::OnePixel(c) | Command::RunExperiment(c) => c,
            Command::TrainVqvae { common, .. }
            | Command::TrainBiased { common, .. }
            | Command::Walk { common, .. }
            | Command::TrainStrong { common, .. }
            | Command::Evaluate { common, .. }
            | Command::RunSuite { common, .. } => common,
        }
    }
}

/// Config of `run-suite`: every experiment is run under every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seeds: Vec<u64>,
    pub experiments: Vec<ExperimentConfig>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seeds: vec![0, 1, 2],
            experiments: default_suite(&ExperimentConfig::default()),
        }
    }
}

/// A config type the CLI can resolve.
pub trait ResolvableConfig: Serialize + DeserializeOwned + Default {
    /// JSON key that `LADLAB_SEED` sets
    const SEED_KEY: &'static str = "seed";
    fn validate(&self) -> Result<()>;
}

impl ResolvableConfig for ExperimentConfig {
    fn validate(&self) -> Result<()> {
        ExperimentConfig::validate(self)
    }
}

impl ResolvableConfig for OnePixelConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.num_classes < 2 {
            return Err(Error::usage(
                "one-pixel config needs max_iterations > 0 and at least 2 classes",
            ));
        }
        self.optim.validate()
    }
}

impl ResolvableConfig for SuiteConfig {
    const SEED_KEY: &'static str = "seeds";

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::usage("seeds must not be empty"));
        }
        if self.experiments.is_empty() {
            return Err(Error::usage("experiments must not be empty"));
        }
        for (i, e) in self.experiments.iter().enumerate() {
            e.validate()
                .map_err(|err| Error::usage(format!("experiments.{i}: {err}")))?;
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::usage(format!("malformed override key '{path}'")));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    Error::usage(format!("override key '{path}': '{part}' is not an index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::usage(format!(
                        "override key '{path}': index {idx} out of range {len}"
                    ))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else {
                    unreachable!()
                };
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            _ => {
                return Err(Error::usage(format!(
                    "override key '{path}': '{}' is not an object",
                    parts[..i].join(".")
                )))
            }
        };
    }
    Ok(())
}

fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (key, val) = raw
        .split_once('=')
        .ok_or_else(|| Error::usage(format!("override '{raw}' is not KEY=VALUE")))?;
    let value = serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Defaults < `env_seed` < file < overrides; unknown keys and type
/// mismatches are reported with their key path.
pub fn resolve_config<T: ResolvableConfig>(
    file: Option<&Path>,
    env_seed: Option<&str>,
    overrides: &[String],
) -> Result<T> {
    let mut value = serde_json::to_value(T::default())?;
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?;
        let v = if T::SEED_KEY == "seeds" {
            Value::from(vec![seed])
        } else {
            Value::from(seed)
        };
        set_path(&mut value, T::SEED_KEY, v)?;
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| {
            Error::usage(format!(
                "config file {} is not valid JSON: {e}",
                path.display()
            ))
        })?;
        if !patch.is_object() {
            return Err(Error::usage(format!(
                "config file {} must hold a JSON object",
                path.display()
            )));
        }
        merge(&mut value, patch);
    }
    for raw in overrides {
        let (key, v) = parse_override(raw)?;
        set_path(&mut value, &key, v)?;
    }
    let cfg: T = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::usage(format!("config key '{path}': {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Files written by one invocation, for the run manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub files: Vec<ManifestEntry>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)
                .map_err(|e| Error::format(name, e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::format(name, e.to_string()))?;
        self.write(name, &bytes)
    }

    fn dataset(
        &mut self,
        name: &str,
        ds: &LabeledDataset,
        manifest: &DatasetManifest,
    ) -> Result<()> {
        let p = self.path(name);
        save_dataset(&p, ds, manifest)
    }

    fn checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        let p = self.path(name);
        ckpt.save(&p)
    }

    fn finish(mut self, command: &str) -> Result<()> {
        self.files.sort();
        let files = self
            .files
            .iter()
            .map(|name| {
                let p = self.dir.join(name);
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                Ok(ManifestEntry {
                    path: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            code_version: crate::pipeline::CODE_VERSION.to_string(),
            files,
        };
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        let p = self.dir.join("manifest.json");
        fs::write(&p, s).map_err(|e| Error::io(p, e))
    }
}

fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::usage(format!(
                "output path {} is not a directory",
                dir.display()
            )));
        }
        let nonempty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if nonempty && !force {
            return Err(Error::usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "input file {} does not exist",
            p.display()
        )))
    }
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint> {
    require_file(p)?;
    Checkpoint::load(p)
}

fn input_dataset(path: Option<&Path>, cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(load_dataset(p)?.0)
        }
        None => Ok(build_datasets(cfg).map_err(|e| e.in_stage("data"))?.0),
    }
}

#[derive(Debug, Serialize)]
struct EvaluationRow {
    dataset: String,
    provenance: String,
    examples: usize,
    accuracy: f64,
}

#[derive(Debug, Serialize)]
struct GenerateSummary {
    train_examples: usize,
    train_aligned_fraction: f64,
    train_label_factor_mi: f64,
    eval_sets: Vec<String>,
}

fn resolve_for(cmd: &Command) -> Result<Value> {
    let c = cmd.common();
    let env = std::env::var(SEED_ENV).ok();
    let file = c.config.as_deref();
    if let Some(p) = file {
        if !p.is_file() {
            return Err(Error::usage(format!(
                "config file {} does not exist",
                p.display()
            )));
        }
    }
    Ok(match cmd {
        Command::OnePixel(_) => serde_json::to_value(resolve_config::<OnePixelConfig>(
            file,
            env.as_deref(),
            &c.overrides,
        )?)?,
        Command::RunSuite { .. } => serde_json::to_value(resolve_config::<SuiteConfig>(
            file,
            env.as_deref(),
            &c.overrides,
        )?)?,
        _ => serde_json::to_value(resolve_config::<ExperimentConfig>(
            file,
            env.as_deref(),
            &c.overrides,
        )?)?,
    })
}

fn experiment(resolved: &Value) -> Result<ExperimentConfig> {
    Ok(serde_json::from_value(resolved.clone())?)
}

fn dispatch(cmd: &Command, resolved: &Value, out: &mut Outputs) -> Result<()> {
    match cmd {
        Command::Generate(_) => {
            let cfg = experiment(resolved)?;
            let (train, evals) = build_datasets(&cfg).map_err(|e| e.in_stage("data"))?;
            let describe = |ds: &LabeledDataset| {
                DatasetManifest::describe(ds, Some(&cfg.generator), Some(&cfg.bias), cfg.seed)
            };
            out.dataset("train.dataset", &train, &describe(&train))?;
            let mut names = Vec::new();
            for (i, (mode, ds)) in evals.iter().enumerate() {
                let name = format!("eval_{i}_{}.dataset", mode.label());
                out.dataset(&name, ds, &describe(ds))?;
                names.push(name);
            }
            let ex = factor_extractor(&cfg.bias, train.num_classes, &train)?;
            out.json(
                "generate_summary.json",
                &GenerateSummary {
                    train_examples: train.len(),
                    train_aligned_fraction: train.aligned_fraction(),
                    train_label_factor_mi: mutual_information(&ex, &train)?,
                    eval_sets: names,
                },
            )
        }
        Command::TrainVqvae { dataset, .. } => {
            let cfg = experiment(resolved)?;
            let train = input_dataset(dataset.as_deref(), &cfg)?;
            let vq = train_vqvae_stage(&cfg, &train)?;
            if let Some(w) = &vq.collapse_warning {
                warn!("{w}");
            }
            let ckpt = vq.params.to_checkpoint(
                cfg.vqvae_config().optim.seed,
                vq.iterations,
                vq.has_momentum_buffers,
            );
            out.checkpoint("vqvae.ckpt", &ckpt)?;
            out.csv::<VqEpochRecord>("vqvae_curve.csv", &vq.epochs)
        }
        Command::TrainBiased { dataset, vqvae, .. } => {
            let cfg = experiment(resolved)?;
            let vq = VqVaeParams::from_checkpoint(&load_checkpoint(vqvae)?)?;
            let train = input_dataset(dataset.as_deref(), &cfg)?;
            let f = train_f_stage(&cfg, &vq, &train)?;
            out.checkpoint("f.ckpt", &classifier_checkpoint(&f, &cfg.f_optim()))?;
            out.csv::<EpochSummary>("f_curve.csv", &f.epochs)
        }
        Command::Walk {
            dataset, vqvae, f, ..
        } => {
            let cfg = experiment(resolved)?;
            let vq = VqVaeParams::from_checkpoint(&load_checkpoint(vqvae)?)?;
            let f = classifier_from_checkpoint(&load_checkpoint(f)?)?;
            let train = input_dataset(dataset.as_deref(), &cfg)?;
            let d = debias_stage(&cfg, &vq, &f, &train)?;
            let manifest = DatasetManifest::describe(&d.dataset, None, Some(&cfg.bias), cfg.seed);
            out.dataset("debiased.dataset", &d.dataset, &manifest)?;
            out.csv::<WalkTraceRow>("walk_trace.csv", &d.rows)?;
            out.json("walk_summary.json", &d.summary)
        }
        Command::TrainStrong { dataset, .. } => {
            let cfg = experiment(resolved)?;
            let train = input_dataset(dataset.as_deref(), &cfg)?;
            let fs = train_strong_stage(&cfg, &train, None)?;
            out.checkpoint(
                "f_strong.ckpt",
                &classifier_checkpoint(&fs, &cfg.f_strong_optim()),
            )?;
            out.csv::<EpochSummary>("f_strong_curve.csv", &fs.epochs)
        }
        Command::Evaluate {
            classifier,
            dataset,
            ..
        } => {
            let cfg = experiment(resolved)?;
            let clf = classifier_from_checkpoint(&load_checkpoint(classifier)?)?;
            let sets: Vec<(String, LabeledDataset)> = if dataset.is_empty() {
                build_datasets(&cfg)
                    .map_err(|e| e.in_stage("data"))?
                    .1
                    .into_iter()
                    .enumerate()
                    .map(|(i, (m, ds))| (format!("eval_{i}_{}", m.label()), ds))
                    .collect()
            } else {
                dataset
                    .iter()
                    .map(|p| {
                        require_file(p)?;
                        Ok((p.display().to_string(), load_dataset(p)?.0))
                    })
                    .collect::<Result<_>>()?
            };
            let rows = sets
                .iter()
                .map(|(name, ds)| {
                    let accuracy = evaluate(&clf, ds).map_err(|e| e.in_stage("evaluate"))?;
                    info!("stage=evaluate dataset={name} accuracy={accuracy:.4}");
                    Ok(EvaluationRow {
                        dataset: name.clone(),
                        provenance: ds.provenance.clone(),
                        examples: ds.len(),
                        accuracy,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.json("evaluation.json", &rows)
        }
        Command::OnePixel(_) => {
            let cfg: OnePixelConfig = serde_json::from_value(resolved.clone())?;
            let r = run_one_pixel_experiment(&cfg).map_err(|e| e.in_stage("one-pixel"))?;
            let mut buf = Vec::new();
            write_gr_csv(&mut buf, &r.series)?;
            out.write("gr_series.csv", &buf)?;
            #[derive(Serialize)]
            struct Summary {
                train_accuracy: f64,
                clean_test_accuracy: f64,
                independent_test_accuracy: f64,
                chance: f64,
                crossover_iteration: Option<usize>,
                iterations: usize,
            }
            out.json(
                "one_pixel_summary.json",
                &Summary {
                    train_accuracy: r.train_accuracy,
                    clean_test_accuracy: r.clean_test_accuracy,
                    independent_test_accuracy: r.independent_test_accuracy,
                    chance: r.chance,
                    crossover_iteration: r.crossover_iteration,
                    iterations: r.series.len(),
                },
            )
        }
        Command::RunExperiment(_) => {
            let cfg = experiment(resolved)?;
            let run = run_experiment(&cfg)?;
            out.json("report.json", &run.report)?;
            if let Some(d) = &run.debiased {
                out.csv::<WalkTraceRow>("walk_trace.csv", &d.rows)?;
            }
            let (ind, cond) = crate::pipeline::headline_accuracies(&run.report);
            let row = SuiteRow {
                dataset: run.report.dataset.clone(),
                method: cfg.mode.name().to_string(),
                bias_ratio: cfg.bias.bias_ratio,
                acc_independent_mean: ind,
                acc_independent_std: ind.map(|_| 0.0),
                acc_conditioned_mean: cond,
                acc_conditioned_std: cond.map(|_| 0.0),
            };
            let mut buf = Vec::new();
            write_suite_csv(&mut buf, &[row])?;
            out.write("summary.csv", &buf)
        }
        Command::RunSuite { jobs, .. } => {
            let cfg: SuiteConfig = serde_json::from_value(resolved.clone())?;
            if *jobs == 0 {
                return Err(Error::usage("--jobs must be at least 1"));
            }
            let suite = run_suite(&cfg.experiments, &cfg.seeds, *jobs)?;
            let mut buf = Vec::new();
            write_suite_csv(&mut buf, &suite.rows)?;
            out.write("suite.csv", &buf)?;
            out.json("suite.json", &suite)
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cmd = &cli.command;
    let resolved = resolve_for(cmd)?;
    let common = cmd.common();
    prepare_output_dir(&common.output_dir, common.force)?;
    let mut out = Outputs {
        dir: common.output_dir.clone(),
        files: Vec::new(),
    };
    out.json("config.resolved.json", &resolved)?;
    info!(
        "stage=cli command={} output_dir={}",
        cmd.name(),
        common.output_dir.display()
    );
    dispatch(cmd, &resolved, &mut out)?;
    out.finish(cmd.name())
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            let _ = writeln!(std::io::stderr(), "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_defaults_env_file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"seed": 5, "walk": {"steps": 3}}"#).unwrap();
        let c: ExperimentConfig = resolve_config(None, Some("9"), &[]).unwrap();
        assert_eq!(c.seed, 9);
        let c: ExperimentConfig = resolve_config(Some(&file), Some("9"), &[]).unwrap();
        assert_eq!((c.seed, c.walk.steps, c.walk.alpha), (5, 3, 0.7));
        let c: ExperimentConfig = resolve_config(
            Some(&file),
            None,
            &["walk.alpha=0.07".into(), "seed=11".into()],
        )
        .unwrap();
        assert_eq!((c.seed, c.walk.alpha), (11, 0.07));
    }

    #[test]
    fn errors_name_the_key_path() {
        let e =
            resolve_config::<ExperimentConfig>(None, None, &["walk.alpah=1".into()]).unwrap_err();
        assert!(e.to_string().contains("walk"), "{e}");
        assert!(e.is_validation());
        let e = resolve_config::<ExperimentConfig>(None, None, &["vqvae.num_codes=many".into()])
            .unwrap_err();
        assert!(e.to_string().contains("vqvae.num_codes"), "{e}");
        let e =
            resolve_config::<ExperimentConfig>(None, None, &["walk.alpha=0".into()]).unwrap_err();
        assert!(e.is_validation());
        assert!(resolve_config::<ExperimentConfig>(None, Some("x"), &[]).is_err());
    }

    #[test]
    fn missing_config_names_path() {
        let e = resolve_config::<ExperimentConfig>(Some(Path::new("/no/such/cfg.json")), None, &[])
            .unwrap_err();
        assert!(e.to_string().contains("/no/such/cfg.json"));
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn overrides_reach_array_elements_and_nested_options() {
        let c: SuiteConfig = resolve_config(
            None,
            None,
            &["experiments.1.walk.steps=4".into(), "seeds=[7]".into()],
        )
        .unwrap();
        assert_eq!(c.experiments[1].walk.steps, 4);
        assert_eq!(c.seeds, vec![7]);
        let c: SuiteConfig = resolve_config(None, Some("3"), &[]).unwrap();
        assert_eq!(c.seeds, vec![3]);
        assert!(resolve_config::<ExperimentConfig>(None, None, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn empty_argv_is_usage() {
        assert_eq!(run_cli(["ladlab"]), 2);
        assert_eq!(run_cli(["ladlab", "no-such-command"]), 2);
    }
}
