//! Config-driven experiment runs and parameter sweeps.
//!
//! A config is flat `key = value` text; `#` starts a comment. Keys without a
//! prefix describe the run, `dataset.*`, `model.*`, `train.*` and
//! `recovery.*` the respective stages. Every key has a default, so an empty
//! file is a valid config.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::learner::{
    default_backbone, format_backbone, load_checkpoint, parse_backbone, save_checkpoint, Layer,
    Learner,
};
use crate::metrics::AccuracyMatrix;
use crate::recovery::{
    export_transfer_set, recover_transfer_set, write_manifest, BetaShare, RecoveryConfig,
    TransferSet,
};
use crate::tasks::{
    cifar10_present, load_cifar10, make_synthetic_stream, split_tasks, ImageShape, SyntheticSpec,
    TaskSequence,
};
use crate::trainer::{
    learner_for, run_sequence, task_accuracy, CeScope, Method, Setting, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory holding the CIFAR-10 binary batches.
    pub path: PathBuf,
    pub classes_per_task: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Synthetic,
            path: PathBuf::from("data/cifar-10-batches-bin"),
            classes_per_task: 2,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub setting: Setting,
    pub method: Method,
    pub output: PathBuf,
    /// Defaults to `<method>-<setting>-s<seed>`.
    pub run_id: Option<String>,
    pub dataset: DatasetConfig,
    pub backbone: Vec<Layer>,
    pub train: TrainConfig,
    pub recovery: RecoveryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            setting: Setting::ClassIl,
            method: Method::ZsIl,
            output: PathBuf::from("out"),
            run_id: None,
            dataset: DatasetConfig::default(),
            backbone: default_backbone(),
            train: TrainConfig::default(),
            recovery: RecoveryConfig::default(),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::ClassIl => "class-il",
            Setting::TaskIl => "task-il",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class-il" => Ok(Setting::ClassIl),
            "task-il" => Ok(Setting::TaskIl),
            _ => Err(Error::invalid(format!(
                "unknown setting {s:?} (class-il, task-il)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ZsIl => "zsil",
            Method::Naive => "naive",
            Method::Joint => "joint",
            Method::FsIl => "fsil",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsil" => Ok(Method::ZsIl),
            "naive" => Ok(Method::Naive),
            "joint" => Ok(Method::Joint),
            "fsil" => Ok(Method::FsIl),
            _ => Err(Error::invalid(format!(
                "unknown method {s:?} (zsil, naive, joint, fsil)"
            ))),
        }
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_shape(v: &str) -> std::result::Result<ImageShape, String> {
    let dims: Vec<usize> = v
        .split('x')
        .map(num)
        .collect::<std::result::Result<_, _>>()?;
    <[usize; 3]>::try_from(dims).map_err(|_| format!("expected CxHxW, got {v:?}"))
}

fn parse_beta(v: &str) -> std::result::Result<Vec<BetaShare>, String> {
    v.split(',')
        .map(|part| {
            let (beta, share) = part
                .split_once(':')
                .ok_or_else(|| format!("expected beta:share, got {part:?}"))?;
            Ok(BetaShare {
                beta: num(beta.trim())?,
                share: num(share.trim())?,
            })
        })
        .collect()
}

fn stringify<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                field: line.to_string(),
                message: "expected key = value".into(),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line: i + 1,
                    field: key.into(),
                    message: "duplicate key".into(),
                });
            }
            cfg.set(key, value.trim())
                .map_err(|message| Error::Config {
                    line: i + 1,
                    field: key.into(),
                    message,
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override; errors report line 0.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            field: spec.into(),
            message: "override must be key=value".into(),
        })?;
        self.set(key.trim(), value.trim())
            .map_err(|message| Error::Config {
                line: 0,
                field: key.trim().into(),
                message,
            })
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = num(v)?,
            "setting" => self.setting = stringify(v.parse())?,
            "method" => self.method = stringify(v.parse())?,
            "output" => self.output = PathBuf::from(v),
            "run_id" => self.run_id = (!v.is_empty()).then(|| v.to_string()),
            "dataset.kind" => {
                self.dataset.kind = match v {
                    "synthetic" => DatasetKind::Synthetic,
                    "cifar10" => DatasetKind::Cifar10,
                    _ => return Err(format!("unknown dataset {v:?} (synthetic, cifar10)")),
                }
            }
            "dataset.path" => self.dataset.path = PathBuf::from(v),
            "dataset.classes_per_task" => {
                self.dataset.classes_per_task = num(v)?;
                self.dataset.synthetic.classes_per_task = self.dataset.classes_per_task;
            }
            "dataset.tasks" => self.dataset.synthetic.tasks = num(v)?,
            "dataset.samples_per_class" => self.dataset.synthetic.samples_per_class = num(v)?,
            "dataset.image_shape" => self.dataset.synthetic.image_shape = parse_shape(v)?,
            "dataset.separation" => self.dataset.synthetic.separation = num(v)?,
            "dataset.noise" => self.dataset.synthetic.noise = num(v)?,
            "model.backbone" => self.backbone = stringify(parse_backbone(v))?,
            "train.lambda" => self.train.lambda = num(v)?,
            "train.lambda1" => self.train.lambda1 = num(v)?,
            "train.lambda2" => self.train.lambda2 = num(v)?,
            "train.epochs" => self.train.epochs = num(v)?,
            "train.batch_new" => self.train.batch_new = num(v)?,
            "train.batch_replay" => self.train.batch_replay = num(v)?,
            "train.lr" => self.train.lr = num(v)?,
            "train.memory_per_class" => self.train.memory_per_class = num(v)?,
            "train.ce_scope" => {
                self.train.ce_scope = match v {
                    "method" => None,
                    _ => Some(stringify(v.parse::<CeScope>())?),
                }
            }
            "train.epoch_span" => self.train.epoch_span = stringify(v.parse())?,
            "recovery.transfer_size" => self.recovery.transfer_size = num(v)?,
            "recovery.eta" => self.recovery.eta = num(v)?,
            "recovery.tau" => self.recovery.tau = num(v)?,
            "recovery.beta" => self.recovery.beta_schedule = parse_beta(v)?,
            "recovery.max_resample" => self.recovery.max_resample = num(v)?,
            "recovery.augment" => self.recovery.augment = boolean(v)?,
            "recovery.inversion.max_steps" => self.recovery.inversion.max_steps = num(v)?,
            "recovery.inversion.lr" => self.recovery.inversion.lr = num(v)?,
            "recovery.inversion.patience" => self.recovery.inversion.patience = num(v)?,
            "recovery.inversion.min_improvement" => {
                self.recovery.inversion.min_improvement = num(v)?
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Checks the stage configs; failures name the offending field.
    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, e: Error| Error::Config {
            line: 0,
            field: field.into(),
            message: e.to_string(),
        };
        self.train.validate().map_err(|e| field("train", e))?;
        self.recovery.validate().map_err(|e| field("recovery", e))?;
        if self.method == Method::FsIl && self.train.memory_per_class == 0 {
            return Err(field(
                "train.memory_per_class",
                Error::invalid("fsil needs a memory of at least one exemplar per class"),
            ));
        }
        if self.dataset.classes_per_task == 0 {
            return Err(field(
                "dataset.classes_per_task",
                Error::invalid("must be at least 1"),
            ));
        }
        if self.backbone.is_empty() {
            return Err(field("model.backbone", Error::invalid("empty backbone")));
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}-s{}", self.method, self.setting, self.seed))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(self.run_id())
    }

    /// Every key with its effective value; parses back to the same config.
    pub fn resolved(&self) -> String {
        let syn = &self.dataset.synthetic;
        let inv = &self.recovery.inversion;
        let kind = match self.dataset.kind {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Cifar10 => "cifar10",
        };
        let [c, h, w] = syn.image_shape;
        let beta = self
            .recovery
            .beta_schedule
            .iter()
            .map(|b| format!("{}:{}", b.beta, b.share))
            .collect::<Vec<_>>()
            .join(",");
        let ce = self
            .train
            .ce_scope
            .map_or("method".to_string(), |s| s.to_string());
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("setting", self.setting.to_string()),
            ("method", self.method.to_string()),
            ("output", self.output.display().to_string()),
            ("run_id", self.run_id()),
            ("dataset.kind", kind.into()),
            ("dataset.path", self.dataset.path.display().to_string()),
            (
                "dataset.classes_per_task",
                self.dataset.classes_per_task.to_string(),
            ),
            ("dataset.tasks", syn.tasks.to_string()),
            (
                "dataset.samples_per_class",
                syn.samples_per_class.to_string(),
            ),
            ("dataset.image_shape", format!("{c}x{h}x{w}")),
            ("dataset.separation", syn.separation.to_string()),
            ("dataset.noise", syn.noise.to_string()),
            ("model.backbone", format_backbone(&self.backbone)),
            ("train.lambda", self.train.lambda.to_string()),
            ("train.lambda1", self.train.lambda1.to_string()),
            ("train.lambda2", self.train.lambda2.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_new", self.train.batch_new.to_string()),
            ("train.batch_replay", self.train.batch_replay.to_string()),
            ("train.lr", self.train.lr.to_string()),
            (
                "train.memory_per_class",
                self.train.memory_per_class.to_string(),
            ),
            ("train.ce_scope", ce),
            ("train.epoch_span", self.train.epoch_span.to_string()),
            (
                "recovery.transfer_size",
                self.recovery.transfer_size.to_string(),
            ),
            ("recovery.eta", self.recovery.eta.to_string()),
            ("recovery.tau", self.recovery.tau.to_string()),
            ("recovery.beta", beta),
            (
                "recovery.max_resample",
                self.recovery.max_resample.to_string(),
            ),
            ("recovery.augment", self.recovery.augment.to_string()),
            ("recovery.inversion.max_steps", inv.max_steps.to_string()),
            ("recovery.inversion.lr", inv.lr.to_string()),
            ("recovery.inversion.patience", inv.patience.to_string()),
            (
                "recovery.inversion.min_improvement",
                inv.min_improvement.to_string(),
            ),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The task stream this config describes, split with the run seed.
    pub fn build_stream(&self) -> Result<TaskSequence> {
        match self.dataset.kind {
            DatasetKind::Synthetic => make_synthetic_stream(&self.dataset.synthetic, self.seed),
            DatasetKind::Cifar10 => {
                if !cifar10_present(&self.dataset.path) {
                    return Err(Error::NotFound(format!(
                        "CIFAR-10 batches under {}",
                        self.dataset.path.display()
                    )));
                }
                let (train, test) = load_cifar10(&self.dataset.path)?;
                split_tasks(&train, &test, self.dataset.classes_per_task, self.seed)
            }
        }
    }

    /// Stage configs with the run seed threaded through.
    pub fn stage_configs(&self) -> (TrainConfig, RecoveryConfig) {
        let train = TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        };
        let recovery = RecoveryConfig {
            seed: self.seed,
            ..self.recovery.clone()
        };
        (train, recovery)
    }
}

/// Caps the global worker pool at `ZSIL_THREADS` when set. Only the first
/// call has an effect.
pub fn configure_threads() -> Result<()> {
    static INIT: std::sync::Once = std::sync::Once::new();
    let Ok(v) = std::env::var("ZSIL_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::invalid(format!(
            "ZSIL_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    INIT.call_once(|| {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("worker pool already set up: {e}");
        }
    });
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub run_dir: PathBuf,
    pub matrix: AccuracyMatrix,
    /// `(classes seen, A_k)` after each evaluated row.
    pub averages: Vec<(usize, f64)>,
    /// Transfer-set size used for each task.
    pub transfer_sizes: Vec<usize>,
}

impl ExperimentReport {
    pub fn final_average(&self) -> f64 {
        self.averages.last().map_or(0.0, |&(_, a)| a)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn averages_for(
    matrix: &AccuracyMatrix,
    stream: &TaskSequence,
    method: Method,
) -> Result<Vec<(usize, f64)>> {
    let per_task = stream.classes_per_task();
    let series = matrix.average_series()?;
    Ok(series
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            let classes = if method == Method::Joint {
                stream.total_classes()
            } else {
                per_task[..=k].iter().sum()
            };
            (classes, a)
        })
        .collect())
}

fn averages_csv(series: &[(String, Vec<(usize, f64)>)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "classes", "avg_accuracy"])?;
    for (name, points) in series {
        for (c, a) in points {
            w.write_record([name.clone(), c.to_string(), a.to_string()])?;
        }
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Average accuracy against number of classes, one polyline per series.
pub fn render_plot_svg(series: &[(String, Vec<(usize, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let max_x = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(c, _)| c))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x = |c: f64| m + (w - 2.0 * m) * c / max_x;
    let y = |a: f64| h - m - (h - 2.0 * m) * a / 100.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for tick in (0..=100).step_by(20) {
        let ty = y(tick as f64);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#,
            m - 6.0,
            ty + 4.0
        );
    }
    let mut xs: Vec<usize> = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(c, _)| c))
        .collect();
    xs.sort_unstable();
    xs.dedup();
    for c in xs {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{c}</text>"#,
            x(c as f64),
            h - m + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Number of classes</text>"#,
        w / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">Average Accuracy (%)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = points
            .iter()
            .map(|&(c, a)| format!("{:.1},{:.1}", x(c as f64), y(a)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (px, py) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#,
            w - m - 100.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_plot(dir: &Path, series: &[(String, Vec<(usize, f64)>)]) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("avg_accuracy.csv"), averages_csv(series)?)?;
    write_file(&dir.join("avg_accuracy.svg"), render_plot_svg(series))
}

/// Runs the configured method and writes the run directory:
/// `config.resolved`, `accuracy_matrix.csv`, `avg_accuracy.csv`,
/// `transfer_manifest.csv` (methods that recover), `checkpoints/task_<k>.ckpt`
/// and `plots/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    configure_threads()?;
    let run_dir = cfg.run_dir();
    let ckpt_dir = run_dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write_file(&run_dir.join("config.resolved"), cfg.resolved())?;

    let stream = cfg.build_stream()?;
    let learner = learner_for(&stream, cfg.setting, cfg.backbone.clone(), cfg.seed)?;
    let (train, recovery) = cfg.stage_configs();
    let recovers = matches!(cfg.method, Method::ZsIl | Method::FsIl);
    let mut manifest = recovers
        .then(|| csv::Writer::from_path(run_dir.join("transfer_manifest.csv")))
        .transpose()?;
    let mut transfer_sizes = Vec::new();
    log::info!(
        "run {}: {} tasks, method {}",
        cfg.run_id(),
        stream.len(),
        cfg.method
    );

    let outcome = run_sequence(
        &stream,
        learner,
        cfg.method,
        &train,
        &recovery,
        |k, learner, report| {
            if let Some(w) = manifest.as_mut() {
                write_manifest(&report.transfer.samples, w, Some(k + 1), k == 0)?;
            }
            transfer_sizes.push(report.transfer.len());
            log::info!(
                "task {}: {} steps, transfer set {} ({} fallbacks, {} aborted)",
                k + 1,
                report.steps,
                report.transfer.len(),
                report.transfer.stats.fallbacks,
                report.transfer.aborted
            );
            save_checkpoint(learner, &ckpt_dir.join(format!("task_{}.ckpt", k + 1)))
        },
    )?;
    if let Some(mut w) = manifest {
        w.flush()
            .map_err(|e| Error::io(run_dir.join("transfer_manifest.csv"), e))?;
    }

    let matrix = outcome.matrix;
    let mut buf = Vec::new();
    matrix.write_csv(&mut buf)?;
    write_file(&run_dir.join("accuracy_matrix.csv"), buf)?;

    let averages = averages_for(&matrix, &stream, cfg.method)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "classes", "avg_accuracy"])?;
    for (k, (c, a)) in averages.iter().enumerate() {
        w.write_record([(k + 1).to_string(), c.to_string(), a.to_string()])?;
    }
    write_file(
        &run_dir.join("avg_accuracy.csv"),
        w.into_inner().map_err(|e| Error::Format(e.to_string()))?,
    )?;
    write_plot(
        &run_dir.join("plots"),
        &[(cfg.method.to_string(), averages.clone())],
    )?;

    Ok(ExperimentReport {
        run_dir,
        matrix,
        averages,
        transfer_sizes,
    })
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    TransferSize,
    Lambda,
    Eta,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::TransferSize => "recovery.transfer_size",
            SweepParam::Lambda => "train.lambda",
            SweepParam::Eta => "recovery.eta",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::TransferSize => "transfer_size",
            SweepParam::Lambda => "lambda",
            SweepParam::Eta => "eta",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transfer_size" => Ok(SweepParam::TransferSize),
            "lambda" => Ok(SweepParam::Lambda),
            "eta" => Ok(SweepParam::Eta),
            _ => Err(Error::invalid(format!(
                "cannot sweep {s:?} (transfer_size, lambda, eta)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub run_dir: PathBuf,
    pub param: SweepParam,
    pub runs: Vec<(String, ExperimentReport)>,
}

/// One run per value under `<run-id>/<param>_<value>`, all with the same
/// seed, plus `sweep_<param>.csv` and a combined plot in the sweep
/// directory.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[String],
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::invalid("a sweep needs at least one value"));
    }
    let run_dir = cfg.run_dir();
    create_dir(&run_dir)?;
    let mut runs = Vec::with_capacity(values.len());
    for value in values {
        let mut run = cfg.clone();
        run.apply_override(&format!("{}={value}", param.key()))?;
        run.validate()?;
        run.output = run_dir.clone();
        run.run_id = Some(format!("{param}_{value}"));
        runs.push((value.clone(), run_experiment(&run)?));
    }
    let series: Vec<(String, Vec<(usize, f64)>)> = runs
        .iter()
        .map(|(v, r)| (format!("{param}={v}"), r.averages.clone()))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        param.to_string().as_str(),
        "task",
        "classes",
        "avg_accuracy",
    ])?;
    for (v, r) in &runs {
        for (k, (c, a)) in r.averages.iter().enumerate() {
            w.write_record([v.clone(), (k + 1).to_string(), c.to_string(), a.to_string()])?;
        }
    }
    write_file(
        &run_dir.join(format!("sweep_{param}.csv")),
        w.into_inner().map_err(|e| Error::Format(e.to_string()))?,
    )?;
    write_plot(&run_dir.join("plots"), &series)?;
    Ok(SweepReport {
        run_dir,
        param,
        runs,
    })
}

/// Recovers a transfer set from a saved learner and exports it to `dir`.
pub fn recover_from_checkpoint(
    checkpoint: &Path,
    rcfg: &RecoveryConfig,
    dir: &Path,
) -> Result<TransferSet> {
    configure_threads()?;
    let learner = load_checkpoint(checkpoint)?;
    let cm = learner.confusion().cloned().ok_or_else(|| {
        Error::InvalidState(format!(
            "{} stores no confusion matrix",
            checkpoint.display()
        ))
    })?;
    let set = recover_transfer_set(&learner, &cm, rcfg)?;
    export_transfer_set(&set, dir)?;
    Ok(set)
}

/// Test accuracy of a saved learner on every task it has learned, using the
/// stream described by `cfg`.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
) -> Result<(Learner, Vec<f64>)> {
    let learner = load_checkpoint(checkpoint)?;
    let stream = cfg.build_stream()?;
    let mut acc = Vec::new();
    for (j, task) in stream.tasks().iter().enumerate() {
        let learned = learner.task_classes().get(j).is_some_and(|cs| {
            cs.iter().all(|c| task.classes.contains(c)) && cs.len() == task.classes.len()
        });
        if !learned {
            break;
        }
        acc.push(task_accuracy(&learner, j, &task.test)?);
    }
    if acc.is_empty() {
        return Err(Error::InvalidState(
            "the checkpoint has not learned the first task of this stream".into(),
        ));
    }
    Ok((learner, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(
            ExperimentConfig::parse("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn resolved_parses_back() {
        let text = "method = fsil\nsetting = task-il\nrecovery.beta = 2:0.25,0.5:0.75\ntrain.ce_scope = seen\n\
                    dataset.image_shape = 3x4x5\nmodel.backbone = flatten,dense:8,relu\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let back = ExperimentConfig::parse(&cfg.resolved()).unwrap();
        // The effective run id is written out explicitly.
        assert_eq!(back.run_id.as_deref(), Some("fsil-task-il-s0"));
        assert_eq!(back, ExperimentConfig { run_id: back.run_id.clone(), ..cfg });
    }

    #[test]
    fn errors_carry_line_and_field() {
        let err = ExperimentConfig::parse("seed = 1\n\n# note\nrecovery.eta = abc\n").unwrap_err();
        match err {
            Error::Config { line, field, .. } => {
                assert_eq!(line, 4);
                assert_eq!(field, "recovery.eta");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("bogus = 1").unwrap_err(),
            Error::Config { line: 1, .. }
        ));
        assert!(matches!(
            ExperimentConfig::parse("seed = 1\nseed = 2").unwrap_err(),
            Error::Config { line: 2, .. }
        ));
    }

    #[test]
    fn invalid_values_are_rejected_after_parsing() {
        let err = ExperimentConfig::parse("recovery.eta = -1").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "recovery"));
        let err = ExperimentConfig::parse("method = fsil\ntrain.memory_per_class = 0").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref field, .. } if field == "train.memory_per_class")
        );
    }

    #[test]
    fn overrides_apply_on_top() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("train.lambda=0.1").unwrap();
        assert_eq!(cfg.train.lambda, 0.1);
        assert!(cfg.apply_override("train.lambda").is_err());
    }

    #[test]
    fn default_run_id_names_method_setting_and_seed() {
        let cfg = ExperimentConfig::parse("seed = 7\nmethod = naive").unwrap();
        assert_eq!(cfg.run_id(), "naive-class-il-s7");
    }

    #[test]
    fn plot_has_axis_labels_and_one_line_per_series() {
        let svg = render_plot_svg(&[
            ("a".into(), vec![(2, 100.0), (4, 50.0)]),
            ("b".into(), vec![(2, 90.0), (4, 70.0)]),
        ]);
        assert!(svg.contains("Average Accuracy (%)"));
        assert!(svg.contains("Number of classes"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
