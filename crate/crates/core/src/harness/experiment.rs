//! End-to-end runs described by a flat TOML manifest.

use std::fmt;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::metrics::{evaluate, Metrics};
use super::train::{ModelKind, TrainConfig, TrainLog};
use crate::baselines::{run_baseline, run_imgshuffle, BaselineContext, BaselineKind};
use crate::datagen::{dataset_stats, generate_split, summarize, DatasetSpec, DatasetStats, ReferenceAct, Split, SplitSummary, Task};
use crate::embeddings::{EncodeMode, EncodeOptions, Encoder, World, WorldConfig};
use crate::error::{Error, Result};
use crate::numerics::Activation;
use crate::pipeline::{pipeline_predict, train_pipeline, tune_thresholds, PipelineConfig, Thresholds};
use crate::pop::{predict, train_pop, PopConfig};

/// What an experiment trains or runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum System {
    Model(ModelKind),
    Baseline(BaselineKind),
    ImgShuffle,
}

impl std::str::FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "imgshuffle" {
            return Ok(System::ImgShuffle);
        }
        s.parse::<ModelKind>()
            .map(System::Model)
            .or_else(|_| s.parse::<BaselineKind>().map(System::Baseline))
            .map_err(|_| Error::config(format!("unknown system `{s}`")))
    }
}

impl TryFrom<String> for System {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            System::Model(m) => m.name(),
            System::Baseline(BaselineKind::Random) => "random",
            System::Baseline(BaselineKind::Majority) => "majority",
            System::Baseline(BaselineKind::Probability) => "probability",
            System::Baseline(BaselineKind::Cnn) => "cnn",
            System::Baseline(BaselineKind::AttrRandom) => "attr-random",
            System::ImgShuffle => "imgshuffle",
        };
        f.write_str(s)
    }
}

impl From<System> for String {
    fn from(s: System) -> String {
        s.to_string()
    }
}

/// Flat experiment description. Every field has a default, so a manifest
/// only needs to name what differs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub system: System,
    pub task: Task,

    pub world_seed: u64,
    pub classes: usize,
    pub images_per_class: usize,
    pub attributes: usize,
    pub attrs_per_object: usize,
    pub d_img: usize,
    pub d_word: usize,
    pub sigma: f64,
    pub sigma_w: f64,

    pub data_seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    pub p0: f64,
    pub pm: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,

    pub normalize_blocks: bool,
    pub drop_attributes: bool,

    pub d_ent: usize,
    pub n_sensors: usize,
    pub psi: Activation,
    pub phi: Activation,
    pub sensor_nonlinearity: bool,
    pub use_bias: bool,
    pub d_shared: usize,
    pub margin: f64,
    pub corpus_negatives: bool,

    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    /// Defaults to the model's standard epoch count.
    pub epochs: Option<usize>,
    pub train_seed: u64,
    pub shuffle: bool,

    /// Frozen pipeline thresholds; tuned on the validation split when absent.
    pub theta_miss: Option<f64>,
    pub theta_diff: Option<f64>,

    pub baseline_seed: u64,
    pub labeler_accuracy: f64,
    pub shuffle_seed: u64,
}

impl Default for Manifest {
    fn default() -> Self {
        let w = WorldConfig::default();
        let d = DatasetSpec::default();
        let p = PopConfig::new(1, 1);
        let q = PipelineConfig::new(1, 1);
        let t = TrainConfig::default();
        Manifest {
            name: "experiment".into(),
            system: System::Model(ModelKind::Pop),
            task: Task::ObjectOnly,
            world_seed: 0,
            classes: w.classes,
            images_per_class: w.images_per_class,
            attributes: w.attributes,
            attrs_per_object: w.attrs_per_object,
            d_img: w.d_img,
            d_word: w.d_word,
            sigma: w.sigma,
            sigma_w: w.sigma_w,
            data_seed: d.seed,
            min_len: d.min_len,
            max_len: d.max_len,
            p0: d.p0,
            pm: d.pm,
            n_train: d.n_train,
            n_val: d.n_val,
            n_test: d.n_test,
            normalize_blocks: false,
            drop_attributes: false,
            d_ent: p.d_ent,
            n_sensors: p.n_sensors,
            psi: p.psi,
            phi: p.phi,
            sensor_nonlinearity: p.sensor_nonlinearity,
            use_bias: p.use_bias,
            d_shared: q.d_shared,
            margin: q.margin,
            corpus_negatives: q.corpus_negatives,
            lr0: t.lr0,
            momentum: t.momentum,
            decay: t.decay,
            epochs: None,
            train_seed: t.seed,
            shuffle: t.shuffle,
            theta_miss: None,
            theta_diff: None,
            baseline_seed: 0,
            labeler_accuracy: 1.0,
            shuffle_seed: 0,
        }
    }
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            classes: self.classes,
            images_per_class: self.images_per_class,
            attributes: self.attributes,
            attrs_per_object: self.attrs_per_object,
            d_img: self.d_img,
            d_word: self.d_word,
            sigma: self.sigma,
            sigma_w: self.sigma_w,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            min_len: self.min_len,
            max_len: self.max_len,
            p0: self.p0,
            pm: self.pm,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            seed: self.data_seed,
        }
    }

    /// Learned model behind the system, if any.
    pub fn model_kind(&self) -> Option<ModelKind> {
        match self.system {
            System::Model(m) => Some(m),
            System::ImgShuffle => Some(ModelKind::Pop),
            System::Baseline(_) => None,
        }
    }

    pub fn encode_options(&self) -> EncodeOptions {
        let mode = match self.system {
            System::Model(ModelKind::Trpop) => EncodeMode::OneHot,
            _ => EncodeMode::Dense,
        };
        EncodeOptions {
            mode,
            unknown_as_zero: false,
            normalize_blocks: self.normalize_blocks,
            drop_attributes: self.drop_attributes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let kind = self.model_kind().unwrap_or(ModelKind::Pop);
        TrainConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            decay: self.decay,
            epochs: self.epochs.unwrap_or_else(|| kind.default_epochs()),
            seed: self.train_seed,
            shuffle: self.shuffle,
        }
    }

    pub fn pop_config(&self, d_query: usize, d_cand: usize) -> PopConfig {
        PopConfig {
            d_query,
            d_cand,
            d_ent: self.d_ent,
            n_sensors: self.n_sensors,
            psi: self.psi,
            phi: self.phi,
            sensor_nonlinearity: self.sensor_nonlinearity,
            use_bias: self.use_bias,
        }
    }

    pub fn pipeline_config(&self, d_query: usize, d_cand: usize) -> PipelineConfig {
        PipelineConfig {
            d_query,
            d_cand,
            d_shared: self.d_shared,
            margin: self.margin,
            corpus_negatives: self.corpus_negatives,
        }
    }

    pub fn frozen_thresholds(&self) -> Result<Option<Thresholds>> {
        match (self.theta_miss, self.theta_diff) {
            (Some(theta_miss), Some(theta_diff)) => Ok(Some(Thresholds { theta_miss, theta_diff })),
            (None, None) => Ok(None),
            _ => Err(Error::config("theta_miss and theta_diff must be given together")),
        }
    }
}

/// Pipeline stage of an experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    World,
    Data,
    Encode,
    Train,
    Tune,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummaries {
    pub train: SplitSummary,
    pub val: SplitSummary,
    pub test: SplitSummary,
}

/// Everything a run produced. Serialized as `report.json`; contains no
/// timestamps, so identical manifests give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest: Manifest,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub stats: Option<DatasetStats>,
    pub splits: Option<SplitSummaries>,
    pub train_log: Option<TrainLog>,
    pub thresholds: Option<Thresholds>,
    pub metrics: Option<Metrics>,
    /// Fraction of test acts on which the system protested.
    pub protest_rate: Option<f64>,
}

impl Report {
    fn new(manifest: &Manifest) -> Self {
        Report {
            manifest: manifest.clone(),
            failed_stage: None,
            error: None,
            stats: None,
            splits: None,
            train_log: None,
            thresholds: None,
            metrics: None,
            protest_rate: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn render(&self) -> String {
        let mut out = format!("experiment: {}\nsystem: {}\ntask: {:?}\n", self.manifest.name, self.manifest.system, self.manifest.task);
        if let (Some(stage), Some(err)) = (self.failed_stage, &self.error) {
            out += &format!("FAILED at stage {stage}: {err}\n");
        }
        if let Some(s) = &self.stats {
            out += "\ndataset statistics\n";
            out += &s.render();
        }
        if let Some(log) = &self.train_log {
            out += &format!("\ntraining: {} updates, final loss {:.5}\n", log.updates, log.epoch_loss.last().copied().unwrap_or(f64::NAN));
        }
        if let Some(t) = &self.thresholds {
            out += &format!("thresholds: theta_miss = {}, theta_diff = {}\n", t.theta_miss, t.theta_diff);
        }
        if let Some(m) = &self.metrics {
            out += "\naccuracy (%)\n";
            out += &m.render();
        }
        out
    }
}

/// A failed run: the stage it stopped in, the cause, and the partial report.
#[derive(Debug)]
pub struct RunFailure {
    pub stage: Stage,
    pub error: Error,
    pub report: Box<Report>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "experiment failed at stage {}: {}", self.stage, self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Output of a successful run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub checkpoint: Option<Checkpoint>,
    /// The manifest with tuned thresholds frozen in.
    pub resolved: Manifest,
}

struct Ctx {
    report: Report,
}

impl Ctx {
    fn at<T>(&mut self, stage: Stage, r: Result<T>) -> std::result::Result<T, RunFailure> {
        r.map_err(|error| {
            self.report.failed_stage = Some(stage);
            self.report.error = Some(error.to_string());
            RunFailure {
                stage,
                error,
                report: Box::new(self.report.clone()),
            }
        })
    }
}

/// Builds the world, generates and encodes splits, trains and tunes as the
/// system requires, and evaluates on the test split. When `out_dir` is given,
/// writes `report.json`, `report.txt`, `manifest.toml` (resolved), `run.json`
/// (timing) and, for learned models, `checkpoint.json`; a failed run still
/// writes its partial report.
pub fn run_experiment(manifest: &Manifest, out_dir: Option<&Path>) -> std::result::Result<RunOutput, RunFailure> {
    let started = SystemTime::now();
    let result = run_stages(manifest);
    if let Some(dir) = out_dir {
        let written = match &result {
            Ok(out) => write_outputs(dir, &out.report, &out.resolved, out.checkpoint.as_ref(), started),
            Err(f) => write_outputs(dir, &f.report, manifest, None, started),
        };
        if let Err(error) = written {
            let mut report = match &result {
                Ok(out) => out.report.clone(),
                Err(f) => (*f.report).clone(),
            };
            report.failed_stage = Some(Stage::Write);
            report.error = Some(error.to_string());
            return Err(RunFailure {
                stage: Stage::Write,
                error,
                report: Box::new(report),
            });
        }
    }
    result
}

fn write_outputs(dir: &Path, report: &Report, resolved: &Manifest, ck: Option<&Checkpoint>, started: SystemTime) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write("report.json", report.to_json()?)?;
    write("report.txt", report.render())?;
    write("manifest.toml", resolved.to_toml()?)?;
    if let Some(ck) = ck {
        ck.save(&dir.join("checkpoint.json"))?;
    }
    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let run = serde_json::json!({
        "started_unix": secs(started),
        "finished_unix": secs(SystemTime::now()),
    });
    write("run.json", serde_json::to_string_pretty(&run)? + "\n")
}

fn run_stages(manifest: &Manifest) -> std::result::Result<RunOutput, RunFailure> {
    let mut cx = Ctx {
        report: Report::new(manifest),
    };
    let spec = manifest.dataset_spec();
    let train_config = manifest.train_config();
    let config_ok = spec.validate().and_then(|_| train_config.validate()).and_then(|_| manifest.frozen_thresholds().map(|_| ()));
    cx.at(Stage::Config, config_ok)?;

    let world = cx.at(Stage::World, World::synthetic(&manifest.world_config(), manifest.world_seed))?;

    let gen = |split| generate_split(manifest.task, &world, &spec, split);
    let train_acts = cx.at(Stage::Data, gen(Split::Train))?;
    let val_acts = cx.at(Stage::Data, gen(Split::Val))?;
    let test_acts = cx.at(Stage::Data, gen(Split::Test))?;
    cx.report.stats = Some(dataset_stats(&train_acts, Some(&test_acts)));
    cx.report.splits = Some(SplitSummaries {
        train: summarize(&train_acts),
        val: summarize(&val_acts),
        test: summarize(&test_acts),
    });

    let mut resolved = manifest.clone();
    let mut checkpoint = None;
    let metrics = match manifest.system {
        System::Baseline(kind) => {
            let ctx = BaselineContext {
                world: &world,
                train: &train_acts,
                max_len: spec.max_len,
                seed: manifest.baseline_seed,
                labeler_accuracy: manifest.labeler_accuracy,
            };
            cx.at(Stage::Evaluate, run_baseline(kind, &ctx, &test_acts))?
        }
        System::ImgShuffle => {
            let encoder = cx.at(Stage::Encode, Encoder::new(&world, manifest.encode_options()))?;
            let (dq, dc) = encoder.dims(true);
            let run = cx.at(
                Stage::Train,
                run_imgshuffle(
                    &world,
                    &train_acts,
                    &test_acts,
                    &manifest.encode_options(),
                    &manifest.pop_config(dq, dc),
                    &train_config,
                    manifest.shuffle_seed,
                ),
            )?;
            cx.report.train_log = Some(run.log);
            run.metrics
        }
        System::Model(kind) => {
            let (metrics, ck, thresholds) = run_model(&mut cx, manifest, kind, &world, &train_acts, &val_acts, &test_acts)?;
            checkpoint = Some(ck);
            if let Some(t) = thresholds {
                cx.report.thresholds = Some(t);
                resolved.theta_miss = Some(t.theta_miss);
                resolved.theta_diff = Some(t.theta_diff);
            }
            metrics
        }
    };
    cx.report.protest_rate = Some(metrics.protest_rate());
    cx.report.metrics = Some(metrics);
    Ok(RunOutput {
        report: cx.report,
        checkpoint,
        resolved,
    })
}

fn run_model(
    cx: &mut Ctx,
    manifest: &Manifest,
    kind: ModelKind,
    world: &World,
    train_acts: &[ReferenceAct],
    val_acts: &[ReferenceAct],
    test_acts: &[ReferenceAct],
) -> std::result::Result<(Metrics, Checkpoint, Option<Thresholds>), RunFailure> {
    let options = manifest.encode_options();
    let encoder = cx.at(Stage::Encode, Encoder::new(world, options.clone()))?;
    let train = cx.at(Stage::Encode, encoder.encode_all(train_acts))?;
    let val = cx.at(Stage::Encode, encoder.encode_all(val_acts))?;
    let test = cx.at(Stage::Encode, encoder.encode_all(test_acts))?;
    let (dq, dc) = encoder.dims(manifest.task == Task::ObjectAttr);
    let train_config = manifest.train_config();

    match kind {
        ModelKind::Pop | ModelKind::Trpop => {
            let (params, log) = cx.at(Stage::Train, train_pop(&train, Some(&val), &manifest.pop_config(dq, dc), &train_config))?;
            cx.report.train_log = Some(log);
            let metrics = cx.at(Stage::Evaluate, evaluate(&test, |a| predict(&params, a)))?;
            let ck = Checkpoint::pop(kind, manifest.task, options, encoder.vocab().cloned(), params);
            Ok((metrics, ck, None))
        }
        ModelKind::Pipeline => {
            let (params, log) = cx.at(Stage::Train, train_pipeline(&train, &manifest.pipeline_config(dq, dc), &train_config))?;
            cx.report.train_log = Some(log);
            let thresholds = match cx.at(Stage::Tune, manifest.frozen_thresholds())? {
                Some(t) => t,
                None => cx.at(Stage::Tune, tune_thresholds(&params, &val))?,
            };
            let metrics = cx.at(Stage::Evaluate, evaluate(&test, |a| pipeline_predict(&params, &thresholds, a)))?;
            let ck = Checkpoint::pipeline(manifest.task, options, params, Some(thresholds));
            Ok((metrics, ck, Some(thresholds)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(system: &str) -> Manifest {
        Manifest::from_toml(&format!(
            r#"
            name = "small"
            system = "{system}"
            task = "object-attr"
            classes = 20
            images_per_class = 3
            attributes = 12
            attrs_per_object = 4
            d_img = 6
            d_word = 4
            n_train = 120
            n_val = 60
            n_test = 60
            d_ent = 8
            n_sensors = 4
            d_shared = 8
            epochs = 2
            "#
        ))
        .unwrap()
    }

    #[test]
    fn manifest_defaults_and_roundtrip() {
        let m = Manifest::from_toml("").unwrap();
        assert_eq!(m, Manifest::default());
        assert_eq!(m.train_config().epochs, 14);
        let t = small("trpop");
        assert_eq!(t.encode_options().mode, EncodeMode::OneHot);
        assert_eq!(Manifest::from_toml(&t.to_toml().unwrap()).unwrap(), t);
        assert!(Manifest::from_toml("bogus = 1").is_err());
        assert!(Manifest::from_toml("system = \"svm\"").is_err());
        let trpop = Manifest::from_toml("system = \"trpop\"").unwrap();
        assert_eq!(trpop.train_config().epochs, 36);
    }

    #[test]
    fn every_system_runs_and_is_deterministic() {
        for sys in ["pop", "trpop", "pipeline", "random", "majority", "probability", "attr-random", "imgshuffle"] {
            let m = small(sys);
            let a = run_experiment(&m, None).unwrap();
            let b = run_experiment(&m, None).unwrap();
            assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap(), "{sys}");
            assert!(a.report.metrics.is_some());
        }
    }

    #[test]
    fn frozen_thresholds_reproduce_tuned_run() {
        let m = small("pipeline");
        let a = run_experiment(&m, None).unwrap();
        assert!(a.resolved.theta_miss.is_some());
        let b = run_experiment(&a.resolved, None).unwrap();
        assert_eq!(a.report.metrics, b.report.metrics);
    }

    #[test]
    fn failures_name_the_stage() {
        let m = small("cnn");
        let f = run_experiment(&m, None).unwrap_err();
        assert_eq!(f.stage, Stage::Evaluate);
        assert!(f.report.stats.is_some());
        let mut bad = small("pop");
        bad.classes = 1;
        assert_eq!(run_experiment(&bad, None).unwrap_err().stage, Stage::World);
        bad = small("pop");
        bad.max_len = 1;
        assert_eq!(run_experiment(&bad, None).unwrap_err().stage, Stage::Config);
    }

    #[test]
    fn writes_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let m = small("pop");
        run_experiment(&m, Some(dir.path())).unwrap();
        for f in ["report.json", "report.txt", "manifest.toml", "run.json", "checkpoint.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.contains("O+A+I"));
    }
}
