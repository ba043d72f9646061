use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pop_core::baselines::{run_baseline, run_imgshuffle, BaselineContext, BaselineKind};
use pop_core::datagen::{dataset_stats, generate_split, read_jsonl, write_jsonl, ReferenceAct, Split, Task};
use pop_core::embeddings::{EncodedAct, Encoder, World};
use pop_core::harness::{
    evaluate, gradcheck_trials, run_experiment, Checkpoint, CheckpointBody, Manifest, Metrics, ModelKind, System,
};
use pop_core::pipeline::{pipeline_predict, train_pipeline, tune_thresholds};
use pop_core::pop::{predict, train_pop};
use pop_core::Error;

#[derive(Parser)]
#[command(name = "pop", version, about = "Point-or-Protest reference resolution toolkit")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and train/val/test splits.
    GenData(GenData),
    /// Train a model and write a checkpoint.
    Train(Train),
    /// Tune pipeline thresholds on a validation split and store them in the checkpoint.
    TuneThresholds(Tune),
    /// Evaluate a checkpoint on a test split.
    Eval(Eval),
    /// Evaluate a non-learned baseline (or ImgShuffle).
    Baseline(Baseline),
    /// Check analytic gradients against finite differences.
    Gradcheck(Gradcheck),
    /// Print item-combination frequency statistics.
    Stats(Stats),
    /// Run an experiment manifest end to end.
    Run(Run),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value = "object-only")]
    task: Task,
    #[arg(long, default_value_t = 0)]
    world_seed: u64,
    /// Flat TOML with world and dataset keys (same keys as a manifest).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Dataset seed (overrides the --spec file).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    model: ModelKind,
    /// Training acts (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Validation acts; logs validation loss and, for the pipeline, tunes thresholds.
    #[arg(long)]
    val: Option<PathBuf>,
    /// World file; defaults to world.json next to the data.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Flat TOML with model and training keys (same keys as a manifest).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
}

#[derive(Args)]
struct Tune {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    world: Option<PathBuf>,
    /// Where to write the updated checkpoint (defaults to overwriting).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    /// Expected model kind; checked against the checkpoint.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    world: Option<PathBuf>,
    /// Write metrics as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct Baseline {
    /// random | majority | probability | cnn | attr-random | imgshuffle
    #[arg(long)]
    kind: String,
    #[arg(long)]
    test: PathBuf,
    /// Training acts (needed by probability and imgshuffle).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Longest sequence length; labels are Point(0..max_len) and Protest.
    #[arg(long, default_value_t = 5)]
    max_len: usize,
    /// CNN labeler accuracy.
    #[arg(long, default_value_t = 1.0)]
    labeler_accuracy: f64,
    /// ImgShuffle model and training keys (same keys as a manifest).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long)]
    model: ModelKind,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Stats {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::TuneThresholds(a) => tune(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Stats(a) => stats(a),
        Command::Run(a) => run(a),
    }
}

fn load_manifest(path: Option<&Path>) -> Result<Manifest, Error> {
    path.map_or_else(|| Ok(Manifest::default()), Manifest::load)
}

fn load_world(explicit: Option<&Path>, data: &Path) -> Result<World, Error> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => data.parent().unwrap_or(Path::new(".")).join("world.json"),
    };
    World::load(&path)
}

fn read_acts(path: &Path) -> Result<Vec<ReferenceAct>, Error> {
    read_jsonl(path).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn task_of(acts: &[ReferenceAct]) -> Task {
    if acts.first().is_some_and(ReferenceAct::has_attributes) {
        Task::ObjectAttr
    } else {
        Task::ObjectOnly
    }
}

fn write_metrics(metrics: &Metrics, report: Option<&Path>) -> Result<(), Error> {
    print!("{}", metrics.render());
    if let Some(path) = report {
        let text = serde_json::to_string_pretty(metrics)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn gen_data(a: GenData) -> Result<(), Error> {
    let mut m = load_manifest(a.spec.as_deref())?;
    m.task = a.task;
    m.world_seed = a.world_seed;
    if let Some(s) = a.seed {
        m.data_seed = s;
    }
    m.n_train = a.n_train.unwrap_or(m.n_train);
    m.n_val = a.n_val.unwrap_or(m.n_val);
    m.n_test = a.n_test.unwrap_or(m.n_test);
    let world = World::synthetic(&m.world_config(), m.world_seed)?;
    let spec = m.dataset_spec();
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    world.save(&a.out.join("world.json"))?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let acts = generate_split(m.task, &world, &spec, split)?;
        write_jsonl(&a.out.join(format!("{}.jsonl", split.name())), &acts)?;
        println!("{}: {} acts", split.name(), acts.len());
    }
    let text = m.to_toml()?;
    std::fs::write(a.out.join("dataset.toml"), text).map_err(|e| Error::Io {
        path: a.out.join("dataset.toml"),
        source: e,
    })
}

fn train(a: Train) -> Result<(), Error> {
    let mut m = load_manifest(a.config.as_deref())?;
    m.system = System::Model(a.model);
    let world = load_world(a.world.as_deref(), &a.data)?;
    let acts = read_acts(&a.data)?;
    let task = task_of(&acts);
    let options = m.encode_options();
    let encoder = Encoder::new(&world, options.clone())?;
    let train = encoder.encode_all(&acts)?;
    let val = match &a.val {
        Some(p) => Some(encoder.encode_all(&read_acts(p)?)?),
        None => None,
    };
    let (dq, dc) = encoder.dims(task == Task::ObjectAttr);
    let tc = m.train_config();
    let ck = match a.model {
        ModelKind::Pop | ModelKind::Trpop => {
            let (params, log) = train_pop(&train, val.as_deref(), &m.pop_config(dq, dc), &tc)?;
            println!("trained {} for {} epochs, final loss {:.5}", a.model.name(), tc.epochs, log.epoch_loss.last().copied().unwrap_or(f64::NAN));
            Checkpoint::pop(a.model, task, options, encoder.vocab().cloned(), params)
        }
        ModelKind::Pipeline => {
            let (params, log) = train_pipeline(&train, &m.pipeline_config(dq, dc), &tc)?;
            println!("trained pipeline for {} epochs, final hinge loss {:.5}", tc.epochs, log.epoch_loss.last().copied().unwrap_or(f64::NAN));
            let thresholds = match &val {
                Some(v) => Some(tune_thresholds(&params, v)?),
                None => m.frozen_thresholds()?,
            };
            Checkpoint::pipeline(task, options, params, thresholds)
        }
    };
    ck.save(&a.out_checkpoint)
}

fn encoder_for<'w>(ck: &Checkpoint, world: &'w World) -> Result<Encoder<'w>, Error> {
    match &ck.vocab {
        Some(v) => Encoder::with_vocab(world, ck.encode.clone(), v.clone()),
        None => Encoder::new(world, ck.encode.clone()),
    }
}

fn tune(a: Tune) -> Result<(), Error> {
    let mut ck = Checkpoint::load(&a.checkpoint)?;
    let world = load_world(a.world.as_deref(), &a.val)?;
    let val: Vec<EncodedAct> = encoder_for(&ck, &world)?.encode_all(&read_acts(&a.val)?)?;
    let CheckpointBody::Pipeline { params, thresholds } = &mut ck.body else {
        return Err(Error::Unsupported("threshold tuning applies to pipeline checkpoints".into()));
    };
    let t = tune_thresholds(params, &val)?;
    println!("theta_miss = {}\ntheta_diff = {}", t.theta_miss, t.theta_diff);
    *thresholds = Some(t);
    ck.save(a.out.as_deref().unwrap_or(&a.checkpoint))
}

fn eval(a: Eval) -> Result<(), Error> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if let Some(m) = a.model {
        if m != ck.model {
            return Err(Error::Config(format!(
                "checkpoint holds a `{}` model, not `{}`",
                ck.model.name(),
                m.name()
            )));
        }
    }
    let world = load_world(a.world.as_deref(), &a.test)?;
    let test = encoder_for(&ck, &world)?.encode_all(&read_acts(&a.test)?)?;
    let metrics = match &ck.body {
        CheckpointBody::Pop { params } => evaluate(&test, |x| predict(params, x))?,
        CheckpointBody::Pipeline { params, thresholds } => {
            let t = thresholds.ok_or_else(|| Error::Config("pipeline checkpoint has no thresholds; run tune-thresholds".into()))?;
            evaluate(&test, |x| pipeline_predict(params, &t, x))?
        }
    };
    write_metrics(&metrics, a.report.as_deref())
}

fn baseline(a: Baseline) -> Result<(), Error> {
    let world = load_world(a.world.as_deref(), &a.test)?;
    let test = read_acts(&a.test)?;
    let train = match &a.train {
        Some(p) => read_acts(p)?,
        None => Vec::new(),
    };
    let metrics = if a.kind == "imgshuffle" {
        if train.is_empty() {
            return Err(Error::Config("imgshuffle needs --train".into()));
        }
        let m = load_manifest(a.config.as_deref())?;
        let options = m.encode_options();
        let (dq, dc) = Encoder::new(&world, options.clone())?.dims(true);
        let run = run_imgshuffle(&world, &train, &test, &options, &m.pop_config(dq, dc), &m.train_config(), a.seed)?;
        println!("shuffle seed {}", run.shuffle_seed);
        run.metrics
    } else {
        let kind: BaselineKind = a.kind.parse()?;
        if kind == BaselineKind::Probability && train.is_empty() {
            return Err(Error::Config("the probability baseline needs --train".into()));
        }
        let ctx = BaselineContext {
            world: &world,
            train: &train,
            max_len: a.max_len,
            seed: a.seed,
            labeler_accuracy: a.labeler_accuracy,
        };
        run_baseline(kind, &ctx, &test)?
    };
    write_metrics(&metrics, a.report.as_deref())
}

fn gradcheck(a: Gradcheck) -> Result<(), Error> {
    let r = gradcheck_trials(a.model, a.trials, a.tolerance, a.seed)?;
    println!(
        "{} trials passed, max relative error {:.3e} < {:.1e}",
        r.trials,
        r.max_error(),
        r.tolerance
    );
    Ok(())
}

fn stats(a: Stats) -> Result<(), Error> {
    let train = read_acts(&a.train)?;
    let test = match &a.test {
        Some(p) => Some(read_acts(p)?),
        None => None,
    };
    print!("{}", dataset_stats(&train, test.as_deref()).render());
    Ok(())
}

fn run(a: Run) -> Result<(), Error> {
    let m = Manifest::load(&a.manifest)?;
    match run_experiment(&m, Some(&a.out)) {
        Ok(out) => {
            print!("{}", out.report.render());
            Ok(())
        }
        Err(f) => {
            eprintln!("{f}");
            Err(f.error)
        }
    }
}
