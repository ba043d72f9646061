use pop_core::baselines::run_imgshuffle;
use pop_core::datagen::{generate_split, DatasetSpec, Split, Task};
use pop_core::embeddings::{EncodeOptions, Encoder, World, WorldConfig};
use pop_core::harness::{ModelKind, Parameters, TrainConfig};
use pop_core::numerics::Rng;
use pop_core::pipeline::{extract_pairs, hinge_loss, train_pipeline, PipelineConfig, PipelineParams, Triple};
use pop_core::pop::{train_pop, PopConfig};

fn default_world() -> World {
    World::synthetic(&WorldConfig::default(), 0).unwrap()
}

fn spec(n_train: usize, n_test: usize) -> DatasetSpec {
    DatasetSpec {
        n_train,
        n_test,
        ..DatasetSpec::default()
    }
}

#[test]
fn pop_epoch_loss_does_not_climb_early() {
    let world = default_world();
    let acts = generate_split(Task::ObjectOnly, &world, &spec(5000, 0), Split::Train).unwrap();
    let enc = Encoder::new(&world, EncodeOptions::default()).unwrap();
    let data = enc.encode_all(&acts).unwrap();
    let (dq, dc) = enc.dims(false);
    let tc = TrainConfig {
        epochs: 5,
        ..TrainConfig::for_model(ModelKind::Pop)
    };
    let (params, log) = train_pop(&data, None, &PopConfig::new(dq, dc), &tc).unwrap();
    assert!(params.all_finite());
    assert_eq!(log.epoch_loss.len(), 5);
    for w in log.epoch_loss.windows(2) {
        assert!(w[1] <= 1.05 * w[0], "{:?}", log.epoch_loss);
    }
    assert!(log.epoch_loss[4] < log.epoch_loss[0]);
}

fn mean_hinge(params: &PipelineParams, triples: &[Triple], margin: f64) -> f64 {
    triples
        .iter()
        .map(|t| hinge_loss(&t.query, &t.positive, &t.negative, params, margin).unwrap())
        .sum::<f64>()
        / triples.len() as f64
}

#[test]
fn pipeline_hinge_drops_well_below_initial() {
    let world = default_world();
    let acts = generate_split(Task::ObjectOnly, &world, &spec(3000, 0), Split::Train).unwrap();
    let enc = Encoder::new(&world, EncodeOptions::default()).unwrap();
    let data = enc.encode_all(&acts).unwrap();
    let (dq, dc) = enc.dims(false);
    let config = PipelineConfig::new(dq, dc);
    let tc = TrainConfig::for_model(ModelKind::Pipeline);
    let triples = extract_pairs(&data);
    // the same initialization train_pipeline draws
    let init = PipelineParams::init(&config, &mut Rng::derive(tc.seed, &[0x5049_5045])).unwrap();
    let (trained, _) = train_pipeline(&data, &config, &tc).unwrap();
    let before = mean_hinge(&init, &triples, config.margin);
    let after = mean_hinge(&trained, &triples, config.margin);
    eprintln!("hinge {before} -> {after}");
    assert!(after < 0.05 * before, "{before} -> {after}");
}

#[test]
fn imgshuffle_without_attributes_collapses() {
    let world = default_world();
    let s = spec(5000, 2000);
    let train = generate_split(Task::ObjectAttr, &world, &s, Split::Train).unwrap();
    let test = generate_split(Task::ObjectAttr, &world, &s, Split::Test).unwrap();
    let tc = TrainConfig::for_model(ModelKind::Pop);
    let enc = Encoder::new(&world, EncodeOptions::default()).unwrap();
    let (dq, dc) = enc.dims(true);
    let pop = PopConfig::new(dq, dc);
    let with_attr = run_imgshuffle(&world, &train, &test, &EncodeOptions::default(), &pop, &tc, 1).unwrap();
    let dropped = EncodeOptions {
        drop_attributes: true,
        ..EncodeOptions::default()
    };
    let without = run_imgshuffle(&world, &train, &test, &dropped, &pop, &tc, 1).unwrap();
    eprintln!(
        "imgshuffle with attributes {:.1}/{:.1}, without {:.1}/{:.1}",
        with_attr.metrics.total, with_attr.metrics.pointing, without.metrics.total, without.metrics.pointing
    );
    assert!(without.metrics.pointing < with_attr.metrics.pointing);
}
