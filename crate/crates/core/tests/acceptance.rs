//! Acceptance suite. Each test prints one PASS/FAIL line to stderr
//! (uncaptured) and then asserts.

use std::io::Write;

use pop_core::baselines::{
    act_rng, attr_random_predict, cnn_predict, majority_predict, probability_predict, random_predict, LabelDistribution,
    SyntheticLabeler,
};
use pop_core::datagen::{generate_split, validate_act, AnomalyKind, DatasetSpec, Gold, ReferenceAct, Split, Task};
use pop_core::embeddings::{EncodeOptions, Encoder, World, WorldConfig};
use pop_core::harness::{
    evaluate, gradcheck_trials, random_pop_instance, run_experiment, Manifest, Metrics, ModelKind, System,
};
use pop_core::numerics::Rng;
use pop_core::pipeline::{
    decide, pipeline_predict, theta_diff_at, theta_miss_at, train_pipeline, tune_thresholds, PipelineConfig, Thresholds,
    THETA_DIFF_STEPS, THETA_MISS_STEPS,
};
use pop_core::pop::{forward, Prediction};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "acceptance {id:>2} [{name}]: {verdict} ({detail})").unwrap();
}

fn default_world() -> World {
    World::synthetic(&WorldConfig::default(), 0).unwrap()
}

fn split(world: &World, task: Task, split: Split, n: usize, seed: u64) -> Vec<ReferenceAct> {
    let spec = DatasetSpec {
        n_train: n,
        n_val: n,
        n_test: n,
        seed,
        ..DatasetSpec::default()
    };
    generate_split(task, world, &spec, split).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn acceptance_01_majority_row() {
    let world = default_world();
    let pool = split(&world, Task::ObjectOnly, Split::Test, 12_000, 0);
    // a test split of exactly 7,000 successful, 1,500 MissRef and 1,500 MultRef acts
    let take = |pred: fn(&Gold) -> bool, k: usize| pool.iter().filter(|a| pred(&a.gold)).take(k).cloned().collect::<Vec<_>>();
    let mut exact = take(|g| !g.is_anomaly(), 7000);
    exact.extend(take(|g| *g == Gold::Anomaly(AnomalyKind::Miss), 1500));
    exact.extend(take(|g| *g == Gold::Anomaly(AnomalyKind::Mult), 1500));
    assert_eq!(exact.len(), 10_000);
    let m = evaluate(&exact, |a| Ok(majority_predict(a))).unwrap();
    let exact_ok = (m.total, m.pointing, m.missref, m.multref) == (30.0, 0.0, 100.0, 100.0);

    // a raw generated split: category scores are exact, Total is the anomaly share
    let raw = split(&world, Task::ObjectOnly, Split::Test, 10_000, 0);
    let r = evaluate(&raw, |a| Ok(majority_predict(a))).unwrap();
    let anomalies = raw.iter().filter(|a| a.gold.is_anomaly()).count();
    let raw_ok = r.pointing == 0.0
        && r.missref == 100.0
        && r.multref == 100.0
        && r.total_count.correct == anomalies;
    let pass = exact_ok && raw_ok;
    report(
        1,
        "Majority 30/0/100/100",
        pass,
        &format!(
            "exact split {:.1}/{:.1}/{:.1}/{:.1}; raw split Total {:.2}",
            m.total, m.pointing, m.missref, m.multref, r.total
        ),
    );
    assert!(pass);
}

#[test]
fn acceptance_02_random_row() {
    let world = default_world();
    let test = split(&world, Task::ObjectOnly, Split::Test, 10_000, 0);
    let totals: Vec<f64> = (0..10u64)
        .map(|seed| evaluate(&test, |a| Ok(random_predict(5, &mut act_rng(seed, &a.id)))).unwrap().total)
        .collect();
    let m = mean(&totals);
    let pass = (15.7..=17.7).contains(&m);
    report(2, "Random Total in [15.7, 17.7]", pass, &format!("mean Total {m:.2} over 10 seeds"));
    assert!(pass);
}

#[test]
fn acceptance_03_probability_row() {
    let world = default_world();
    let train = split(&world, Task::ObjectOnly, Split::Train, 40_000, 0);
    let test = split(&world, Task::ObjectOnly, Split::Test, 10_000, 0);
    let dist = LabelDistribution::estimate(&train, 5).unwrap();
    let runs: Vec<Metrics> = (0..10u64)
        .map(|seed| evaluate(&test, |a| Ok(probability_predict(&dist, &mut act_rng(seed, &a.id)))).unwrap())
        .collect();
    let total = mean(&runs.iter().map(|m| m.total).collect::<Vec<_>>());
    let pointing = mean(&runs.iter().map(|m| m.pointing).collect::<Vec<_>>());
    let miss = mean(&runs.iter().map(|m| m.missref).collect::<Vec<_>>());
    let mult = mean(&runs.iter().map(|m| m.multref).collect::<Vec<_>>());
    let pass = (20.5..=23.5).contains(&total)
        && (16.5..=19.5).contains(&pointing)
        && (28.5..=31.5).contains(&miss)
        && (28.5..=31.5).contains(&mult);
    report(
        3,
        "Probability 22/18/30/30",
        pass,
        &format!("mean {total:.2}/{pointing:.2}/{miss:.2}/{mult:.2} over 10 seeds"),
    );
    assert!(pass);
}

#[test]
fn acceptance_04_attr_random_multref_zero() {
    let world = default_world();
    let test = split(&world, Task::ObjectAttr, Split::Test, 10_000, 0);
    let m = evaluate(&test, |a| attr_random_predict(a, &mut act_rng(0, &a.id))).unwrap();
    let pass = m.multref_count.n > 0 && m.multref_count.correct == 0;
    report(
        4,
        "AttrRandom MultRef = 0",
        pass,
        &format!("MultRef {}/{} correct", m.multref_count.correct, m.multref_count.n),
    );
    assert!(pass);
}

#[test]
fn acceptance_05_gradient_correctness() {
    let pop = gradcheck_trials(ModelKind::Pop, 24, 1e-4, 0);
    let trpop = gradcheck_trials(ModelKind::Trpop, 12, 1e-4, 1);
    let pipe = gradcheck_trials(ModelKind::Pipeline, 12, 1e-4, 2);
    let detail = format!(
        "PoP 24 trials max {:?}, one-hot 12 trials max {:?}, pipeline 12 trials max {:?}",
        pop.as_ref().map(|r| r.max_error()),
        trpop.as_ref().map(|r| r.max_error()),
        pipe.as_ref().map(|r| r.max_error())
    );
    let pass = pop.is_ok() && trpop.is_ok() && pipe.is_ok();
    report(5, "gradcheck < 1e-4", pass, &detail);
    assert!(pass);
}

#[test]
fn acceptance_06_permutation_equivariance() {
    let mut rng = Rng::new(6);
    let mut worst = 0.0f64;
    for t in 0..1000 {
        let n = 2 + t % 4;
        let (p, act) = random_pop_instance(&mut rng, n, Gold::Point(0), t % 2 == 1);
        let mut rho: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut rho);
        let mut moved = act.clone();
        for (k, &dst) in rho.iter().enumerate() {
            moved.candidates[dst] = act.candidates[k].clone();
        }
        let a = forward(&p, &act).unwrap().probs;
        let b = forward(&p, &moved).unwrap().probs;
        for k in 0..n {
            worst = worst.max((a[k] - b[rho[k]]).abs());
        }
        worst = worst.max((a[n] - b[n]).abs());
    }
    let pass = worst <= 1e-9;
    report(6, "permutation equivariance", pass, &format!("1000 triples, max deviation {worst:.2e}"));
    assert!(pass);
}

#[test]
fn acceptance_07_generator_fidelity() {
    let world = default_world();
    let mut lines = Vec::new();
    let mut pass = true;
    for task in [Task::ObjectOnly, Task::ObjectAttr] {
        let acts = split(&world, task, Split::Test, 10_000, 7);
        let n = acts.len() as f64;
        let frac = |k| acts.iter().filter(|a| a.gold == Gold::Anomaly(k)).count() as f64 / n;
        let (miss, mult) = (frac(AnomalyKind::Miss), frac(AnomalyKind::Mult));
        let lens: Vec<f64> = (2..=5).map(|l| acts.iter().filter(|a| a.len() == l).count() as f64 / n).collect();
        let valid = acts.iter().filter(|a| validate_act(a, 5).is_ok()).count();
        let ok = (miss - 0.15).abs() <= 0.01
            && (mult - 0.15).abs() <= 0.01
            && lens.iter().all(|f| (f - 0.25).abs() <= 0.015)
            && valid == acts.len();
        pass &= ok;
        lines.push(format!(
            "{task:?}: miss {miss:.4} mult {mult:.4} lengths {:?} valid {valid}/{}",
            lens.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>(),
            acts.len()
        ));
    }
    report(7, "generator fidelity", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn acceptance_08_perfect_labeler() {
    let world = default_world();
    let test = split(&world, Task::ObjectOnly, Split::Test, 10_000, 0);
    let labeler = SyntheticLabeler::for_world(&world, 1.0, 0).unwrap();
    let m = evaluate(&test, |a| cnn_predict(a, &labeler)).unwrap();
    let pass = m.total == 100.0;
    report(8, "perfect labeler Total = 100", pass, &format!("Total {:.2}", m.total));
    assert!(pass);
}

#[test]
fn acceptance_09_learning_sanity() {
    let manifest = |system: ModelKind| Manifest {
        name: format!("learning-{}", system.name()),
        system: System::Model(system),
        task: Task::ObjectOnly,
        n_train: 5000,
        n_val: 500,
        n_test: 2000,
        ..Manifest::default()
    };
    let pop = run_experiment(&manifest(ModelKind::Pop), None).unwrap().report.metrics.unwrap();
    let trpop = run_experiment(&manifest(ModelKind::Trpop), None).unwrap().report.metrics.unwrap();
    let pass = pop.total >= 55.0 && pop.pointing >= 60.0 && (trpop.total - pop.total).abs() <= 8.0;
    report(
        9,
        "learning sanity",
        pass,
        &format!(
            "PoP 14 epochs Total {:.1} Pointing {:.1}; one-hot 36 epochs Total {:.1} Pointing {:.1}",
            pop.total, pop.pointing, trpop.total, trpop.pointing
        ),
    );
    assert!(pass);
}

#[test]
fn acceptance_10_pipeline_heuristics() {
    let th = |m, d| Thresholds {
        theta_miss: m,
        theta_diff: d,
    };
    let micro = decide(&[0.05, 0.08], &th(0.1, 0.05)) == Prediction::Protest
        && decide(&[0.90, 0.88], &th(0.1, 0.05)) == Prediction::Protest
        && decide(&[0.90, 0.30], &th(0.1, 0.05)) == Prediction::Point(0);

    let world = World::synthetic(
        &WorldConfig {
            classes: 60,
            images_per_class: 5,
            ..WorldConfig::default()
        },
        1,
    )
    .unwrap();
    let spec = DatasetSpec {
        n_train: 1500,
        n_val: 600,
        seed: 1,
        ..DatasetSpec::default()
    };
    let enc = Encoder::new(&world, EncodeOptions::default()).unwrap();
    let train = enc.encode_all(&generate_split(Task::ObjectOnly, &world, &spec, Split::Train).unwrap()).unwrap();
    let val = enc.encode_all(&generate_split(Task::ObjectOnly, &world, &spec, Split::Val).unwrap()).unwrap();
    let (dq, dc) = enc.dims(false);
    let tc = pop_core::harness::TrainConfig {
        epochs: 5,
        ..pop_core::harness::TrainConfig::for_model(ModelKind::Pipeline)
    };
    let (params, _) = train_pipeline(&train, &PipelineConfig::new(dq, dc), &tc).unwrap();
    let tuned = tune_thresholds(&params, &val).unwrap();
    let on_grid = (0..=THETA_MISS_STEPS).any(|i| theta_miss_at(i) == tuned.theta_miss)
        && (0..=THETA_DIFF_STEPS).any(|j| theta_diff_at(j) == tuned.theta_diff);

    // sweep each threshold upward from the tuned point
    let mut violations = 0usize;
    for act in &val {
        let at = |t: &Thresholds| pipeline_predict(&params, t, act).unwrap();
        let mut prev = at(&tuned);
        for i in 0..=THETA_MISS_STEPS {
            let m = theta_miss_at(i);
            if m <= tuned.theta_miss {
                continue;
            }
            let p = at(&th(m, tuned.theta_diff));
            if prev == Prediction::Protest && p != Prediction::Protest {
                violations += 1;
            }
            prev = p;
        }
        let mut prev = at(&tuned);
        for j in 0..=THETA_DIFF_STEPS {
            let d = theta_diff_at(j);
            if d <= tuned.theta_diff {
                continue;
            }
            let p = at(&th(tuned.theta_miss, d));
            if act.cardinality() >= 2 && prev == Prediction::Protest && p != Prediction::Protest {
                violations += 1;
            }
            prev = p;
        }
    }
    let pass = micro && on_grid && violations == 0;
    report(
        10,
        "pipeline heuristics",
        pass,
        &format!(
            "micro-suite {}, tuned theta_miss {} theta_diff {}, monotonicity violations {violations}",
            if micro { "ok" } else { "wrong" },
            tuned.theta_miss,
            tuned.theta_diff
        ),
    );
    assert!(pass);
}

#[test]
fn acceptance_11_reproducibility() {
    let text = r#"
        name = "repro"
        system = "pipeline"
        task = "object-attr"
        classes = 80
        images_per_class = 5
        attributes = 40
        n_train = 1500
        n_val = 500
        n_test = 500
        epochs = 3
    "#;
    let pop_text = text.replace("pipeline", "pop");
    let mut pass = true;
    let mut detail = Vec::new();
    for t in [text, pop_text.as_str()] {
        let m = Manifest::from_toml(t).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&m, Some(a.path())).unwrap();
        run_experiment(&m, Some(b.path())).unwrap();
        for f in ["report.json", "checkpoint.json", "manifest.toml"] {
            let same = std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap();
            pass &= same;
            detail.push(format!("{} {f} {}", m.system, if same { "identical" } else { "DIFFERS" }));
        }
    }
    report(11, "manifest reproducibility", pass, &detail.join(", "));
    assert!(pass);
}
