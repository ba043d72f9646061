use serde::{Deserialize, Serialize};

use super::params::Trainable;
use super::train::ModelKind;
use crate::datagen::{AnomalyKind, Gold};
use crate::embeddings::EncodedAct;
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_grad, max_relative_error, Rng, FD_STEP};
use crate::pipeline::{PipelineConfig, PipelineParams, Triple};
use crate::pop::{init_params, PopConfig, PopParams};

/// Maximum relative error between the analytic gradient of `params` on
/// `example` and central finite differences with step `h`.
pub fn gradcheck<M: Trainable>(params: &M, example: &M::Example, h: f64) -> Result<f64> {
    let (_, analytic) = params.loss_and_grad(example)?;
    let x = params.flatten();
    let mut probe = params.clone();
    let mut failure = None;
    let numeric = finite_diff_grad(
        |flat| {
            probe.load_flat(flat);
            match probe.loss(example) {
                Ok(l) => l,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &x,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_relative_error(&analytic.flatten(), &numeric))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub tolerance: f64,
    /// Per-trial maximum relative error.
    pub errors: Vec<f64>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.errors.iter().all(|&e| e < self.tolerance)
    }
}

/// A small random PoP with an act of `n` candidates. With `one_hot` the
/// query is a one-hot vector, as in the tabula-rasa variant.
pub fn random_pop_instance(rng: &mut Rng, n: usize, gold: Gold, one_hot: bool) -> (PopParams, EncodedAct) {
    let d_query = rng.range_inclusive(2, 5);
    let d_cand = rng.range_inclusive(2, 5);
    let config = PopConfig {
        d_ent: rng.range_inclusive(2, 6),
        n_sensors: rng.range_inclusive(1, 4),
        ..PopConfig::new(d_query, d_cand)
    };
    let params = init_params(&config, rng).expect("valid random config");
    let query = if one_hot {
        let mut q = vec![0.0; d_query];
        q[rng.below(d_query)] = 1.0;
        q
    } else {
        rng.gaussian_vec(d_query, 1.0)
    };
    let candidates = (0..n).map(|_| rng.gaussian_vec(d_cand, 1.0)).collect();
    let act = EncodedAct::new("gradcheck", query, candidates, gold).expect("consistent random act");
    (params, act)
}

/// A small random pipeline and a triple on which the hinge is active.
pub fn random_pipeline_instance(rng: &mut Rng) -> (PipelineParams, Triple) {
    let d_query = rng.range_inclusive(2, 5);
    let d_cand = rng.range_inclusive(2, 5);
    // cosines differ by at most 2, so this margin keeps the hinge active
    let config = PipelineConfig {
        d_shared: rng.range_inclusive(2, 6),
        margin: 2.5,
        ..PipelineConfig::new(d_query, d_cand)
    };
    let params = PipelineParams::init(&config, rng).expect("valid random config");
    let triple = Triple {
        act_id: "gradcheck".into(),
        query: rng.gaussian_vec(d_query, 1.0),
        positive: rng.gaussian_vec(d_cand, 1.0),
        negative: rng.gaussian_vec(d_cand, 1.0),
    };
    (params, triple)
}

/// Gradient checks on `trials` random instances of `kind`, cycling the
/// candidate count over 2..=5 and the gold over Point, Miss and Mult.
/// Fails with [`Error::GradCheck`] if any trial reaches `tolerance`.
pub fn gradcheck_trials(kind: ModelKind, trials: usize, tolerance: f64, seed: u64) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed);
    let mut errors = Vec::with_capacity(trials);
    for t in 0..trials {
        let err = match kind {
            ModelKind::Pop | ModelKind::Trpop => {
                let n = 2 + t % 4;
                let gold = match t % 3 {
                    0 => Gold::Point(rng.below(n)),
                    1 => Gold::Anomaly(AnomalyKind::Miss),
                    _ => Gold::Anomaly(AnomalyKind::Mult),
                };
                let (p, act) = random_pop_instance(&mut rng, n, gold, kind == ModelKind::Trpop);
                gradcheck(&p, &act, FD_STEP)?
            }
            ModelKind::Pipeline => {
                let (p, triple) = random_pipeline_instance(&mut rng);
                gradcheck(&p, &triple, FD_STEP)?
            }
        };
        errors.push(err);
    }
    let report = GradcheckReport {
        trials,
        tolerance,
        errors,
    };
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::GradCheck {
            max_rel_error: report.max_error(),
            tolerance,
        })
    }
}
