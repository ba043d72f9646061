//! Max-margin embedding pipeline with two similarity thresholds.
//!
//! Queries and candidates are mapped linearly into a shared space and trained
//! with a cosine hinge loss on (query, positive, negative) triples. At test
//! time the system protests when no candidate is similar enough to the query
//! or when the two best candidates are too close to call; otherwise it points
//! at the most similar one. The thresholds are tuned separately by grid search.

use serde::{Deserialize, Serialize};

use crate::datagen::Gold;
use crate::embeddings::EncodedAct;
use crate::error::{Error, Result};
use crate::harness::{is_correct, train, Parameters, TrainConfig, TrainLog, Trainable};
use crate::numerics::{dot, norm, Matrix, Rng};
use crate::pop::Prediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub d_query: usize,
    pub d_cand: usize,
    pub d_shared: usize,
    pub margin: f64,
    /// Draw negatives from random candidates anywhere in the corpus instead
    /// of the other items of the same act.
    pub corpus_negatives: bool,
}

impl PipelineConfig {
    pub fn new(d_query: usize, d_cand: usize) -> Self {
        PipelineConfig {
            d_query,
            d_cand,
            d_shared: 300,
            margin: 0.5,
            corpus_negatives: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_query == 0 || self.d_cand == 0 || self.d_shared == 0 {
            return Err(Error::config("all pipeline dimensions must be at least 1"));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub config: PipelineConfig,
    /// Query map, `d_shared × d_query`.
    pub m_q: Matrix,
    /// Candidate map, `d_shared × d_cand`.
    pub m_o: Matrix,
}

impl PipelineParams {
    pub fn init(config: &PipelineConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(PipelineParams {
            m_q: Matrix::glorot(config.d_shared, config.d_query, rng),
            m_o: Matrix::glorot(config.d_shared, config.d_cand, rng),
            config: config.clone(),
        })
    }

    /// Cosine between the mapped query and each mapped candidate.
    pub fn similarities(&self, act: &EncodedAct) -> Result<Vec<f64>> {
        self.check_dims(&act.query, act.candidates.iter().map(Vec::as_slice))?;
        let u = self.m_q.matvec_unchecked(&act.query);
        Ok(act
            .candidates
            .iter()
            .map(|c| cosine_or_zero(&u, &self.m_o.matvec_unchecked(c)))
            .collect())
    }

    fn check_dims<'a>(&self, query: &[f64], candidates: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        if query.len() != self.config.d_query {
            return Err(Error::contract(format!(
                "query has dimension {}, pipeline expects {}",
                query.len(),
                self.config.d_query
            )));
        }
        if let Some(c) = candidates.into_iter().find(|c| c.len() != self.config.d_cand) {
            return Err(Error::contract(format!(
                "candidate has dimension {}, pipeline expects {}",
                c.len(),
                self.config.d_cand
            )));
        }
        Ok(())
    }
}

fn cosine_or_zero(u: &[f64], v: &[f64]) -> f64 {
    cosine_with_grads(u, v).map_or(0.0, |(c, _, _)| c)
}

/// Cosine of `u` and `v` with its gradients
/// `v/(|u||v|) − c·u/|u|²` and `u/(|u||v|) − c·v/|v|²`.
/// `None` when either vector has zero norm.
fn cosine_with_grads(u: &[f64], v: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let c = dot(u, v) / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let du = u.iter().zip(v).map(|(&a, &b)| b * inv - c * a / (nu * nu)).collect();
    let dv = u.iter().zip(v).map(|(&a, &b)| a * inv - c * b / (nv * nv)).collect();
    Some((c, du, dv))
}

/// One training example: a query, the candidate it denotes and one that it
/// does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    /// Id of the act the query and positive came from.
    pub act_id: String,
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// One triple per non-gold candidate of every successful act. Anomalous acts
/// contribute nothing.
pub fn extract_pairs(acts: &[EncodedAct]) -> Vec<Triple> {
    let mut out = Vec::new();
    for act in acts {
        if let Gold::Point(g) = act.gold {
            for (k, neg) in act.candidates.iter().enumerate() {
                if k != g {
                    out.push(Triple {
                        act_id: act.id.clone(),
                        query: act.query.clone(),
                        positive: act.candidates[g].clone(),
                        negative: neg.clone(),
                    });
                }
            }
        }
    }
    out
}

/// Like [`extract_pairs`] but each negative is a uniformly drawn candidate
/// from a uniformly drawn act of the corpus (possibly the same one).
pub fn extract_pairs_corpus(acts: &[EncodedAct], rng: &mut Rng) -> Vec<Triple> {
    let mut out = Vec::new();
    for act in acts {
        if let Gold::Point(g) = act.gold {
            for _ in 1..act.candidates.len() {
                let other = &acts[rng.below(acts.len())];
                let neg = &other.candidates[rng.below(other.candidates.len())];
                out.push(Triple {
                    act_id: act.id.clone(),
                    query: act.query.clone(),
                    positive: act.candidates[g].clone(),
                    negative: neg.clone(),
                });
            }
        }
    }
    out
}

struct HingeTrace {
    loss: f64,
    pos: Option<(f64, Vec<f64>, Vec<f64>)>,
    neg: Option<(f64, Vec<f64>, Vec<f64>)>,
}

fn hinge_trace(params: &PipelineParams, t: &Triple, margin: f64) -> Result<HingeTrace> {
    params.check_dims(&t.query, [t.positive.as_slice(), t.negative.as_slice()])?;
    let u = params.m_q.matvec_unchecked(&t.query);
    let a = params.m_o.matvec_unchecked(&t.positive);
    let b = params.m_o.matvec_unchecked(&t.negative);
    let pos = cosine_with_grads(&u, &a);
    let neg = cosine_with_grads(&u, &b);
    if pos.is_none() || neg.is_none() {
        log::warn!("zero-norm mapped vector in triple from `{}`; cosine taken as 0", t.act_id);
    }
    let cp = pos.as_ref().map_or(0.0, |p| p.0);
    let cn = neg.as_ref().map_or(0.0, |n| n.0);
    Ok(HingeTrace {
        loss: (margin - cp + cn).max(0.0),
        pos,
        neg,
    })
}

/// `max(0, margin − cos(M_q q, M_o pos) + cos(M_q q, M_o neg))`.
pub fn hinge_loss(q: &[f64], pos: &[f64], neg: &[f64], params: &PipelineParams, margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::contract("margin must be positive"));
    }
    let t = Triple {
        act_id: String::new(),
        query: q.to_vec(),
        positive: pos.to_vec(),
        negative: neg.to_vec(),
    };
    Ok(hinge_trace(params, &t, margin)?.loss)
}

impl Parameters for PipelineParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.m_q.as_slice(), self.m_o.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.m_q.as_mut_slice(), self.m_o.as_mut_slice()]
    }
}

impl Trainable for PipelineParams {
    type Example = Triple;

    fn example_id(example: &Triple) -> &str {
        &example.act_id
    }

    fn loss(&self, t: &Triple) -> Result<f64> {
        Ok(hinge_trace(self, t, self.config.margin)?.loss)
    }

    fn loss_and_grad(&self, t: &Triple) -> Result<(f64, Self)> {
        let tr = hinge_trace(self, t, self.config.margin)?;
        let mut grad = self.zeros_like();
        if tr.loss > 0.0 {
            let mut du = vec![0.0; self.config.d_shared];
            if let Some((_, dcu, dca)) = &tr.pos {
                du.iter_mut().zip(dcu).for_each(|(d, g)| *d -= g);
                let da: Vec<f64> = dca.iter().map(|g| -g).collect();
                grad.m_o.add_outer(1.0, &da, &t.positive);
            }
            if let Some((_, dcu, dcb)) = &tr.neg {
                du.iter_mut().zip(dcu).for_each(|(d, g)| *d += g);
                grad.m_o.add_outer(1.0, dcb, &t.negative);
            }
            grad.m_q.add_outer(1.0, &du, &t.query);
        }
        Ok((tr.loss, grad))
    }
}

/// Initializes from `train_config.seed`, extracts triples and trains by
/// online SGD on the hinge loss.
pub fn train_pipeline(
    acts: &[EncodedAct],
    config: &PipelineConfig,
    train_config: &TrainConfig,
) -> Result<(PipelineParams, TrainLog)> {
    let mut rng = Rng::derive(train_config.seed, &[0x5049_5045]);
    let mut params = PipelineParams::init(config, &mut rng)?;
    let triples = if config.corpus_negatives {
        extract_pairs_corpus(acts, &mut rng)
    } else {
        extract_pairs(acts)
    };
    if triples.is_empty() && train_config.epochs > 0 {
        return Err(Error::contract("no training triples: the data has no successful acts"));
    }
    let log = train(&mut params, &triples, None, train_config)?;
    Ok((params, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Protest when the best similarity falls below this.
    pub theta_miss: f64,
    /// Protest when the top-two gap falls below this.
    pub theta_diff: f64,
}

impl Thresholds {
    /// Never protests.
    pub const NEVER: Thresholds = Thresholds {
        theta_miss: -1.0,
        theta_diff: 0.0,
    };
}

pub const THETA_MISS_STEPS: usize = 40;
pub const THETA_DIFF_STEPS: usize = 50;

/// `i`-th point of {−1.0, −0.95, …, 1.0}.
pub fn theta_miss_at(i: usize) -> f64 {
    (i as f64 - 20.0) / 20.0
}

/// `j`-th point of {0, 0.01, …, 0.5}.
pub fn theta_diff_at(j: usize) -> f64 {
    j as f64 / 100.0
}

/// The two threshold rules applied to a similarity profile.
pub fn decide(sims: &[f64], thresholds: &Thresholds) -> Prediction {
    let Some(best) = crate::numerics::argmax(sims) else {
        return Prediction::Protest;
    };
    let top = sims[best];
    if top < thresholds.theta_miss {
        return Prediction::Protest;
    }
    if sims.len() >= 2 {
        let second = sims
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != best)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        if top - second < thresholds.theta_diff {
            return Prediction::Protest;
        }
    }
    Prediction::Point(best)
}

pub fn pipeline_predict(params: &PipelineParams, thresholds: &Thresholds, act: &EncodedAct) -> Result<Prediction> {
    if act.candidates.is_empty() {
        return Err(Error::contract("act has no candidates"));
    }
    Ok(decide(&params.similarities(act)?, thresholds))
}

/// Grid search maximizing Total accuracy on `validation`; ties go to the
/// smaller θ_miss, then the smaller θ_diff.
pub fn tune_thresholds(params: &PipelineParams, validation: &[EncodedAct]) -> Result<Thresholds> {
    let has_miss = validation.iter().any(|a| a.gold == Gold::Anomaly(crate::datagen::AnomalyKind::Miss));
    let has_mult = validation.iter().any(|a| a.gold == Gold::Anomaly(crate::datagen::AnomalyKind::Mult));
    if !(has_miss && has_mult) {
        log::warn!("validation set lacks an anomaly kind; tuned thresholds may be degenerate");
    }
    let profiles: Vec<(Gold, Vec<f64>)> = validation
        .iter()
        .map(|a| Ok((a.gold, params.similarities(a)?)))
        .collect::<Result<_>>()?;
    let mut best = Thresholds::NEVER;
    let mut best_correct = None;
    for i in 0..=THETA_MISS_STEPS {
        for j in 0..=THETA_DIFF_STEPS {
            let th = Thresholds {
                theta_miss: theta_miss_at(i),
                theta_diff: theta_diff_at(j),
            };
            let correct = profiles.iter().filter(|(g, s)| is_correct(*g, decide(s, &th))).count();
            if best_correct.map_or(true, |b| correct > b) {
                best_correct = Some(correct);
                best = th;
            }
        }
    }
    log::info!(
        "tuned thresholds θ_miss = {}, θ_diff = {} ({} of {} correct)",
        best.theta_miss,
        best.theta_diff,
        best_correct.unwrap_or(0),
        profiles.len()
    );
    Ok(best)
}
