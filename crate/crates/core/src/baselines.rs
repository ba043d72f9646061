//! Comparison systems: Random, Majority, Probability, CNN-label matching,
//! AttrRandom and ImgShuffle.
//!
//! The stochastic predictors draw from a generator derived from their seed and
//! the act id, so a prediction does not depend on evaluation order.

use serde::{Deserialize, Serialize};

use crate::datagen::{Gold, ReferenceAct};
use crate::embeddings::{shuffle_images, EncodeOptions, Encoder, World};
use crate::error::{Error, Result};
use crate::harness::{evaluate, Metrics, TrainConfig, TrainLog};
use crate::numerics::{fnv1a, Rng};
use crate::pop::{predict, train_pop, PopConfig, Prediction};

/// Generator for one act under a predictor seed.
pub fn act_rng(seed: u64, act_id: &str) -> Rng {
    Rng::derive(seed, &[fnv1a(act_id.as_bytes())])
}

/// Label `k < max_len` means Point(k); label `max_len` means Protest.
fn label_to_prediction(label: usize, max_len: usize) -> Prediction {
    if label == max_len {
        Prediction::Protest
    } else {
        Prediction::Point(label)
    }
}

/// Uniform over the `max_len + 1` labels, independent of the act's own
/// length. A pointer past the end of a shorter act is kept and scores wrong.
pub fn random_predict(max_len: usize, rng: &mut Rng) -> Prediction {
    label_to_prediction(rng.below(max_len + 1), max_len)
}

pub fn majority_predict(_act: &ReferenceAct) -> Prediction {
    Prediction::Protest
}

/// Marginal distribution of outcome labels over a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub max_len: usize,
    /// `probs[k]` for Point(k), `probs[max_len]` for Protest.
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn estimate(train: &[ReferenceAct], max_len: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::contract("cannot estimate a label distribution from no acts"));
        }
        let mut counts = vec![0usize; max_len + 1];
        for act in train {
            match act.gold {
                Gold::Point(i) if i < max_len => counts[i] += 1,
                Gold::Point(i) => {
                    return Err(Error::contract(format!(
                        "act `{}` points at {i}, beyond max_len {max_len}",
                        act.id
                    )))
                }
                Gold::Anomaly(_) => counts[max_len] += 1,
            }
        }
        let n = train.len() as f64;
        Ok(LabelDistribution {
            max_len,
            probs: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    /// All mass on Protest.
    pub fn always_protest(max_len: usize) -> Self {
        let mut probs = vec![0.0; max_len + 1];
        probs[max_len] = 1.0;
        LabelDistribution { max_len, probs }
    }

    pub fn sample(&self, rng: &mut Rng) -> Prediction {
        label_to_prediction(rng.weighted_index(&self.probs), self.max_len)
    }
}

/// Samples an outcome label from the marginal training distribution,
/// ignoring the act's content and length.
pub fn probability_predict(dist: &LabelDistribution, rng: &mut Rng) -> Prediction {
    dist.sample(rng)
}

/// Stand-in image classifier: returns an image's true object name with
/// probability `p_true`, otherwise a uniformly chosen other label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLabeler {
    pub p_true: f64,
    pub seed: u64,
    pub labels: Vec<String>,
}

impl SyntheticLabeler {
    pub fn new(p_true: f64, seed: u64, labels: Vec<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_true) {
            return Err(Error::config(format!("labeler accuracy {p_true} outside [0, 1]")));
        }
        Ok(SyntheticLabeler { p_true, seed, labels })
    }

    /// Labeler over the world's object names.
    pub fn for_world(world: &World, p_true: f64, seed: u64) -> Result<Self> {
        Self::new(p_true, seed, world.objects().to_vec())
    }

    /// Label for `image_id`, whose true class is `object`. Deterministic in
    /// `(image_id, seed)`.
    pub fn label(&self, image_id: &str, object: &str) -> String {
        let mut rng = act_rng(self.seed, image_id);
        if rng.bernoulli(self.p_true) {
            return object.to_string();
        }
        let others: Vec<&String> = self.labels.iter().filter(|l| l.as_str() != object).collect();
        match rng.choose(&others) {
            Some(l) => (*l).clone(),
            None => object.to_string(),
        }
    }
}

/// Case-insensitive containment in either direction, after trimming.
pub fn lax_match(query: &str, label: &str) -> bool {
    let q = query.trim().to_lowercase();
    let l = label.trim().to_lowercase();
    !q.is_empty() && !l.is_empty() && (l.contains(&q) || q.contains(&l))
}

/// Points at the single item whose label matches the query noun; protests
/// when none or several match.
pub fn cnn_decide<S: AsRef<str>>(query: &str, labels: &[S]) -> Prediction {
    let mut matches = labels.iter().enumerate().filter(|(_, l)| lax_match(query, l.as_ref()));
    match (matches.next(), matches.next()) {
        (Some((k, _)), None) => Prediction::Point(k),
        _ => Prediction::Protest,
    }
}

pub fn cnn_predict(act: &ReferenceAct, labeler: &SyntheticLabeler) -> Result<Prediction> {
    if act.has_attributes() {
        return Err(Error::Unsupported(format!(
            "act `{}` has attributes; the CNN baseline handles object-only acts",
            act.id
        )));
    }
    let labels: Vec<String> = act.items.iter().map(|it| labeler.label(&it.image_id, &it.object)).collect();
    Ok(cnn_decide(&act.query.noun, &labels))
}

/// Points uniformly at one of the items carrying the query's attribute;
/// protests when there is none.
pub fn attr_random_predict(act: &ReferenceAct, rng: &mut Rng) -> Result<Prediction> {
    let Some(attr) = act.query.attribute.as_deref() else {
        return Err(Error::Unsupported(format!(
            "act `{}` has no query attribute; AttrRandom needs object+attribute acts",
            act.id
        )));
    };
    let hits: Vec<usize> = act
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| it.attribute.as_deref() == Some(attr))
        .map(|(k, _)| k)
        .collect();
    Ok(rng.choose(&hits).map_or(Prediction::Protest, |&k| Prediction::Point(k)))
}

/// Non-learned baseline kinds, for configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Random,
    Majority,
    Probability,
    Cnn,
    AttrRandom,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "majority" => Ok(BaselineKind::Majority),
            "probability" => Ok(BaselineKind::Probability),
            "cnn" => Ok(BaselineKind::Cnn),
            "attr-random" => Ok(BaselineKind::AttrRandom),
            other => Err(Error::config(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Everything a baseline may need besides the test acts.
pub struct BaselineContext<'a> {
    pub world: &'a World,
    pub train: &'a [ReferenceAct],
    pub max_len: usize,
    pub seed: u64,
    /// CNN labeler accuracy.
    pub labeler_accuracy: f64,
}

pub fn run_baseline(kind: BaselineKind, ctx: &BaselineContext<'_>, test: &[ReferenceAct]) -> Result<Metrics> {
    match kind {
        BaselineKind::Random => evaluate(test, |a| Ok(random_predict(ctx.max_len, &mut act_rng(ctx.seed, &a.id)))),
        BaselineKind::Majority => evaluate(test, |a| Ok(majority_predict(a))),
        BaselineKind::Probability => {
            let dist = LabelDistribution::estimate(ctx.train, ctx.max_len)?;
            evaluate(test, |a| Ok(probability_predict(&dist, &mut act_rng(ctx.seed, &a.id))))
        }
        BaselineKind::Cnn => {
            let labeler = SyntheticLabeler::for_world(ctx.world, ctx.labeler_accuracy, ctx.seed)?;
            evaluate(test, |a| cnn_predict(a, &labeler))
        }
        BaselineKind::AttrRandom => evaluate(test, |a| attr_random_predict(a, &mut act_rng(ctx.seed, &a.id))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImgShuffleRun {
    pub shuffle_seed: u64,
    pub metrics: Metrics,
    pub log: TrainLog,
}

/// Trains a fresh PoP on a world whose image vectors were deranged with
/// `shuffle_seed`, and evaluates it on `test` encoded through the same
/// shuffled world.
pub fn run_imgshuffle(
    world: &World,
    train: &[ReferenceAct],
    test: &[ReferenceAct],
    encode: &EncodeOptions,
    pop: &PopConfig,
    train_config: &TrainConfig,
    shuffle_seed: u64,
) -> Result<ImgShuffleRun> {
    if let Some(a) = train.iter().chain(test).find(|a| !a.has_attributes()) {
        return Err(Error::Unsupported(format!(
            "act `{}` has no attributes; ImgShuffle runs on object+attribute data",
            a.id
        )));
    }
    let (shuffled, _) = shuffle_images(world, shuffle_seed)?;
    let encoder = Encoder::new(&shuffled, encode.clone())?;
    let train_enc = encoder.encode_all(train)?;
    let test_enc = encoder.encode_all(test)?;
    let (params, log) = train_pop(&train_enc, None, pop, train_config)?;
    let metrics = evaluate(&test_enc, |a| predict(&params, a))?;
    Ok(ImgShuffleRun {
        shuffle_seed,
        metrics,
        log,
    })
}
