//! The Point-or-Protest network.
//!
//! Candidates are mapped by a shared matrix `V` into entity vectors and the
//! query by `L` into the same space. Dot products give one similarity per
//! candidate; these raw similarities are the pointing logits. Along the
//! anomaly pathway the similarities pass through ψ and are summed, the sum is
//! paired with the candidate count, fed through `A_in` to a layer of sensor
//! cells, combined by `A_out` into one value, and bounded by φ. That anomaly
//! score is appended as logit `n`, and a softmax over the `n + 1` cells yields
//! the output distribution. Argmax at `n` means protest.
//!
//! The same graph serves the one-hot ("tabula rasa") variant; only the input
//! encoding differs.

use serde::{Deserialize, Serialize};

use crate::datagen::Gold;
use crate::embeddings::EncodedAct;
use crate::error::{Error, Result};
use crate::harness::{train, Parameters, TrainConfig, TrainLog, Trainable};
use crate::numerics::{argmax, dot, softmax, Activation, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopConfig {
    pub d_query: usize,
    pub d_cand: usize,
    /// Multimodal (entity) space dimension.
    pub d_ent: usize,
    pub n_sensors: usize,
    /// Contrast nonlinearity on the anomaly pathway.
    pub psi: Activation,
    /// Bounding nonlinearity on the anomaly score.
    pub phi: Activation,
    /// Apply ψ to the sensor cells (identity otherwise).
    pub sensor_nonlinearity: bool,
    pub use_bias: bool,
}

impl PopConfig {
    pub fn new(d_query: usize, d_cand: usize) -> Self {
        PopConfig {
            d_query,
            d_cand,
            d_ent: 300,
            n_sensors: 100,
            psi: Activation::Relu,
            phi: Activation::Sigmoid,
            sensor_nonlinearity: true,
            use_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_query == 0 || self.d_cand == 0 || self.d_ent == 0 || self.n_sensors == 0 {
            return Err(Error::config("all PoP dimensions must be at least 1"));
        }
        Ok(())
    }

    fn sensor_activation(&self) -> Activation {
        if self.sensor_nonlinearity {
            self.psi
        } else {
            Activation::Identity
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopParams {
    pub config: PopConfig,
    /// Entity map, `d_ent × d_cand`.
    pub v: Matrix,
    /// Query map, `d_ent × d_query`.
    pub l: Matrix,
    /// Sensor input map over `[cumulative similarity, cardinality]`, `n_sensors × 2`.
    pub a_in: Matrix,
    /// Sensor combiner, `1 × n_sensors`.
    pub a_out: Matrix,
    /// Sensor biases (empty unless `use_bias`).
    pub b_in: Vec<f64>,
    /// Combiner bias (empty unless `use_bias`).
    pub b_out: Vec<f64>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(config: &PopConfig, rng: &mut Rng) -> Result<PopParams> {
    config.validate()?;
    let bias = |n: usize| if config.use_bias { vec![0.0; n] } else { Vec::new() };
    Ok(PopParams {
        v: Matrix::glorot(config.d_ent, config.d_cand, rng),
        l: Matrix::glorot(config.d_ent, config.d_query, rng),
        a_in: Matrix::glorot(config.n_sensors, 2, rng),
        a_out: Matrix::glorot(1, config.n_sensors, rng),
        b_in: bias(config.n_sensors),
        b_out: bias(1),
        config: config.clone(),
    })
}

impl PopParams {
    pub fn zeros(config: &PopConfig) -> Self {
        let bias = |n: usize| if config.use_bias { vec![0.0; n] } else { Vec::new() };
        PopParams {
            v: Matrix::zeros(config.d_ent, config.d_cand),
            l: Matrix::zeros(config.d_ent, config.d_query),
            a_in: Matrix::zeros(config.n_sensors, 2),
            a_out: Matrix::zeros(1, config.n_sensors),
            b_in: bias(config.n_sensors),
            b_out: bias(1),
            config: config.clone(),
        }
    }

    /// Checks that matrix shapes agree with the config.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let bias_len = |n: usize| if c.use_bias { n } else { 0 };
        let ok = (self.v.rows(), self.v.cols()) == (c.d_ent, c.d_cand)
            && (self.l.rows(), self.l.cols()) == (c.d_ent, c.d_query)
            && (self.a_in.rows(), self.a_in.cols()) == (c.n_sensors, 2)
            && (self.a_out.rows(), self.a_out.cols()) == (1, c.n_sensors)
            && self.b_in.len() == bias_len(c.n_sensors)
            && self.b_out.len() == bias_len(1);
        if ok {
            Ok(())
        } else {
            Err(Error::contract("PoP parameter shapes disagree with the config"))
        }
    }
}

impl Parameters for PopParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.v.as_slice(),
            self.l.as_slice(),
            self.a_in.as_slice(),
            self.a_out.as_slice(),
            &self.b_in,
            &self.b_out,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.v.as_mut_slice(),
            self.l.as_mut_slice(),
            self.a_in.as_mut_slice(),
            self.a_out.as_mut_slice(),
            &mut self.b_in,
            &mut self.b_out,
        ]
    }
}

impl Trainable for PopParams {
    type Example = EncodedAct;

    fn example_id(example: &EncodedAct) -> &str {
        &example.id
    }

    fn loss(&self, example: &EncodedAct) -> Result<f64> {
        loss(&forward(self, example)?, example.gold)
    }

    fn loss_and_grad(&self, example: &EncodedAct) -> Result<(f64, Self)> {
        let trace = forward(self, example)?;
        let l = loss(&trace, example.gold)?;
        Ok((l, backward(self, &trace, example.gold)?))
    }
}

/// Every intermediate of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input_query: Vec<f64>,
    pub input_candidates: Vec<Vec<f64>>,
    pub entity_vecs: Vec<Vec<f64>>,
    pub query_vec: Vec<f64>,
    /// Raw query–entity dot products.
    pub sims: Vec<f64>,
    /// ψ(sims).
    pub sharpened: Vec<f64>,
    pub cum_sim: f64,
    pub cardinality: f64,
    pub sensor_pre: Vec<f64>,
    pub sensor_post: Vec<f64>,
    pub anomaly_raw: f64,
    pub anomaly_score: f64,
    /// `sims ‖ anomaly_score`.
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn n(&self) -> usize {
        self.sims.len()
    }
}

pub fn forward(params: &PopParams, act: &EncodedAct) -> Result<ForwardTrace> {
    let c = &params.config;
    if act.candidates.is_empty() {
        return Err(Error::contract("forward needs at least one candidate"));
    }
    if act.query.len() != c.d_query {
        return Err(Error::contract(format!(
            "query has dimension {}, model expects {}",
            act.query.len(),
            c.d_query
        )));
    }
    if let Some(bad) = act.candidates.iter().find(|v| v.len() != c.d_cand) {
        return Err(Error::contract(format!(
            "candidate has dimension {}, model expects {}",
            bad.len(),
            c.d_cand
        )));
    }

    let query_vec = params.l.matvec_unchecked(&act.query);
    let entity_vecs: Vec<Vec<f64>> = act.candidates.iter().map(|x| params.v.matvec_unchecked(x)).collect();
    let sims: Vec<f64> = entity_vecs.iter().map(|e| dot(&query_vec, e)).collect();
    let sharpened: Vec<f64> = sims.iter().map(|&s| c.psi.apply(s)).collect();
    let cum_sim: f64 = sharpened.iter().sum();
    let cardinality = sims.len() as f64;

    let mut sensor_pre = params.a_in.matvec_unchecked(&[cum_sim, cardinality]);
    for (z, b) in sensor_pre.iter_mut().zip(&params.b_in) {
        *z += b;
    }
    let sens = c.sensor_activation();
    let sensor_post: Vec<f64> = sensor_pre.iter().map(|&z| sens.apply(z)).collect();
    let anomaly_raw = dot(params.a_out.row(0), &sensor_post) + params.b_out.first().copied().unwrap_or(0.0);
    let anomaly_score = c.phi.apply(anomaly_raw);

    let mut logits = sims.clone();
    logits.push(anomaly_score);
    let probs = softmax(&logits)?;

    Ok(ForwardTrace {
        input_query: act.query.clone(),
        input_candidates: act.candidates.clone(),
        entity_vecs,
        query_vec,
        sims,
        sharpened,
        cum_sim,
        cardinality,
        sensor_pre,
        sensor_post,
        anomaly_raw,
        anomaly_score,
        logits,
        probs,
    })
}

fn target_cell(gold: Gold, n: usize) -> Result<usize> {
    match gold {
        Gold::Point(i) if i >= n => Err(Error::contract(format!("gold index {i} out of range for {n} candidates"))),
        g => Ok(g.target_cell(n)),
    }
}

/// Negative log-likelihood of the gold cell (both anomaly kinds map to cell `n`).
pub fn loss(trace: &ForwardTrace, gold: Gold) -> Result<f64> {
    Ok(-trace.probs[target_cell(gold, trace.n())?].ln())
}

/// Exact gradient of [`loss`] with respect to every parameter.
///
/// The similarities reach the loss along two routes, directly as logits and
/// through the anomaly pathway; their gradients are summed before flowing
/// into `V` and `L`.
pub fn backward(params: &PopParams, trace: &ForwardTrace, gold: Gold) -> Result<PopParams> {
    let c = &params.config;
    let n = trace.n();
    let target = target_cell(gold, n)?;
    let mut grad = PopParams::zeros(c);

    // softmax + cross-entropy
    let mut dlogits = trace.probs.clone();
    dlogits[target] -= 1.0;
    let mut dsims = dlogits[..n].to_vec();
    let dscore = dlogits[n];

    // anomaly pathway, top to bottom
    let draw = dscore * c.phi.derivative(trace.anomaly_raw, trace.anomaly_score);
    for (g, &h) in grad.a_out.as_mut_slice().iter_mut().zip(&trace.sensor_post) {
        *g = draw * h;
    }
    if c.use_bias {
        grad.b_out[0] = draw;
    }
    let sens = c.sensor_activation();
    let dpre: Vec<f64> = params
        .a_out
        .row(0)
        .iter()
        .zip(trace.sensor_pre.iter().zip(&trace.sensor_post))
        .map(|(&w, (&z, &h))| draw * w * sens.derivative(z, h))
        .collect();
    grad.a_in.add_outer(1.0, &dpre, &[trace.cum_sim, trace.cardinality]);
    if c.use_bias {
        grad.b_in.copy_from_slice(&dpre);
    }
    let dcum: f64 = dpre.iter().enumerate().map(|(j, &d)| d * params.a_in.get(j, 0)).sum();
    for (k, ds) in dsims.iter_mut().enumerate() {
        *ds += dcum * c.psi.derivative(trace.sims[k], trace.sharpened[k]);
    }

    // sims[k] = (L q) · (V x_k)
    let mut weighted_input = vec![0.0; c.d_cand];
    let mut dquery_vec = vec![0.0; c.d_ent];
    for (k, &ds) in dsims.iter().enumerate() {
        for (w, &x) in weighted_input.iter_mut().zip(&trace.input_candidates[k]) {
            *w += ds * x;
        }
        for (dq, &e) in dquery_vec.iter_mut().zip(&trace.entity_vecs[k]) {
            *dq += ds * e;
        }
    }
    grad.v.add_outer(1.0, &trace.query_vec, &weighted_input);
    grad.l.add_outer(1.0, &dquery_vec, &trace.input_query);
    Ok(grad)
}

/// Initializes from `train_config.seed` and trains by online SGD.
pub fn train_pop(
    data: &[EncodedAct],
    val: Option<&[EncodedAct]>,
    config: &PopConfig,
    train_config: &TrainConfig,
) -> Result<(PopParams, TrainLog)> {
    let mut rng = Rng::derive(train_config.seed, &[0x504F_5000]);
    let mut params = init_params(config, &mut rng)?;
    let log = train(&mut params, data, val, train_config)?;
    Ok((params, log))
}

/// Model response to a reference act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Point(usize),
    Protest,
}

/// Argmax over `n + 1` probabilities, lowest index winning ties; the last
/// cell means protest.
pub fn predict_from_probs(probs: &[f64]) -> Prediction {
    let n = probs.len().saturating_sub(1);
    match argmax(probs) {
        Some(i) if i < n => Prediction::Point(i),
        _ => Prediction::Protest,
    }
}

pub fn predict(params: &PopParams, act: &EncodedAct) -> Result<Prediction> {
    Ok(predict_from_probs(&forward(params, act)?.probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::AnomalyKind;
    use crate::numerics::{finite_diff_grad, max_relative_error, FD_STEP};

    fn scalar_toy() -> (PopParams, EncodedAct) {
        let mut cfg = PopConfig::new(1, 1);
        cfg.d_ent = 1;
        cfg.n_sensors = 1;
        let mut p = PopParams::zeros(&cfg);
        p.v.set(0, 0, 1.0);
        p.l.set(0, 0, 1.0);
        let act = EncodedAct::new("toy", vec![2.0], vec![vec![1.0], vec![3.0], vec![0.0]], Gold::Point(1)).unwrap();
        (p, act)
    }

    /// Independent scalar evaluation: exp/normalize without max-subtraction.
    fn oracle_probs(logits: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    #[test]
    fn all_zero_params() {
        let cfg = PopConfig {
            d_ent: 4,
            n_sensors: 3,
            ..PopConfig::new(2, 3)
        };
        let p = PopParams::zeros(&cfg);
        let act = EncodedAct::new("z", vec![1.0, -1.0], vec![vec![1.0, 2.0, 3.0]; 3], Gold::Point(0)).unwrap();
        let t = forward(&p, &act).unwrap();
        assert_eq!(t.logits, vec![0.0, 0.0, 0.0, 0.5]);
        let oracle = oracle_probs(&[0.0, 0.0, 0.0, 0.5]);
        for (a, b) in t.probs.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14);
        }
        // 1 / (3 + e^0.5) and e^0.5 / (3 + e^0.5)
        for (a, b) in t.probs.iter().zip([0.215113, 0.215113, 0.215113, 0.354661]) {
            assert!((a - b).abs() < 1e-6, "{:?}", t.probs);
        }
    }

    #[test]
    fn scalar_toy_forward_and_loss() {
        let (p, act) = scalar_toy();
        let t = forward(&p, &act).unwrap();
        assert_eq!(t.sims, vec![2.0, 6.0, 0.0]);
        assert_eq!(t.anomaly_score, 0.5);
        let oracle = oracle_probs(&[2.0, 6.0, 0.0, 0.5]);
        for (a, b) in t.probs.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14);
        }
        let l = loss(&t, Gold::Point(1)).unwrap();
        assert!((l + oracle[1].ln()).abs() < 1e-14);
        assert!((l - 0.02457).abs() < 1e-5);
        assert_eq!(predict_from_probs(&t.probs), Prediction::Point(1));
    }

    #[test]
    fn uniform_probs_give_ln4() {
        let cfg = PopConfig {
            d_ent: 2,
            n_sensors: 2,
            phi: Activation::Identity,
            ..PopConfig::new(1, 1)
        };
        let p = PopParams::zeros(&cfg);
        let act = EncodedAct::new("u", vec![1.0], vec![vec![1.0]; 3], Gold::Anomaly(AnomalyKind::Miss)).unwrap();
        let t = forward(&p, &act).unwrap();
        for g in [Gold::Point(0), Gold::Point(2), Gold::Anomaly(AnomalyKind::Mult)] {
            assert!((loss(&t, g).unwrap() - 4f64.ln()).abs() < 1e-12);
        }
        assert!(loss(&t, Gold::Point(3)).is_err());
    }

    #[test]
    fn output_gradient_is_probs_minus_onehot() {
        // with only the logits depending on a free parameter we can read
        // ∂loss/∂logits off the V gradient: V = [v], L = [1], q = 1, x_k = e
        let (p, act) = scalar_toy();
        let t = forward(&p, &act).unwrap();
        let g = backward(&p, &t, Gold::Point(1)).unwrap();
        // A maps are zero, so only the direct route contributes:
        // dV = q_ent * Σ_k (p_k - y_k) x_k
        let expected: f64 = (0..3)
            .map(|k| (t.probs[k] - if k == 1 { 1.0 } else { 0.0 }) * act.candidates[k][0])
            .sum::<f64>()
            * t.query_vec[0];
        assert!((g.v.get(0, 0) - expected).abs() < 1e-14);
    }

    #[test]
    fn gradients_vanish_at_exact_optimum() {
        let cfg = PopConfig {
            d_ent: 1,
            n_sensors: 1,
            ..PopConfig::new(1, 1)
        };
        let p = PopParams::zeros(&cfg);
        let act = EncodedAct::new("o", vec![1.0], vec![vec![1.0]; 2], Gold::Point(0)).unwrap();
        let mut t = forward(&p, &act).unwrap();
        t.probs = vec![1.0, 0.0, 0.0];
        let g = backward(&p, &t, Gold::Point(0)).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict_from_probs(&[0.1, 0.7, 0.1, 0.1]), Prediction::Point(1));
        assert_eq!(predict_from_probs(&[0.2, 0.2, 0.2, 0.4]), Prediction::Protest);
        assert_eq!(predict_from_probs(&[0.4, 0.1, 0.1, 0.4]), Prediction::Point(0));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = PopConfig::new(5, 7);
        let a = init_params(&cfg, &mut Rng::new(3)).unwrap();
        let b = init_params(&cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        let bound = crate::numerics::glorot_bound(300, 7);
        assert!(a.v.as_slice().iter().all(|x| x.abs() < bound));
        assert!(a.b_in.is_empty());
        let with_bias = init_params(&PopConfig { use_bias: true, ..cfg }, &mut Rng::new(3)).unwrap();
        assert_eq!(with_bias.b_in, vec![0.0; 100]);
        assert_eq!(with_bias.b_out, vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = PopConfig::new(2, 3);
        let p = init_params(&cfg, &mut Rng::new(1)).unwrap();
        let bad = EncodedAct::new("b", vec![1.0], vec![vec![0.0; 3]; 2], Gold::Point(0)).unwrap();
        assert!(matches!(forward(&p, &bad), Err(Error::Contract(_))));
        let bad = EncodedAct::new("b", vec![1.0, 0.0], vec![vec![0.0; 4]; 2], Gold::Point(0)).unwrap();
        assert!(matches!(forward(&p, &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn gradcheck_with_bias_and_alternative_nonlinearities() {
        let mut rng = Rng::new(8);
        for (psi, sensor, bias) in [
            (Activation::Relu, true, true),
            (Activation::Tanh, true, false),
            (Activation::Relu, false, false),
        ] {
            let cfg = PopConfig {
                d_ent: 4,
                n_sensors: 3,
                psi,
                sensor_nonlinearity: sensor,
                use_bias: bias,
                ..PopConfig::new(3, 2)
            };
            let mut p = init_params(&cfg, &mut rng).unwrap();
            if bias {
                p.b_in = rng.gaussian_vec(3, 0.5);
                p.b_out = vec![0.3];
            }
            let act = EncodedAct::new(
                "g",
                rng.gaussian_vec(3, 1.0),
                (0..4).map(|_| rng.gaussian_vec(2, 1.0)).collect(),
                Gold::Anomaly(AnomalyKind::Mult),
            )
            .unwrap();
            let (_, g) = p.loss_and_grad(&act).unwrap();
            let x = p.flatten();
            let fd = finite_diff_grad(
                |flat| {
                    let mut q = p.clone();
                    q.load_flat(flat);
                    q.loss(&act).unwrap()
                },
                &x,
                FD_STEP,
            );
            assert!(max_relative_error(&g.flatten(), &fd) < 1e-6, "{psi:?} {sensor} {bias}");
        }
    }

    #[test]
    fn one_params_all_lengths() {
        let mut rng = Rng::new(11);
        let p = init_params(&PopConfig { d_ent: 6, n_sensors: 4, ..PopConfig::new(3, 4) }, &mut rng).unwrap();
        for n in 2..=8 {
            let act = EncodedAct::new("n", rng.gaussian_vec(3, 1.0), (0..n).map(|_| rng.gaussian_vec(4, 1.0)).collect(), Gold::Point(0)).unwrap();
            let t = forward(&p, &act).unwrap();
            assert_eq!(t.probs.len(), n + 1);
            assert!(t.probs.iter().all(|&x| x > 0.0));
            assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(loss(&t, Gold::Anomaly(AnomalyKind::Miss)).unwrap().is_finite());
        }
    }

    #[test]
    fn one_hot_inputs_equal_dense_table_lookup() {
        // the same vectors, once built as one-hots and once read from a table
        let mut rng = Rng::new(12);
        let p = init_params(&PopConfig { d_ent: 5, n_sensors: 3, ..PopConfig::new(4, 4) }, &mut rng).unwrap();
        let table: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let cands = vec![rng.gaussian_vec(4, 1.0), rng.gaussian_vec(4, 1.0)];
        let mut q = vec![0.0; 4];
        q[2] = 1.0;
        let a = forward(&p, &EncodedAct::new("a", q, cands.clone(), Gold::Point(0)).unwrap()).unwrap();
        let b = forward(&p, &EncodedAct::new("b", table[2].clone(), cands, Gold::Point(0)).unwrap()).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-12);
        }
        // a one-hot query selects a column of L
        let col: Vec<f64> = (0..5).map(|r| p.l.get(r, 2)).collect();
        assert_eq!(a.query_vec, col);
    }

    proptest::proptest! {
        #[test]
        fn permutation_equivariance(seed in proptest::prelude::any::<u64>(), n in 2usize..6) {
            let mut rng = Rng::new(seed);
            let (p, act) = crate::harness::random_pop_instance(&mut rng, n, Gold::Anomaly(AnomalyKind::Miss), false);
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            // candidate k moves to position rho[k]
            let mut permuted = act.candidates.clone();
            for (k, &dst) in order.iter().enumerate() {
                permuted[dst] = act.candidates[k].clone();
            }
            let moved = EncodedAct::new("p", act.query.clone(), permuted, act.gold).unwrap();
            let a = forward(&p, &act).unwrap();
            let b = forward(&p, &moved).unwrap();
            for k in 0..n {
                proptest::prop_assert!((a.probs[k] - b.probs[order[k]]).abs() < 1e-9);
            }
            proptest::prop_assert!((a.probs[n] - b.probs[n]).abs() < 1e-9);
        }
    }
}
