use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{ModelParams, ModelShape, Workspace, DEFAULT_D, DEFAULT_D_PRIME};
use super::{AttentionError, EncodedSample};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub holdout: f64,
    pub seed: u64,
    pub d: usize,
    pub d_prime: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 60,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            holdout: 0.2,
            seed: 0,
            d: DEFAULT_D,
            d_prime: DEFAULT_D_PRIME,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AttentionError> {
        let bad = |m: &str| Err(AttentionError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad("holdout must be in (0, 1)");
        }
        if self.batch_size == 0 || self.d == 0 || self.d_prime == 0 {
            return bad("batch size and widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetrics {
    pub train_acc: f64,
    pub holdout_acc: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub train_size: usize,
    pub holdout_size: usize,
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy<T: Scalar>(params: &ModelParams<T>, samples: &[EncodedSample]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut ws = Workspace::new(params.shape);
    let hits = samples
        .iter()
        .filter(|s| {
            ws.forward(params, s);
            let pred = (ws.logits[1] > ws.logits[0]) as u8;
            pred == s.label
        })
        .count();
    hits as f64 / samples.len() as f64
}

/// Trains a fresh model with Adam on cross-entropy. The last
/// `holdout` fraction (after a seeded shuffle) is held out.
pub fn train<T: Scalar>(
    dataset: &[EncodedSample],
    n: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainMetrics), AttentionError> {
    cfg.validate()?;
    if dataset.len() < 8 {
        return Err(AttentionError::TooSmall(dataset.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((dataset.len() as f64 * cfg.holdout).round() as usize).clamp(1, dataset.len() - 1);
    let (train_idx, hold_idx) = order.split_at(dataset.len() - n_hold);
    let mut train_idx = train_idx.to_vec();

    let shape = ModelShape::new(n, cfg.d, cfg.d_prime);
    let mut params = ModelParams::<T>::init(shape, &mut rng);
    let np = params.data.len();
    let mut m = vec![T::zero(); np];
    let mut v = vec![T::zero(); np];
    let mut grad = vec![T::zero(); np];
    let mut ws = Workspace::new(shape);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr, eps) = (T::of(cfg.learning_rate), T::of(cfg.eps));
    let mut step = 0i32;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let mut batch_loss = T::zero();
            for &i in batch {
                batch_loss += ws.forward_backward(&params, &dataset[i], &mut grad);
            }
            let scale = T::one() / T::of(batch.len() as f64);
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(non_finite(&params, epoch, bi, cfg));
            }
            epoch_loss += batch_loss.to_f64_lossy();
            step += 1;
            let c1 = T::one() - b1.powi(step);
            let c2 = T::one() - b2.powi(step);
            for k in 0..np {
                let g = grad[k] * scale;
                m[k] = b1 * m[k] + (T::one() - b1) * g;
                v[k] = b2 * v[k] + (T::one() - b2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                params.data[k] -= lr * mh / (vh.sqrt() + eps);
            }
            if !params.is_finite() {
                return Err(non_finite(&params, epoch, bi, cfg));
            }
        }
        loss_curve.push(epoch_loss / train_idx.len() as f64);
    }

    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let train_set = pick(&train_idx);
    let hold_set = pick(hold_idx);
    let metrics = TrainMetrics {
        train_acc: accuracy(&params, &train_set),
        holdout_acc: accuracy(&params, &hold_set),
        loss_curve,
        train_size: train_set.len(),
        holdout_size: hold_set.len(),
    };
    Ok((params, metrics))
}

fn non_finite<T: Scalar>(p: &ModelParams<T>, epoch: usize, batch: usize, cfg: &TrainConfig) -> AttentionError {
    let max_abs_param = p.data.iter().map(|v| v.to_f64_lossy().abs()).fold(0.0, f64::max);
    AttentionError::NonFinite { epoch, batch, learning_rate: cfg.learning_rate, max_abs_param }
}

/// Compares the analytic loss gradient with central differences on
/// `n_checks` randomly chosen parameters (at least 200 or all of them).
///
/// Relative error is `|a - f| / max(|a|, |f|, 1e-6)`; the floor keeps
/// parameters with a vanishing gradient from amplifying rounding noise.
pub fn finite_difference_check<R: Rng + ?Sized>(
    params: &ModelParams<f64>,
    sample: &EncodedSample,
    epsilon: f64,
    n_checks: usize,
    rng: &mut R,
) -> f64 {
    let (_, grad) = params.loss_and_grad(sample);
    let np = params.data.len();
    let n_checks = n_checks.max(200).min(np);
    let idx: Vec<usize> =
        if n_checks == np { (0..np).collect() } else { rand::seq::index::sample(rng, np, n_checks).into_vec() };
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    for k in idx {
        let orig = p.data[k];
        p.data[k] = orig + epsilon;
        let lp = p.loss(sample);
        p.data[k] = orig - epsilon;
        let lm = p.loss(sample);
        p.data[k] = orig;
        let fd = (lp - lm) / (2.0 * epsilon);
        let a = grad[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
