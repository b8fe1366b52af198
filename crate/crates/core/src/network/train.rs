use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Mode, Network};
use super::params::NetParams;
use super::{NetError, NetInput, Result, IGNORE_LABEL};
use crate::ops::FeatureField;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Meshes per step.
    pub batch_size: usize,
    pub seed: u64,
    /// After the last epoch, replace running statistics by the average
    /// batch statistics of the training meshes under the final weights.
    #[serde(default = "default_true")]
    pub recalibrate: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 2e-2, momentum: 0.9, weight_decay: 5e-4, epochs: 50, batch_size: 1, seed: 0, recalibrate: true }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted and leaves trainable parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) || self.batch_size == 0 {
            return Err(NetError::ShapeMismatch("training hyperparameters out of range".into()));
        }
        Ok(())
    }
}

/// One mesh with per-face labels on its finest level.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub input: NetInput<T>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: NetParams<T>,
    pub metrics: Vec<EpochMetrics>,
}

fn check_labels<T: Real>(scores: &FeatureField<T>, labels: &[usize]) -> Result<()> {
    if labels.len() != scores.rows {
        return Err(NetError::ShapeMismatch(format!("{} labels for {} faces", labels.len(), scores.rows)));
    }
    let classes = scores.channels;
    if let Some(&label) = labels.iter().find(|&&l| l != IGNORE_LABEL && l >= classes) {
        return Err(NetError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean over labelled faces of `-log softmax(s)_y`.
pub fn cross_entropy<T: Real>(scores: &FeatureField<T>, labels: &[usize]) -> Result<T> {
    Ok(cross_entropy_with_grad(scores, labels)?.0)
}

pub(crate) fn cross_entropy_with_grad<T: Real>(scores: &FeatureField<T>, labels: &[usize]) -> Result<(T, FeatureField<T>)> {
    check_labels(scores, labels)?;
    let k = scores.channels;
    let mut grad = FeatureField::zeros(scores.level, scores.rows, k);
    let counted = labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    if counted == 0 {
        return Ok((T::zero(), grad));
    }
    let n = T::from_usize_lossy(counted);
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y == IGNORE_LABEL {
            continue;
        }
        let s = scores.row(i);
        let m = s.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = s.iter().map(|v| (*v - m).exp()).sum();
        total += m + z.ln() - s[y];
        let g = grad.row_mut(i);
        for (c, gc) in g.iter_mut().enumerate() {
            *gc = (s[c] - m).exp() / z / n;
        }
        g[y] -= T::one() / n;
    }
    Ok((total / n, grad))
}

/// Fraction of labelled faces whose top score is the label; ties go to the
/// lowest class.
pub fn accuracy<T: Real>(scores: &FeatureField<T>, labels: &[usize]) -> Result<f64> {
    check_labels(scores, labels)?;
    let (mut hit, mut count) = (0usize, 0usize);
    for (i, &y) in labels.iter().enumerate() {
        if y == IGNORE_LABEL {
            continue;
        }
        count += 1;
        hit += usize::from(argmax(scores.row(i)) == y);
    }
    Ok(if count == 0 { 0.0 } else { hit as f64 / count as f64 })
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (c, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = c;
        }
    }
    best
}

/// SGD with momentum `v = μ v + g`, `p -= lr v`, then decoupled weight decay
/// `p -= lr λ p` on every trainable tensor. Metrics are the train-mode loss
/// and accuracy of each epoch's steps, plus eval-mode rows for `eval`.
pub fn train<T: Real>(
    net: &Network,
    mut params: NetParams<T>,
    samples: &[Sample<T>],
    eval: &[Sample<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(NetError::ShapeMismatch("no training samples".into()));
    }
    let lr = T::lit(cfg.lr);
    let mu = T::lit(cfg.momentum);
    let decay = T::one() - lr * T::lit(cfg.weight_decay);
    let mut velocity: Vec<Vec<T>> = params.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut metrics = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut faces) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let parts: Vec<&NetInput<T>> = chunk.iter().map(|&i| &samples[i].input).collect();
            let labels: Vec<usize> = chunk.iter().flat_map(|&i| samples[i].labels.iter().copied()).collect();
            let input = if parts.len() == 1 { parts[0].clone() } else { NetInput::batch(&parts)? };
            let pass = net.backprop(&params, &input, &labels)?;
            let counted = labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
            loss_sum += pass.loss.to_f64_lossy() * counted as f64;
            hits += accuracy(&pass.scores, &labels)? * counted as f64;
            faces += counted;
            pass.commit_running(&mut params);
            for ((t, g), v) in params.tensors.iter_mut().zip(&pass.grads.0).zip(velocity.iter_mut()) {
                if !t.trainable {
                    continue;
                }
                for ((p, gi), vi) in t.data.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = mu * *vi + *gi;
                    *p -= lr * *vi;
                    *p *= decay;
                }
            }
        }
        if cfg.recalibrate && epoch == cfg.epochs {
            recalibrate(net, &mut params, samples)?;
        }
        let denom = faces.max(1) as f64;
        metrics.push(EpochMetrics { epoch, split: "train".into(), loss: loss_sum / denom, accuracy: hits / denom });
        if !eval.is_empty() {
            let (loss, acc) = evaluate(net, &params, eval)?;
            metrics.push(EpochMetrics { epoch, split: "eval".into(), loss, accuracy: acc });
        }
    }
    Ok(TrainOutcome { params, metrics })
}

/// Sets every running statistic to its mean batch value over `samples`.
pub fn recalibrate<T: Real>(net: &Network, params: &mut NetParams<T>, samples: &[Sample<T>]) -> Result<()> {
    let mut acc: Vec<(usize, Vec<T>)> = Vec::new();
    for s in samples {
        let stats = net.batch_statistics(params, &s.input)?;
        if acc.is_empty() {
            acc = stats;
        } else {
            for ((_, a), (_, b)) in acc.iter_mut().zip(&stats) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += *y;
                }
            }
        }
    }
    let n = T::from_usize_lossy(samples.len().max(1));
    for (i, v) in acc {
        params.tensors[i].data = v.into_iter().map(|x| x / n).collect();
    }
    Ok(())
}

/// Eval-mode loss and accuracy over all labelled faces of `samples`.
pub fn evaluate<T: Real>(net: &Network, params: &NetParams<T>, samples: &[Sample<T>]) -> Result<(f64, f64)> {
    let (mut loss_sum, mut hits, mut faces) = (0.0, 0.0, 0usize);
    for s in samples {
        let scores = net.forward(params, &s.input, Mode::Eval)?;
        let counted = s.labels.iter().filter(|&&l| l != IGNORE_LABEL).count() as f64;
        loss_sum += cross_entropy(&scores, &s.labels)?.to_f64_lossy() * counted;
        hits += accuracy(&scores, &s.labels)? * counted;
        faces += counted as usize;
    }
    let denom = faces.max(1) as f64;
    Ok((loss_sum / denom, hits / denom))
}

/// `epoch,split,loss,accuracy` with shortest round-trip float formatting.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,split,loss,accuracy\n");
    for m in metrics {
        s.push_str(&format!("{},{},{},{}\n", m.epoch, m.split, m.loss, m.accuracy));
    }
    s
}

/// Most likely class per face.
pub fn predict_labels<T: Real>(scores: &FeatureField<T>) -> Vec<usize> {
    (0..scores.rows).map(|i| argmax(scores.row(i))).collect()
}
