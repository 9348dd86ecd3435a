//! Minibatch fitting loops shared by the pipelines.

use ndarray::{concatenate, ArrayD, Axis, IxDyn, Slice};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{CmktError, Result};
use crate::losses::{mse_grad, weighted_bce_grad};
use crate::models::{as_rows, TrainableModel};
use crate::nn::{Adam, Mode};
use crate::util::mix_seed;

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch value of the optimized objective.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    /// Semantic alignment only: `L_SA + L_S`, `L_C` and the joint objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_csa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_ccsa: Option<f64>,
}

impl EpochStats {
    pub(crate) fn new(epoch: usize, loss: f64) -> Self {
        EpochStats { epoch, loss, train_accuracy: None, l_csa: None, l_c: None, l_ccsa: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseHistory {
    pub phase: String,
    pub epochs: Vec<EpochStats>,
}

impl PhaseHistory {
    pub fn new(phase: &str) -> Self {
        PhaseHistory { phase: phase.into(), epochs: Vec::new() }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Shuffled minibatch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64)));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub(crate) fn gather(x: &ArrayD<f64>, idx: &[usize]) -> ArrayD<f64> {
    x.select(Axis(0), idx)
}

pub(crate) fn gather_labels(y: &[u8], idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| y[i]).collect()
}

/// `[N, 1]` (or `[N]`) probabilities to a vector.
pub(crate) fn column(y: &ArrayD<f64>) -> Vec<f64> {
    y.iter().copied().collect()
}

pub(crate) fn as_column(g: Vec<f64>) -> ArrayD<f64> {
    let n = g.len();
    ArrayD::from_shape_vec(IxDyn(&[n, 1]), g).expect("column")
}

pub(crate) fn hits(probs: &[f64], labels: &[u8]) -> usize {
    probs.iter().zip(labels).filter(|(p, y)| (**p >= 0.5) == (**y == 1)).count()
}

pub(crate) fn check_finite(v: f64, epoch: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CmktError::Diverged { epoch, detail: format!("{what} became {v}") })
    }
}

/// Runs in eval mode over `x` in chunks of `chunk` rows.
pub(crate) fn infer_chunked(model: &TrainableModel, x: &ArrayD<f64>, chunk: usize) -> Result<ArrayD<f64>> {
    let n = x.shape()[0];
    if n <= chunk {
        return model.infer(x);
    }
    let parts = (0..n)
        .step_by(chunk)
        .map(|s| model.infer(&x.slice_axis(Axis(0), Slice::from(s..(s + chunk).min(n))).to_owned()))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("same trailing shape"))
}

pub(crate) const INFER_CHUNK: usize = 256;

/// A model with its own optimizer.
#[derive(Debug, Clone)]
pub(crate) struct Optimized {
    pub model: TrainableModel,
    pub opt: Adam,
}

impl Optimized {
    pub fn new(model: TrainableModel, cfg: &TrainConfig) -> Self {
        Optimized { model, opt: Adam::new(cfg.learning_rate, cfg.weight_decay, cfg.adam) }
    }

    pub fn step(&mut self) {
        self.opt.step(self.model.params_mut());
    }
}

/// A differentiable predictor over one or more input tensors.
pub(crate) trait Net {
    fn set_mode(&mut self, mode: Mode);
    fn zero_grad(&mut self);
    fn forward(&mut self, inputs: &[ArrayD<f64>]) -> Result<ArrayD<f64>>;
    fn backward(&mut self, grad: ArrayD<f64>);
    fn step(&mut self);
}

/// Models applied one after another.
#[derive(Debug, Clone)]
pub(crate) struct Chain(pub Vec<Optimized>);

impl Net for Chain {
    fn set_mode(&mut self, mode: Mode) {
        self.0.iter_mut().for_each(|m| m.model.set_mode(mode));
    }

    fn zero_grad(&mut self) {
        self.0.iter_mut().for_each(|m| m.model.zero_grad());
    }

    fn forward(&mut self, inputs: &[ArrayD<f64>]) -> Result<ArrayD<f64>> {
        let mut h = inputs[0].clone();
        for m in &mut self.0 {
            h = m.model.forward(h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: ArrayD<f64>) {
        let mut g = grad;
        for m in self.0[1..].iter_mut().rev() {
            g = m.model.backward(g);
        }
        self.0[0].model.backward_params(g);
    }

    fn step(&mut self) {
        self.0.iter_mut().for_each(Optimized::step);
    }
}

/// Two encoders whose flattened outputs are concatenated into a head.
#[derive(Debug, Clone)]
pub(crate) struct TwoBranch {
    pub left: Optimized,
    pub right: Optimized,
    pub head: Optimized,
    split_at: usize,
}

impl TwoBranch {
    pub fn new(left: Optimized, right: Optimized, head: Optimized) -> Result<Self> {
        let dl: usize = left.model.output_shape().iter().product();
        let dr: usize = right.model.output_shape().iter().product();
        let hin: usize = head.model.input_shape().iter().product();
        if dl + dr != hin || head.model.input_shape().len() != 1 {
            return Err(CmktError::Config(format!(
                "head input {:?} does not match concatenated encoder outputs {dl} + {dr}",
                head.model.input_shape()
            )));
        }
        Ok(TwoBranch { left, right, head, split_at: dl })
    }
}

impl Net for TwoBranch {
    fn set_mode(&mut self, mode: Mode) {
        for m in [&mut self.left, &mut self.right, &mut self.head] {
            m.model.set_mode(mode);
        }
    }

    fn zero_grad(&mut self) {
        for m in [&mut self.left, &mut self.right, &mut self.head] {
            m.model.zero_grad();
        }
    }

    fn forward(&mut self, inputs: &[ArrayD<f64>]) -> Result<ArrayD<f64>> {
        let a = as_rows(self.left.model.forward(inputs[0].clone())?);
        let b = as_rows(self.right.model.forward(inputs[1].clone())?);
        let cat = concatenate(Axis(1), &[a.view(), b.view()]).expect("same batch");
        self.head.model.forward(cat.into_dyn())
    }

    fn backward(&mut self, grad: ArrayD<f64>) {
        let g = as_rows(self.head.model.backward(grad));
        let (gl, gr) = g.view().split_at(Axis(1), self.split_at);
        let shape_l: Vec<usize> = std::iter::once(g.nrows()).chain(self.left.model.output_shape().iter().copied()).collect();
        let shape_r: Vec<usize> = std::iter::once(g.nrows()).chain(self.right.model.output_shape().iter().copied()).collect();
        self.left.model.backward_params(gl.to_owned().into_shape_with_order(IxDyn(&shape_l)).expect("shape"));
        self.right.model.backward_params(gr.to_owned().into_shape_with_order(IxDyn(&shape_r)).expect("shape"));
    }

    fn step(&mut self) {
        self.left.step();
        self.right.step();
        self.head.step();
    }
}

/// Minibatch class-weighted BCE training of `net` on `inputs` (one tensor
/// per net input, all with `N` rows).
pub(crate) fn fit_classifier(net: &mut dyn Net, inputs: &[ArrayD<f64>], labels: &[u8], cfg: &TrainConfig, phase: &str) -> Result<PhaseHistory> {
    cfg.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(CmktError::Empty(format!("{phase}: no training samples")));
    }
    let mut history = PhaseHistory::new(phase);
    net.set_mode(Mode::Train);
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for idx in epoch_batches(n, cfg.batch_size, cfg.seed, epoch) {
            let xb: Vec<ArrayD<f64>> = inputs.iter().map(|x| gather(x, &idx)).collect();
            let yb = gather_labels(labels, &idx);
            net.zero_grad();
            let p = column(&net.forward(&xb)?);
            let (loss, grad) = weighted_bce_grad(&p, &yb, cfg.ccsa.class_weights)?;
            check_finite(loss, epoch, &format!("{phase} loss"))?;
            net.backward(as_column(grad));
            net.step();
            loss_sum += loss;
            correct += hits(&p, &yb);
            batches += 1;
        }
        let mut s = EpochStats::new(epoch, loss_sum / batches as f64);
        s.train_accuracy = Some(correct as f64 / n as f64);
        log::debug!("{phase} epoch {epoch}: loss {:.5} acc {:.4}", s.loss, s.train_accuracy.unwrap());
        history.epochs.push(s);
    }
    net.set_mode(Mode::Eval);
    net.zero_grad();
    Ok(history)
}

/// Minibatch MSE regression of `model(x)` onto `target`.
pub(crate) fn fit_regression(model: &mut Optimized, x: &ArrayD<f64>, target: &ArrayD<f64>, cfg: &TrainConfig, phase: &str) -> Result<PhaseHistory> {
    cfg.validate()?;
    let n = x.shape()[0];
    if n == 0 {
        return Err(CmktError::Empty(format!("{phase}: no training samples")));
    }
    if target.shape()[0] != n {
        return Err(CmktError::shape(format!("{n} targets"), format!("{}", target.shape()[0])));
    }
    let out_shape = model.model.output_shape().to_vec();
    if target.shape()[1..] != out_shape[..] {
        return Err(CmktError::Config(format!(
            "{phase}: model output {out_shape:?} does not match target {:?}",
            &target.shape()[1..]
        )));
    }
    let mut history = PhaseHistory::new(phase);
    model.model.set_mode(Mode::Train);
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for idx in epoch_batches(n, cfg.batch_size, cfg.seed, epoch) {
            model.model.zero_grad();
            let y = model.model.forward(gather(x, &idx))?;
            let (loss, grad) = mse_grad(&y, &gather(target, &idx))?;
            check_finite(loss, epoch, &format!("{phase} loss"))?;
            model.model.backward_params(grad);
            model.step();
            loss_sum += loss;
            batches += 1;
        }
        history.epochs.push(EpochStats::new(epoch, loss_sum / batches as f64));
    }
    model.model.set_mode(Mode::Eval);
    model.model.zero_grad();
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_index_once() {
        let b = epoch_batches(10, 3, 1, 0);
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_ne!(epoch_batches(10, 3, 1, 0), epoch_batches(10, 3, 1, 1));
    }
}
