//! Optimisation: cross-entropy loss, SGD with momentum and coupled weight
//! decay, cosine learning rate with warm restarts, and the epoch loop.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dropout::Mode;
use crate::error::{MafError, Result};
use crate::metrics::{accuracy, f1_score};
use crate::model::{argmax, infer, maf_forward, MafConfig, MafParams};
use crate::params::{bind, collect_grads, flatten, ParamTree};
use crate::rng::Rng;
use crate::synth::Sample;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Drowsy is the positive class for F1.
pub const POSITIVE_CLASS: usize = 1;

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss = tape.cross_entropy(z, label)?;
    Ok(tape.value(loss).clone())
}

/// Optimiser hyperparameters and one velocity buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub velocity: Vec<Tensor>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimState {
    pub fn new<P: ParamTree<Tensor>>(params: &P, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(MafError::Config(format!("lr ({lr}) must be finite and >= 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(MafError::Config(format!("momentum ({momentum}) must lie in [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(MafError::Config(format!("weight_decay ({weight_decay}) must be >= 0")));
        }
        let velocity = flatten(params).iter().map(|t| Tensor::zeros(t.shape())).collect();
        Ok(OptimState {
            velocity,
            lr,
            momentum,
            weight_decay,
        })
    }
}

/// `v ← m·v + (g + wd·w)`, `w ← w − lr·v`, leaf by leaf in canonical order.
pub fn sgd_step<P: ParamTree<Tensor>>(params: &mut P, grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    let shapes: Vec<Vec<usize>> = flatten(params).iter().map(|t| t.shape().to_vec()).collect();
    if grads.len() != shapes.len() || state.velocity.len() != shapes.len() {
        return Err(MafError::Contract(format!(
            "sgd_step: {} parameters, {} gradients, {} velocities",
            shapes.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, shape) in shapes.iter().enumerate() {
        for (what, t) in [("gradient", &grads[i]), ("velocity", &state.velocity[i])] {
            if t.shape() != shape.as_slice() {
                return Err(MafError::Contract(format!(
                    "sgd_step: {what} {i} has shape {:?}, parameter has {shape:?}",
                    t.shape()
                )));
            }
        }
    }
    let (lr, m, wd) = (state.lr, state.momentum, state.weight_decay);
    let mut i = 0;
    params.for_each_named_mut("", &mut |_, w| {
        let v = state.velocity[i].data_mut();
        let g = grads[i].data();
        for ((w, v), g) in w.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *v = m * *v + (g + wd * *w);
            *w -= lr * *v;
        }
        i += 1;
    });
    Ok(())
}

/// Cosine annealing with warm restarts every `period` epochs.
pub fn cosine_lr(epoch: usize, base_lr: f64, period: usize) -> f64 {
    let period = period.max(1);
    let t = (epoch % period) as f64;
    base_lr * (1.0 + (PI * t / period as f64).cos()) / 2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Restart period of the cosine schedule, in epochs.
    pub lr_period: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 50 epochs, batch 16, restarts every 10 epochs (five full cycles).
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-5,
            lr_period: 10,
            seed: 0,
        }
    }

    /// 200 epochs, batch 32, restarts every 40 epochs.
    pub fn paper_analog() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr_period: 40,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(MafError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(MafError::Config("batch_size must be >= 1".into()));
        }
        if self.lr_period == 0 {
            return Err(MafError::Config("lr_period must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy of the train-mode predictions made while fitting.
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,train_acc,test_acc,test_f1";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.8},{:.8},{:.6},{:.6},{:.6}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc, r.test_f1
            );
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

struct SampleStep {
    loss: f64,
    pred: usize,
    grads: Vec<Tensor>,
}

fn sample_step(params: &MafParams, config: &MafConfig, sample: &Sample, mut rng: Rng) -> Result<SampleStep> {
    let mut tape = Tape::new();
    let bound = bind(params, &mut tape);
    let image = tape.constant(sample.image.clone());
    let out = maf_forward(&mut tape, image, &bound, config, &mut rng, Mode::Train)?;
    let loss = tape.cross_entropy(out.logits, sample.label)?;
    let mut grads = tape.backward(loss)?;
    Ok(SampleStep {
        loss: tape.value(loss).item(),
        pred: argmax(tape.value(out.logits).data()),
        grads: flatten(&collect_grads(&bound, &mut grads)),
    })
}

/// Mean loss and gradients of one mini-batch in train mode. Samples are
/// processed concurrently and reduced in batch order.
fn batch_step(
    params: &MafParams,
    config: &MafConfig,
    samples: &[Sample],
    batch: &[usize],
    epoch_rng: &Rng,
) -> Result<(f64, Vec<Tensor>, Vec<usize>)> {
    let steps = batch
        .par_iter()
        .map(|&i| sample_step(params, config, &samples[i], epoch_rng.split(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut iter = steps.into_iter();
    let first = iter.next().expect("non-empty batch");
    let mut loss = first.loss;
    let mut preds = vec![first.pred];
    let mut grads = first.grads;
    for s in iter {
        loss += s.loss;
        preds.push(s.pred);
        for (acc, g) in grads.iter_mut().zip(&s.grads) {
            acc.add_assign(g);
        }
    }
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grads, preds))
}

/// Metrics and predictions from an eval-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub acc: f64,
    pub f1: f64,
    pub predictions: Vec<usize>,
    pub logits: Vec<Tensor>,
}

pub fn evaluate(params: &MafParams, samples: &[Sample], config: &MafConfig) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(MafError::Contract("evaluate needs a non-empty dataset".into()));
    }
    let logits = samples
        .par_iter()
        .map(|s| infer(params, config, &s.image).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<usize> = logits.iter().map(|l| argmax(l.data())).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        acc: accuracy(&predictions, &labels)?,
        f1: f1_score(&predictions, &labels, POSITIVE_CLASS)?,
        predictions,
        logits,
    })
}

/// Fits `params` and evaluates on `test_set` after every epoch.
pub fn train(
    config: &MafConfig,
    params: MafParams,
    train_set: &[Sample],
    test_set: &[Sample],
    tc: &TrainConfig,
) -> Result<(MafParams, TrainHistory)> {
    train_with_progress(config, params, train_set, test_set, tc, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch's evaluation.
pub fn train_with_progress(
    config: &MafConfig,
    mut params: MafParams,
    train_set: &[Sample],
    test_set: &[Sample],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MafParams, TrainHistory)> {
    config.validate()?;
    tc.validate()?;
    params.check_shapes(config)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(MafError::Contract(format!(
            "training needs non-empty datasets (train {}, test {})",
            train_set.len(),
            test_set.len()
        )));
    }
    let mut state = OptimState::new(&params, tc.lr, tc.momentum, tc.weight_decay)?;
    let root = Rng::new(tc.seed);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..tc.epochs {
        state.lr = cosine_lr(epoch, tc.lr, tc.lr_period);
        let epoch_rng = root.split(epoch as u64);
        let mut shuffle_rng = epoch_rng.split(u64::MAX);
        order.sort_unstable();
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut preds = Vec::with_capacity(order.len());
        let mut labels = Vec::with_capacity(order.len());
        for batch in order.chunks(tc.batch_size) {
            let (loss, grads, p) = batch_step(&params, config, train_set, batch, &epoch_rng)?;
            sgd_step(&mut params, &grads, &mut state)?;
            loss_sum += loss * batch.len() as f64;
            preds.extend(p);
            labels.extend(batch.iter().map(|&i| train_set[i].label));
        }
        let eval = evaluate(&params, test_set, config)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: state.lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: accuracy(&preds, &labels)?,
            test_acc: eval.acc,
            test_f1: eval.f1,
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok((params, history))
}
