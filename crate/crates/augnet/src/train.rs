//! Training loop: Adam with trunk-only weight decay, magnitude projection,
//! optional early stopping, and per-epoch telemetry.

use crate::augment::TransformKind;
use crate::data::{batch_indices, oracle_augment, stack, Dataset};
use crate::error::AugError;
use crate::metrics::accuracy;
use crate::model::{
    augerino_regularizer, augnet_forward, selective_regularizer, AugNetModel, ParamId, ParamRole,
    ParamStore, RegKind, Session,
};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::time::Instant;

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 gradient term applied to trunk parameters only.
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Weight decay is added to the gradient of
/// trunk parameters; augmentation weights and magnitudes are never decayed,
/// and magnitudes are clamped into [0, 1] after every step.
pub struct Adam {
    pub hyper: AdamParams,
    m: HashMap<ParamId, Vec<f64>>,
    v: HashMap<ParamId, Vec<f64>>,
    step_count: u64,
}

impl Adam {
    pub fn new(hyper: AdamParams) -> Adam {
        Adam {
            hyper,
            m: HashMap::new(),
            v: HashMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Vec<f64>)],
    ) -> Result<(), AugError> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for (id, g) in grads {
            let entry = store.entry(*id);
            if entry.role == ParamRole::State {
                continue;
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(AugError::NonFinite {
                    context: format!("gradient of {} (element {i})", entry.name),
                });
            }
            let decay = if entry.role == ParamRole::Trunk {
                h.weight_decay
            } else {
                0.0
            };
            let n = g.len();
            let m = self.m.entry(*id).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(*id).or_insert_with(|| vec![0.0; n]);
            let mut theta = store.data(*id).to_vec();
            for i in 0..n {
                let gi = g[i] + decay * theta[i];
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= h.lr * mhat / (vhat.sqrt() + h.eps);
            }
            store.set_data(*id, theta);
        }
        // projection: magnitudes live in [0, 1]
        for (_, entry) in store.iter_mut() {
            if entry.role == ParamRole::AugMagnitude {
                for v in &mut entry.data {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
        Ok(())
    }
}

/// Per-transform telemetry snapshot for one epoch.
#[derive(Clone, Debug)]
pub struct TransformTelemetry {
    pub kind: TransformKind,
    pub weight: f64,
    pub magnitude: f64,
    /// Physical range: magnitude times the transform's range map.
    pub range: f64,
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Outer: augmentation layer; inner: transform.
    pub layers: Vec<Vec<TransformTelemetry>>,
    pub wall_secs: f64,
}

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainEnd {
    Completed,
    EarlyStopped,
    /// Non-finite loss or gradient; history holds the last good records.
    Diverged,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub history: Vec<EpochRecord>,
    /// Snapshot of the store at the best validation accuracy.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy measured at the best-validation checkpoint.
    pub test_acc_at_best: f64,
    pub end: TrainEnd,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleAugmentCfg {
    pub max_shift_hz: f64,
    pub sample_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub lambda: f64,
    pub reg_kind: RegKind,
    pub seed: u64,
    /// Early stopping patience in epochs (None disables it).
    pub patience: Option<usize>,
    /// Classic augmentation applied to training batches (capacity baseline).
    pub oracle: Option<OracleAugmentCfg>,
}

/// Train/val/test split. When `val` is None the test set doubles as the
/// validation set (computed once per epoch).
pub struct SplitData {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

/// Evaluate accuracy with the model's augmentation module active at the
/// given copy count. Deterministic in `seed`.
pub fn evaluate(
    model: &AugNetModel,
    store: &mut ParamStore,
    dataset: &Dataset,
    copies: usize,
    seed: u64,
    batch_size: usize,
) -> f64 {
    let root = RngStream::new(seed);
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(dataset.len());
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for (bi, chunk) in idx.chunks(batch_size).enumerate() {
        let (x, _) = stack(dataset, chunk);
        let mut session = Session::eval(store);
        let out = augnet_forward(&mut session, &x, model, copies, &root.split(bi as u64));
        let k = model.trunk.config.num_classes;
        for r in 0..chunk.len() {
            outputs.push(out.data()[r * k..(r + 1) * k].to_vec());
        }
    }
    accuracy(&outputs, &dataset.labels())
}

fn telemetry(model: &AugNetModel, store: &ParamStore) -> Vec<Vec<TransformTelemetry>> {
    model
        .aug
        .layers
        .iter()
        .map(|layer| {
            let w = layer.weights_now(store);
            let mu = layer.magnitudes_now(store);
            layer
                .transforms
                .iter()
                .enumerate()
                .map(|(q, spec)| TransformTelemetry {
                    kind: spec.kind,
                    weight: w[q],
                    magnitude: mu[q],
                    range: mu[q] * spec.range,
                })
                .collect()
        })
        .collect()
}

/// Run the full optimization loop.
///
/// Per epoch: shuffle, forward with the configured regularizer and training
/// copy count, backward, Adam step with magnitude projection, then evaluate
/// with the eval copy count. Returns the checkpoint with the best
/// validation accuracy (earliest epoch wins ties).
pub fn train(
    model: &AugNetModel,
    store: &mut ParamStore,
    data: &SplitData,
    params: &TrainParams,
) -> Result<TrainOutput, AugError> {
    let root = RngStream::new(params.seed);
    let eval_seed = root.split(0xE7A1).seed();
    let mut adam = Adam::new(params.adam);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best = store.clone();
    let mut best_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut test_at_best = 0.0;
    let mut end = TrainEnd::Completed;
    let eval_batch = params.batch_size.max(64);
    let k = model.trunk.config.num_classes;

    if params.epochs == 0 {
        // still record the initial checkpoint as "best"
        let val = evaluate(model, store, data.val.as_ref().unwrap_or(&data.test), model.copies_eval, eval_seed, eval_batch);
        let test = evaluate(model, store, &data.test, model.copies_eval, eval_seed, eval_batch);
        return Ok(TrainOutput {
            history,
            best: store.clone(),
            best_epoch: 0,
            best_val_acc: val,
            test_acc_at_best: test,
            end,
        });
    }

    'epochs: for epoch in 0..params.epochs {
        let t0 = Instant::now();
        let erng = root.split(epoch as u64);
        let mut shuffle_rng = erng.split(1);
        let batches = batch_indices(data.train.len(), params.batch_size, true, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut correct = 0usize;
        let mut oracle_rng = erng.split(2);

        for (bi, idx) in batches.iter().enumerate() {
            let (mut x, labels) = stack(&data.train, idx);
            if let Some(oracle) = &params.oracle {
                x = oracle_augment(&x, oracle.max_shift_hz, oracle.sample_rate, &mut oracle_rng);
            }
            let draw_rng = erng.split(1000 + bi as u64);
            let mut session = Session::train(store);
            let out = augnet_forward(&mut session, &x, model, model.copies_train, &draw_rng);
            let ce = session.tape.softmax_cross_entropy(&out, &labels);
            let loss = match params.reg_kind {
                RegKind::Selective if params.lambda > 0.0 => {
                    let r = selective_regularizer(&mut session, &model.aug);
                    let s = session.tape.scale(&r, params.lambda);
                    session.tape.add(&ce, &s)
                }
                RegKind::Augerino if params.lambda > 0.0 => {
                    let r = augerino_regularizer(&mut session, &model.aug);
                    let s = session.tape.scale(&r, params.lambda);
                    session.tape.add(&ce, &s)
                }
                _ => ce,
            };
            if !loss.item().is_finite() {
                end = TrainEnd::Diverged;
                break 'epochs;
            }
            loss_sum += loss.item() * idx.len() as f64;
            for (r, &y) in labels.iter().enumerate() {
                let row = &out.data()[r * k..(r + 1) * k];
                let pred = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                if pred == y {
                    correct += 1;
                }
            }
            seen += idx.len();

            let grads = session.tape.backward(&loss);
            let param_grads = session.gradients(&grads);
            drop(session);
            if let Err(e) = adam.step(store, &param_grads) {
                // keep everything up to the last completed epoch
                let _ = e;
                end = TrainEnd::Diverged;
                break 'epochs;
            }
        }

        let val_acc = match &data.val {
            Some(val) => evaluate(model, store, val, model.copies_eval, eval_seed, eval_batch),
            None => evaluate(model, store, &data.test, model.copies_eval, eval_seed, eval_batch),
        };
        let test_acc = if data.val.is_some() {
            evaluate(model, store, &data.test, model.copies_eval, eval_seed, eval_batch)
        } else {
            val_acc
        };

        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_acc,
            test_acc,
            layers: telemetry(model, store),
            wall_secs: t0.elapsed().as_secs_f64(),
        });

        if val_acc > best_val {
            best_val = val_acc;
            best = store.clone();
            best_epoch = epoch;
            test_at_best = test_acc;
        }
        if let Some(p) = params.patience {
            if epoch >= best_epoch + p {
                end = TrainEnd::EarlyStopped;
                break;
            }
        }
    }

    if history.is_empty() && end == TrainEnd::Diverged {
        return Err(AugError::NonFinite {
            context: "training diverged before completing one epoch".into(),
        });
    }
    if best_val == f64::NEG_INFINITY {
        best = store.clone();
    }
    Ok(TrainOutput {
        history,
        best,
        best_epoch,
        best_val_acc: best_val.max(0.0),
        test_acc_at_best: test_at_best,
        end,
    })
}
