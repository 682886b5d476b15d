//! The augmentation-network architecture: stacked augmentation layers,
//! copy-averaged forward passes and the penalized training objective.
//!
//! An augmentation layer holds `Q` transforms with hidden selection weights
//! `w'` (softmaxed to the simplex) and magnitudes `mu` in [0, 1]. Its
//! forward pass draws fresh noise per transform and returns the weighted
//! average `sum_q w_q T_q(x; mu_q)`. Layers stack sequentially; the model
//! averages the trunk's pre-softmax outputs over `C` independently
//! augmented copies, a Monte-Carlo estimate of the orbit average that stays
//! active at inference.

pub mod group;
mod params;
mod regularizer;

pub use params::{ParamEntry, ParamId, ParamRole, ParamStore, Session};
pub use regularizer::{
    augerino_regularizer, reg_grad_analytic, selective_regularizer, RegKind, NORM_SMOOTHING,
};

use crate::augment::{apply_transform, TransformSpec};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::trunk::Trunk;

/// One augmentation layer: transforms plus their selection/magnitude
/// parameters in the store.
#[derive(Clone, Debug)]
pub struct AugLayer {
    pub transforms: Vec<TransformSpec>,
    /// Hidden weights w' (softmaxed into the selection distribution).
    pub hidden_weights: ParamId,
    /// Magnitudes mu, kept in [0, 1] by the optimizer's projection.
    pub magnitudes: ParamId,
}

impl AugLayer {
    /// Register a layer's parameters: uniform hidden weights (zeros) and a
    /// constant initial magnitude.
    pub fn build(
        store: &mut ParamStore,
        index: usize,
        transforms: Vec<TransformSpec>,
        mu_init: f64,
    ) -> AugLayer {
        assert!(!transforms.is_empty(), "augmentation layer needs transforms");
        let q = transforms.len();
        let hidden_weights = store.add(
            format!("aug.layer{index}.hidden_weights"),
            &[q],
            vec![0.0; q],
            ParamRole::AugWeight,
        );
        let magnitudes = store.add(
            format!("aug.layer{index}.magnitudes"),
            &[q],
            vec![mu_init.clamp(0.0, 1.0); q],
            ParamRole::AugMagnitude,
        );
        AugLayer {
            transforms,
            hidden_weights,
            magnitudes,
        }
    }

    /// Current effective weights (softmax of w'), computed off-tape.
    pub fn weights_now(&self, store: &ParamStore) -> Vec<f64> {
        softmax_plain(store.data(self.hidden_weights))
    }

    pub fn magnitudes_now(&self, store: &ParamStore) -> Vec<f64> {
        store.data(self.magnitudes).to_vec()
    }

    /// Index of the argmax-weight transform.
    pub fn selected(&self, store: &ParamStore) -> usize {
        let w = self.weights_now(store);
        w.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

pub(crate) fn softmax_plain(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Ordered stack of augmentation layers.
#[derive(Clone, Debug, Default)]
pub struct AugmentationModule {
    pub layers: Vec<AugLayer>,
}

impl AugmentationModule {
    pub fn empty() -> AugmentationModule {
        AugmentationModule { layers: Vec::new() }
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.layers
            .iter()
            .map(|l| store.data(l.hidden_weights).len() + store.data(l.magnitudes).len())
            .sum()
    }
}

/// The full model: augmentation module, trunk and copy counts.
#[derive(Clone, Debug)]
pub struct AugNetModel {
    pub aug: AugmentationModule,
    pub trunk: Trunk,
    pub copies_train: usize,
    pub copies_eval: usize,
}

/// Numerically stable softmax of a layer's hidden weights, on tape.
pub fn effective_weights(session: &mut Session, layer: &AugLayer) -> Tensor {
    let hidden = session.param(layer.hidden_weights);
    session.tape.softmax(&hidden)
}

/// One layer's forward pass: `sum_q w_q T_q(x; mu_q)` with fresh noise per
/// transform. Gradients flow to w', mu and x.
pub fn aug_layer_forward(
    session: &mut Session,
    x: &Tensor,
    layer: &AugLayer,
    rng: &mut RngStream,
) -> Tensor {
    let w = effective_weights(session, layer);
    let mus = session.param(layer.magnitudes);
    let mu_now = session.store.data(layer.magnitudes).to_vec();
    let mut acc: Option<Tensor> = None;
    for (q, spec) in layer.transforms.iter().enumerate() {
        let draw = spec.sample_draw(rng, x.shape(), mu_now[q]);
        let mu_q = session.tape.gather_scalar(&mus, q);
        let t = apply_transform(&mut session.tape, x, &mu_q, spec, &draw);
        let w_q = session.tape.gather_scalar(&w, q);
        let term = session.tape.mul(&t, &w_q);
        acc = Some(match acc {
            Some(a) => session.tape.add(&a, &term),
            None => term,
        });
    }
    acc.expect("layer has at least one transform")
}

/// Sequential composition of all augmentation layers. Layer `l` draws its
/// noise from `rng.split(l)`, so a manual replay of the same splits nests
/// identically.
pub fn augmentation_module_forward(
    session: &mut Session,
    x: &Tensor,
    module: &AugmentationModule,
    rng: &RngStream,
) -> Tensor {
    let mut h = x.clone();
    for (l, layer) in module.layers.iter().enumerate() {
        let mut layer_rng = rng.split(l as u64);
        h = aug_layer_forward(session, &h, layer, &mut layer_rng);
    }
    h
}

/// Averaged pre-softmax outputs over `copies` independently augmented
/// copies of the batch. Copy `c` draws from `rng.split(c)`.
pub fn augnet_forward(
    session: &mut Session,
    x: &Tensor,
    model: &AugNetModel,
    copies: usize,
    rng: &RngStream,
) -> Tensor {
    assert!(copies >= 1, "need at least one copy");
    let mut acc: Option<Tensor> = None;
    for c in 0..copies {
        let copy_rng = rng.split(c as u64);
        let aug = augmentation_module_forward(session, x, &model.aug, &copy_rng);
        let out = model.trunk.forward(session, &aug);
        acc = Some(match acc {
            Some(a) => session.tape.add(&a, &out),
            None => out,
        });
    }
    let total = acc.unwrap();
    if copies == 1 {
        total
    } else {
        session.tape.scale(&total, 1.0 / copies as f64)
    }
}

/// Penalized training objective: mean cross-entropy of the copy-averaged
/// outputs plus `lambda` times the chosen regularizer.
#[allow(clippy::too_many_arguments)]
pub fn training_loss(
    session: &mut Session,
    x: &Tensor,
    labels: &[usize],
    model: &AugNetModel,
    lambda: f64,
    reg_kind: RegKind,
    rng: &RngStream,
) -> Tensor {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    let out = augnet_forward(session, x, model, model.copies_train, rng);
    let ce = session.tape.softmax_cross_entropy(&out, labels);
    let reg = match reg_kind {
        RegKind::Selective => Some(selective_regularizer(session, &model.aug)),
        RegKind::Augerino => Some(augerino_regularizer(session, &model.aug)),
        RegKind::None => None,
    };
    match reg {
        Some(r) if lambda > 0.0 => {
            let scaled = session.tape.scale(&r, lambda);
            session.tape.add(&ce, &scaled)
        }
        _ => ce,
    }
}
