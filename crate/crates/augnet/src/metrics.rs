//! Evaluation metrics: accuracy, balanced accuracy and the invariance
//! score.
//!
//! The invariance of a model `f` to a transform `T` at input `x` is
//! `(b - d(f(x), f(T(x)))) / b` with `d` the cosine distance and `b` a
//! baseline distance between the outputs of unrelated (shuffled) inputs;
//! 1 means the transform leaves the output untouched, 0 means it perturbs
//! it as much as swapping the input for a different example.

use crate::augment::{apply_plain, TransformSpec};
use crate::error::AugError;
use crate::model::{group::GroupElement, AugNetModel, ParamStore, Session};
use crate::model::group::group_average_exact;
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::trunk::Trunk;

/// 1 - <a,b>/(|a||b|), in [0, 2]. Degenerate near-zero vectors count as
/// maximally distant.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine distance needs equal lengths");
    let na = crate::tensor::dot_slices(a, a).sqrt();
    let nb = crate::tensor::dot_slices(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 1.0;
    }
    1.0 - crate::tensor::dot_slices(a, b) / (na * nb)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax (ties to the lowest index) hits the label.
pub fn accuracy(outputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(outputs.len(), labels.len(), "one output row per label");
    assert!(!outputs.is_empty(), "accuracy of an empty set is undefined");
    let correct = outputs
        .iter()
        .zip(labels)
        .filter(|(o, &y)| argmax(o) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Mean of per-class recalls over the classes present in `labels`.
pub fn balanced_accuracy(outputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(outputs.len(), labels.len(), "one output row per label");
    assert!(!outputs.is_empty(), "balanced accuracy of an empty set");
    let k = labels.iter().copied().max().unwrap() + 1;
    let mut total = vec![0usize; k];
    let mut hit = vec![0usize; k];
    for (o, &y) in outputs.iter().zip(labels) {
        total[y] += 1;
        if argmax(o) == y {
            hit[y] += 1;
        }
    }
    let mut recalls = Vec::new();
    for c in 0..k {
        if total[c] > 0 {
            recalls.push(hit[c] as f64 / total[c] as f64);
        }
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Linear-interpolation percentile of an unsorted sample, q in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        let frac = pos - lo as f64;
        v[lo] * (1.0 - frac) + v[hi] * frac
    }
}

/// Anything that maps a single example to pre-softmax outputs. The seed
/// pins any internal sampling so paired evaluations share their draws.
pub trait Predictor {
    fn predict(&mut self, x: &Tensor, seed: u64) -> Vec<f64>;
}

/// Bare trunk (deterministic eval forward).
pub struct TrunkPredictor<'a> {
    pub trunk: &'a Trunk,
    pub store: &'a mut ParamStore,
}

impl Predictor for TrunkPredictor<'_> {
    fn predict(&mut self, x: &Tensor, _seed: u64) -> Vec<f64> {
        let batched = unsqueeze(x);
        let mut s = Session::eval(self.store);
        self.trunk.forward(&mut s, &batched).to_vec()
    }
}

/// Copy-averaged model with its augmentation module active at inference.
pub struct AugNetPredictor<'a> {
    pub model: &'a AugNetModel,
    pub store: &'a mut ParamStore,
    pub copies: usize,
}

impl Predictor for AugNetPredictor<'_> {
    fn predict(&mut self, x: &Tensor, seed: u64) -> Vec<f64> {
        let batched = unsqueeze(x);
        let mut s = Session::eval(self.store);
        let rng = RngStream::new(seed);
        crate::model::augnet_forward(&mut s, &batched, self.model, self.copies, &rng).to_vec()
    }
}

/// Exact orbit average over a finite permutation group.
pub struct GroupAveragePredictor<'a> {
    pub trunk: &'a Trunk,
    pub store: &'a mut ParamStore,
    pub elements: &'a [GroupElement],
}

impl Predictor for GroupAveragePredictor<'_> {
    fn predict(&mut self, x: &Tensor, _seed: u64) -> Vec<f64> {
        let batched = unsqueeze(x);
        group_average_exact(self.trunk, self.store, self.elements, &batched)
            .expect("group verified by construction")
            .to_vec()
    }
}

fn unsqueeze(x: &Tensor) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    Tensor::from_vec(&shape, x.to_vec())
}

#[derive(Clone, Debug)]
pub struct InvarianceReport {
    pub scores: Vec<f64>,
    pub median: f64,
    /// 12.5th and 87.5th percentiles: the central 75% band.
    pub band: (f64, f64),
    pub baseline: f64,
}

/// Invariance of `pred` to `probe` over an evaluation set.
///
/// `probe` is a transform spec plus the magnitude to apply it at; `None`
/// probes the identity. Each example's model outputs are computed once and
/// reused, with the model's internal draws pinned per example, so the
/// identity probe scores exactly 1. The baseline pairs outputs through a
/// seeded derangement of the set.
pub fn invariance(
    pred: &mut dyn Predictor,
    examples: &[Tensor],
    probe: Option<(&TransformSpec, f64)>,
    seed: u64,
) -> Result<InvarianceReport, AugError> {
    assert!(examples.len() >= 2, "invariance needs at least two examples");
    let root = RngStream::new(seed);

    let outputs: Vec<Vec<f64>> = examples
        .iter()
        .enumerate()
        .map(|(i, x)| pred.predict(x, root.split(i as u64).seed()))
        .collect();

    let mut drng = root.split(0xD0);
    let perm = drng.derangement(examples.len());
    let baseline = outputs
        .iter()
        .enumerate()
        .map(|(i, o)| cosine_distance(o, &outputs[perm[i]]))
        .sum::<f64>()
        / examples.len() as f64;
    if baseline < 1e-9 {
        return Err(AugError::CollapsedOutput { baseline });
    }

    let mut scores = Vec::with_capacity(examples.len());
    for (i, x) in examples.iter().enumerate() {
        let transformed = match probe {
            Some((spec, mu)) => {
                let batched = unsqueeze(x);
                let mut trng = root.split(0x7_0000 + i as u64);
                let draw = spec.sample_draw(&mut trng, batched.shape(), mu);
                let y = apply_plain(&batched, mu, spec, &draw);
                Tensor::from_vec(x.shape(), y.to_vec())
            }
            None => x.clone(),
        };
        let out_t = pred.predict(&transformed, root.split(i as u64).seed());
        let d = cosine_distance(&outputs[i], &out_t);
        scores.push((baseline - d) / baseline);
    }

    let median = percentile(&scores, 50.0);
    let band = (percentile(&scores, 12.5), percentile(&scores, 87.5));
    Ok(InvarianceReport {
        scores,
        median,
        band,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::TransformKind;
    use crate::rng::RngStream;
    use crate::trunk::{build_trunk, TrunkConfig};

    #[test]
    fn cosine_distance_basics() {
        assert!((cosine_distance(&[1.0, 2.0], &[1.0, 2.0])).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        // degenerate input
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    fn accuracy_and_balance() {
        let outputs = vec![
            vec![2.0, 0.0],
            vec![3.0, 1.0],
            vec![5.0, 0.0],
            vec![9.0, 1.0],
        ];
        let labels = vec![0, 0, 1, 1];
        assert_eq!(accuracy(&outputs, &labels), 0.5);
        // degenerate predictor on balanced classes
        assert_eq!(balanced_accuracy(&outputs, &labels), 0.5);
        // all correct
        let perfect = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(accuracy(&perfect, &[0, 1]), 1.0);
    }

    #[test]
    fn metrics_invariant_under_joint_shuffle() {
        let mut rng = RngStream::new(3);
        let outputs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal(), rng.normal(), rng.normal()]).collect();
        let labels: Vec<usize> = (0..40).map(|_| rng.below(3)).collect();
        let a = accuracy(&outputs, &labels);
        let ba = balanced_accuracy(&outputs, &labels);
        let mut idx: Vec<usize> = (0..40).collect();
        rng.shuffle(&mut idx);
        let so: Vec<Vec<f64>> = idx.iter().map(|&i| outputs[i].clone()).collect();
        let sl: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        assert_eq!(a, accuracy(&so, &sl));
        assert_eq!(ba, balanced_accuracy(&so, &sl));
    }

    #[test]
    #[should_panic(expected = "empty")]
    fn empty_accuracy_panics() {
        let _ = accuracy(&[], &[]);
    }

    #[test]
    fn identity_probe_scores_exactly_one() {
        let mut store = ParamStore::new();
        let trunk = build_trunk(&TrunkConfig::mlp(vec![5], vec![1, 32], 3), &mut store, &RngStream::new(2));
        let mut rng = RngStream::new(10);
        let examples: Vec<Tensor> = (0..12)
            .map(|_| Tensor::from_fn(&[1, 32], |_| rng.normal()))
            .collect();
        let mut pred = TrunkPredictor {
            trunk: &trunk,
            store: &mut store,
        };
        let rep = invariance(&mut pred, &examples, None, 7).unwrap();
        for s in &rep.scores {
            assert_eq!(*s, 1.0);
        }
        assert_eq!(rep.median, 1.0);
    }

    #[test]
    fn group_average_under_its_group_scores_one() {
        let mut store = ParamStore::new();
        let trunk = build_trunk(
            &TrunkConfig::mlp(vec![6], vec![2, 6, 6], 3),
            &mut store,
            &RngStream::new(5),
        );
        let elements = GroupElement::flip_group(&[2, 6, 6]);
        let mut rng = RngStream::new(20);
        let examples: Vec<Tensor> = (0..10)
            .map(|_| Tensor::from_fn(&[2, 6, 6], |_| rng.normal()))
            .collect();
        // probe: deterministic full flip via the hflip transform at mu=1
        // applied through the exact permutation to keep it bit-exact
        let mut outputs_equal = true;
        {
            let mut pred = GroupAveragePredictor {
                trunk: &trunk,
                store: &mut store,
                elements: &elements,
            };
            for x in &examples {
                let fx = elements[1].apply(x);
                let a = pred.predict(x, 0);
                let b = pred.predict(&fx, 0);
                let d = cosine_distance(&a, &b);
                if d.abs() > 1e-9 {
                    outputs_equal = false;
                }
            }
        }
        assert!(outputs_equal);
    }

    #[test]
    fn strong_transform_on_random_trunk_scores_below_one() {
        let mut store = ParamStore::new();
        let trunk = build_trunk(
            &TrunkConfig::mlp(vec![8], vec![1, 64], 4),
            &mut store,
            &RngStream::new(9),
        );
        let mut rng = RngStream::new(30);
        let examples: Vec<Tensor> = (0..24)
            .map(|_| Tensor::from_fn(&[1, 64], |_| rng.normal()))
            .collect();
        let spec = TransformSpec::new(TransformKind::GaussianNoise).with_range(3.0);
        let mut pred = TrunkPredictor {
            trunk: &trunk,
            store: &mut store,
        };
        let rep = invariance(&mut pred, &examples, Some((&spec, 1.0)), 4).unwrap();
        assert!(rep.median < 0.99, "median {}", rep.median);
    }

    #[test]
    fn scores_invariant_to_output_rescaling() {
        // scaling the final dense layer by c > 0 must not change any score
        let mut store = ParamStore::new();
        let trunk = build_trunk(
            &TrunkConfig::mlp(vec![4], vec![1, 16], 3),
            &mut store,
            &RngStream::new(3),
        );
        let mut rng = RngStream::new(40);
        let examples: Vec<Tensor> = (0..8)
            .map(|_| Tensor::from_fn(&[1, 16], |_| rng.normal()))
            .collect();
        let spec = TransformSpec::new(TransformKind::GaussianNoise);
        let rep1 = {
            let mut pred = TrunkPredictor {
                trunk: &trunk,
                store: &mut store,
            };
            invariance(&mut pred, &examples, Some((&spec, 0.5)), 6).unwrap()
        };
        // scale output weights and bias by 3
        let ids = trunk.param_ids().to_vec();
        for id in &ids[ids.len() - 2..] {
            let scaled: Vec<f64> = store.data(*id).iter().map(|v| 3.0 * v).collect();
            store.set_data(*id, scaled);
        }
        let rep2 = {
            let mut pred = TrunkPredictor {
                trunk: &trunk,
                store: &mut store,
            };
            invariance(&mut pred, &examples, Some((&spec, 0.5)), 6).unwrap()
        };
        for (a, b) in rep1.scores.iter().zip(&rep2.scores) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn collapsed_model_is_reported() {
        let mut store = ParamStore::new();
        let trunk = build_trunk(
            &TrunkConfig::mlp(vec![2], vec![1, 8], 3),
            &mut store,
            &RngStream::new(4),
        );
        // zero every parameter: constant outputs
        let ids = trunk.param_ids().to_vec();
        for id in ids {
            let n = store.data(id).len();
            store.set_data(id, vec![0.0; n]);
        }
        let examples: Vec<Tensor> = (0..6).map(|i| Tensor::filled(&[1, 8], i as f64)).collect();
        let mut pred = TrunkPredictor {
            trunk: &trunk,
            store: &mut store,
        };
        let err = invariance(&mut pred, &examples, None, 1).unwrap_err();
        assert!(matches!(err, AugError::CollapsedOutput { .. }));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
    }
}
