//! Softmax cross-entropy, fused for numerical stability.

use super::tape::Tape;
use super::Tensor;

impl Tape {
    /// Mean cross-entropy of `logits (B, K)` against integer class labels,
    /// computed with the log-sum-exp trick. The gradient with respect to the
    /// logits is `(softmax - onehot) / B`.
    pub fn softmax_cross_entropy(&mut self, logits: &Tensor, labels: &[usize]) -> Tensor {
        assert_eq!(
            logits.shape().len(),
            2,
            "softmax_cross_entropy expects (batch, classes)"
        );
        let (b, k) = (logits.shape()[0], logits.shape()[1]);
        assert_eq!(labels.len(), b, "one label per batch row");
        assert!(b > 0, "empty batch");
        for (r, &y) in labels.iter().enumerate() {
            assert!(y < k, "label {y} out of range for {k} classes (row {r})");
        }

        let ld = logits.data();
        let mut probs = vec![0.0; b * k];
        let mut total = 0.0;
        for r in 0..b {
            let row = &ld[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * k + j] = e;
                z += e;
            }
            for j in 0..k {
                probs[r * k + j] /= z;
            }
            let lse = m + z.ln();
            total += lse - row[labels[r]];
        }
        let out = Tensor::scalar(total / b as f64);

        let Some(idx) = self.index_of(logits) else {
            return out;
        };
        let labels = labels.to_vec();
        self.record(
            "softmax_cross_entropy",
            vec![idx],
            out,
            Box::new(move |g| {
                let scale = g[0] / b as f64;
                let mut dl = vec![0.0; b * k];
                for r in 0..b {
                    for j in 0..k {
                        let onehot = if labels[r] == j { 1.0 } else { 0.0 };
                        dl[r * k + j] = (probs[r * k + j] - onehot) * scale;
                    }
                }
                vec![(0, dl)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut tape = Tape::new();
        let logits = Tensor::zeros(&[2, 4]);
        let loss = tape.softmax_cross_entropy(&logits, &[0, 3]);
        assert!((loss.item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_near_zero() {
        let mut tape = Tape::new();
        let logits = Tensor::from_vec(&[1, 3], vec![30.0, -30.0, -30.0]);
        let loss = tape.softmax_cross_entropy(&logits, &[0]);
        assert!(loss.item() < 1e-12);
    }

    #[test]
    fn gradient_is_softmax_minus_onehot_over_batch() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 2.0, 0.0]));
        let loss = tape.softmax_cross_entropy(&logits, &[0, 1]);
        let g = tape.backward(&loss);
        let gl = g.get(&logits).unwrap();
        assert!((gl[0] - (0.5 - 1.0) / 2.0).abs() < 1e-12);
        assert!((gl[1] - 0.5 / 2.0).abs() < 1e-12);
        let p = (2.0f64).exp() / ((2.0f64).exp() + 1.0);
        assert!((gl[2] - p / 2.0).abs() < 1e-12);
        assert!((gl[3] - (1.0 - p - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn label_out_of_range_panics() {
        let mut tape = Tape::new();
        let logits = Tensor::zeros(&[1, 3]);
        let _ = tape.softmax_cross_entropy(&logits, &[3]);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let mut tape = Tape::new();
        let logits = Tensor::from_vec(&[1, 2], vec![1e4, -1e4]);
        let loss = tape.softmax_cross_entropy(&logits, &[1]);
        assert!(loss.item().is_finite());
    }
}
