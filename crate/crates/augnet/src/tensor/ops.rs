//! Elementwise ops, reductions, softmax and indexing/shape primitives.
//!
//! Broadcasting is deliberately restricted: operand shapes must match
//! exactly, or one operand must be a scalar (single-element tensor). The
//! gradient of a broadcast scalar operand is the sum of the elementwise
//! gradients.

use super::tape::Tape;
use super::{same_shape, Tensor};

/// How two operands line up: elementwise, left-scalar or right-scalar.
enum Pairing {
    Elementwise,
    ScalarLeft,
    ScalarRight,
}

fn pairing(label: &str, a: &Tensor, b: &Tensor) -> Pairing {
    if same_shape(a, b) {
        Pairing::Elementwise
    } else if a.is_scalar() {
        Pairing::ScalarLeft
    } else if b.is_scalar() {
        Pairing::ScalarRight
    } else {
        panic!(
            "{label}: shape mismatch {:?} vs {:?} (only scalar broadcast is supported)",
            a.shape(),
            b.shape()
        );
    }
}

fn tracked_parents(tape: &Tape, ts: &[&Tensor]) -> (Vec<usize>, Vec<Option<usize>>) {
    // parents: tape indices of tracked tensors, slots: per-input slot or None
    let mut parents = Vec::new();
    let mut slots = Vec::with_capacity(ts.len());
    for t in ts {
        match tape.index_of(t) {
            Some(idx) => {
                slots.push(Some(parents.len()));
                parents.push(idx);
            }
            None => slots.push(None),
        }
    }
    (parents, slots)
}

impl Tape {
    fn binary(
        &mut self,
        label: &'static str,
        a: &Tensor,
        b: &Tensor,
        fwd: impl Fn(f64, f64) -> f64,
        // (upstream, a_val, b_val) -> (da, db) per element
        bwd: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Tensor {
        let pair = pairing(label, a, b);
        let (out_shape, n) = match pair {
            Pairing::Elementwise | Pairing::ScalarRight => (a.shape().to_vec(), a.len()),
            Pairing::ScalarLeft => (b.shape().to_vec(), b.len()),
        };
        let av = a.data();
        let bv = b.data();
        let data: Vec<f64> = match pair {
            Pairing::Elementwise => (0..n).map(|i| fwd(av[i], bv[i])).collect(),
            Pairing::ScalarLeft => (0..n).map(|i| fwd(av[0], bv[i])).collect(),
            Pairing::ScalarRight => (0..n).map(|i| fwd(av[i], bv[0])).collect(),
        };
        let out = Tensor::from_vec(&out_shape, data);

        let (parents, slots) = tracked_parents(self, &[a, b]);
        if parents.is_empty() {
            return out;
        }
        let (a_data, b_data) = (a.share_data(), b.share_data());
        let (a_scalar, b_scalar) = (
            matches!(pair, Pairing::ScalarLeft) && n > 1,
            matches!(pair, Pairing::ScalarRight) && n > 1,
        );
        let (slot_a, slot_b) = (slots[0], slots[1]);
        self.record(
            label,
            parents,
            out,
            Box::new(move |g| {
                let mut contribs = Vec::new();
                if let Some(sa) = slot_a {
                    let mut da = if a_scalar { vec![0.0; 1] } else { vec![0.0; g.len()] };
                    for (i, &gi) in g.iter().enumerate() {
                        let (av, bv) = (
                            a_data[if a_scalar { 0 } else { i }],
                            b_data[if b_scalar { 0 } else { i }],
                        );
                        let (d, _) = bwd(gi, av, bv);
                        da[if a_scalar { 0 } else { i }] += d;
                    }
                    contribs.push((sa, da));
                }
                if let Some(sb) = slot_b {
                    let mut db = if b_scalar { vec![0.0; 1] } else { vec![0.0; g.len()] };
                    for (i, &gi) in g.iter().enumerate() {
                        let (av, bv) = (
                            a_data[if a_scalar { 0 } else { i }],
                            b_data[if b_scalar { 0 } else { i }],
                        );
                        let (_, d) = bwd(gi, av, bv);
                        db[if b_scalar { 0 } else { i }] += d;
                    }
                    contribs.push((sb, db));
                }
                contribs
            }),
        )
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary("add", a, b, |x, y| x + y, |g, _, _| (g, g))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary("sub", a, b, |x, y| x - y, |g, _, _| (g, -g))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary("mul", a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
    }

    fn unary(
        &mut self,
        label: &'static str,
        x: &Tensor,
        fwd: impl Fn(f64) -> f64,
        // (upstream, x_val, out_val) -> dx
        bwd: impl Fn(f64, f64, f64) -> f64 + 'static,
        check_finite: bool,
    ) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| fwd(v)).collect();
        if check_finite {
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                panic!(
                    "{label} produced non-finite output at element {i} (op id {})",
                    self.len()
                );
            }
        }
        let out = Tensor::from_vec(x.shape(), data);
        let Some(idx) = self.index_of(x) else { return out };
        let x_data = x.share_data();
        let out_data = out.share_data();
        self.record(
            label,
            vec![idx],
            out,
            Box::new(move |g| {
                let dx = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| bwd(gi, x_data[i], out_data[i]))
                    .collect();
                vec![(0, dx)]
            }),
        )
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: &Tensor, c: f64) -> Tensor {
        self.unary("scale", x, |v| c * v, move |g, _, _| c * g, false)
    }

    pub fn negate(&mut self, x: &Tensor) -> Tensor {
        self.unary("negate", x, |v| -v, |g, _, _| -g, false)
    }

    /// max(x, 0); the gradient at exactly 0 is defined as 0.
    pub fn relu(&mut self, x: &Tensor) -> Tensor {
        self.unary(
            "relu",
            x,
            |v| if v > 0.0 { v } else { 0.0 },
            |g, xv, _| if xv > 0.0 { g } else { 0.0 },
            false,
        )
    }

    pub fn exp(&mut self, x: &Tensor) -> Tensor {
        self.unary("exp", x, f64::exp, |g, _, y| g * y, true)
    }

    /// Natural log; panics on non-positive input.
    pub fn log(&mut self, x: &Tensor) -> Tensor {
        assert!(
            x.data().iter().all(|&v| v > 0.0),
            "log requires strictly positive operands"
        );
        self.unary("log", x, f64::ln, |g, xv, _| g / xv, true)
    }

    /// Square root; when the result is differentiated the operand must be
    /// strictly positive (the derivative blows up at 0).
    pub fn sqrt(&mut self, x: &Tensor) -> Tensor {
        assert!(
            x.data().iter().all(|&v| v >= 0.0),
            "sqrt requires non-negative operands"
        );
        if x.is_tracked() {
            assert!(
                x.data().iter().all(|&v| v > 0.0),
                "sqrt gradient undefined at 0; smooth the operand first"
            );
        }
        self.unary("sqrt", x, f64::sqrt, |g, _, y| g * 0.5 / y, true)
    }

    /// Clamp into [lo, hi]; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, x: &Tensor, lo: f64, hi: f64) -> Tensor {
        assert!(lo <= hi, "clamp bounds out of order");
        self.unary(
            "clamp",
            x,
            move |v| v.clamp(lo, hi),
            move |g, xv, _| if xv > lo && xv < hi { g } else { 0.0 },
            false,
        )
    }

    pub fn sin(&mut self, x: &Tensor) -> Tensor {
        self.unary("sin", x, f64::sin, |g, xv, _| g * xv.cos(), false)
    }

    pub fn cos(&mut self, x: &Tensor) -> Tensor {
        self.unary("cos", x, f64::cos, |g, xv, _| -g * xv.sin(), false)
    }

    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().sum();
        let out = Tensor::scalar(s);
        let Some(idx) = self.index_of(x) else { return out };
        let n = x.len();
        self.record(
            "sum",
            vec![idx],
            out,
            Box::new(move |g| vec![(0, vec![g[0]; n])]),
        )
    }

    pub fn mean(&mut self, x: &Tensor) -> Tensor {
        let n = x.len();
        assert!(n > 0, "mean of empty tensor");
        let s: f64 = x.data().iter().sum();
        let out = Tensor::scalar(s / n as f64);
        let Some(idx) = self.index_of(x) else { return out };
        self.record(
            "mean",
            vec![idx],
            out,
            Box::new(move |g| vec![(0, vec![g[0] / n as f64; n])]),
        )
    }

    /// Reinterpret the buffer with a new shape of equal element count.
    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, x.len(), "reshape changes element count");
        let out = Tensor::from_vec(shape, x.to_vec());
        let Some(idx) = self.index_of(x) else { return out };
        self.record(
            "reshape",
            vec![idx],
            out,
            Box::new(move |g| vec![(0, g.to_vec())]),
        )
    }

    /// Extract element `i` of a rank-1 tensor as a scalar tensor.
    pub fn gather_scalar(&mut self, x: &Tensor, i: usize) -> Tensor {
        assert!(i < x.len(), "gather_scalar index out of range");
        let out = Tensor::scalar(x.data()[i]);
        let Some(idx) = self.index_of(x) else { return out };
        let n = x.len();
        self.record(
            "gather_scalar",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; n];
                dx[i] = g[0];
                vec![(0, dx)]
            }),
        )
    }

    /// Rotate along axis 0: out[b] = x[(b + k) mod B]. A pure permutation,
    /// used to pair each batch row with another row of the same batch.
    pub fn roll_axis0(&mut self, x: &Tensor, k: usize) -> Tensor {
        let b = *x
            .shape()
            .first()
            .expect("roll_axis0 needs at least one axis");
        assert!(b > 0);
        let row = x.len() / b;
        let k = k % b;
        let xd = x.data();
        let mut data = vec![0.0; x.len()];
        for out_b in 0..b {
            let src = (out_b + k) % b;
            data[out_b * row..(out_b + 1) * row].copy_from_slice(&xd[src * row..(src + 1) * row]);
        }
        let out = Tensor::from_vec(x.shape(), data);
        let Some(idx) = self.index_of(x) else { return out };
        self.record(
            "roll_axis0",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for out_b in 0..b {
                    let src = (out_b + k) % b;
                    for j in 0..row {
                        dx[src * row + j] += g[out_b * row + j];
                    }
                }
                vec![(0, dx)]
            }),
        )
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, x: &Tensor) -> Tensor {
        let cols = *x.shape().last().expect("softmax needs at least one axis");
        assert!(cols > 0);
        let rows = x.len() / cols;
        let xd = x.data();
        let mut data = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                data[r * cols + j] = e;
                z += e;
            }
            for j in 0..cols {
                data[r * cols + j] /= z;
            }
        }
        let out = Tensor::from_vec(x.shape(), data);
        let Some(idx) = self.index_of(x) else { return out };
        let y = out.share_data();
        self.record(
            "softmax",
            vec![idx],
            out,
            Box::new(move |g| {
                // dx = (g - <g, y>_row) * y per row
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let o = r * cols;
                    let dot: f64 = (0..cols).map(|j| g[o + j] * y[o + j]).sum();
                    for j in 0..cols {
                        dx[o + j] = (g[o + j] - dot) * y[o + j];
                    }
                }
                vec![(0, dx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]);
        let y = tape.relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_zero_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(&x);
        let s = tape.sum(&y);
        let g = tape.backward(&s);
        assert_eq!(g.get(&x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_negate_cancels() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.5, -2.0, 0.25]));
        let n = tape.negate(&x);
        let z = tape.add(&x, &n);
        assert_eq!(z.data(), &[0.0, 0.0, 0.0]);
        let s = tape.sum(&z);
        let g = tape.backward(&s);
        assert_eq!(g.get(&x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(3.0));
        let b = tape.leaf(Tensor::scalar(5.0));
        let y = tape.mul(&a, &b);
        let g = tape.backward(&y);
        assert_eq!(g.get(&a).unwrap(), &[5.0]);
        assert_eq!(g.get(&b).unwrap(), &[3.0]);
    }

    #[test]
    fn scalar_broadcast_mul_grad_sums() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(2.0));
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]);
        let y = tape.mul(&x, &s);
        assert_eq!(y.data(), &[2.0, 4.0, 6.0]);
        let t = tape.sum(&y);
        let g = tape.backward(&t);
        assert_eq!(g.get(&s).unwrap(), &[6.0]); // sum of x
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn mismatched_shapes_panic() {
        let mut tape = Tape::new();
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        let _ = tape.add(&a, &b);
    }

    #[test]
    #[should_panic(expected = "positive")]
    fn log_of_nonpositive_panics() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[2], vec![1.0, 0.0]);
        let _ = tape.log(&x);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[2, 3], vec![0.0, 1.0, -1.0, 30.0, 0.0, 0.0]);
        let y = tape.softmax(&x);
        for r in 0..2 {
            let s: f64 = y.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // saturation
        assert!((y.data()[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roll_axis0_round_trip() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]));
        let y = tape.roll_axis0(&x, 1);
        assert_eq!(y.data(), &[3., 4., 5., 6., 1., 2.]);
        // gradient is the inverse permutation of the upstream
        let w = Tensor::from_vec(&[3, 2], vec![10., 20., 30., 40., 50., 60.]);
        let p = tape.mul(&y, &w);
        let s = tape.sum(&p);
        let g = tape.backward(&s);
        assert_eq!(g.get(&x).unwrap(), &[50., 60., 10., 20., 30., 40.]);
    }

    #[test]
    fn gather_scalar_scatters_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![4.0, 5.0, 6.0]));
        let e = tape.gather_scalar(&x, 1);
        assert_eq!(e.item(), 5.0);
        let y = tape.mul(&e, &e);
        let g = tape.backward(&y);
        assert_eq!(g.get(&x).unwrap(), &[0.0, 10.0, 0.0]);
    }

    #[test]
    fn clamp_gradient_masks_outside() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![-0.5, 0.5, 1.5]));
        let y = tape.clamp(&x, 0.0, 1.0);
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
        let s = tape.sum(&y);
        let g = tape.backward(&s);
        assert_eq!(g.get(&x).unwrap(), &[0.0, 1.0, 0.0]);
    }
}
