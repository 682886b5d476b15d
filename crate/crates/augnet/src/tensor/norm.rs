//! Batch normalization over the channel axis.

use super::tape::Tape;
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and report updated running stats.
    Train,
    /// Normalize with the provided running statistics.
    Eval,
}

impl Tape {
    /// Batch norm on `(B, C, spatial...)` input, statistics per channel.
    ///
    /// Train mode normalizes with the biased batch variance and returns the
    /// exponential-moving-average update of the running statistics (the
    /// running variance uses the unbiased estimate when more than one sample
    /// contributes). Eval mode consumes the running statistics and returns
    /// `None`. Gradients flow to input, gamma and beta in both modes.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
        mode: BatchNormMode,
        momentum: f64,
        eps: f64,
    ) -> (Tensor, Option<(Vec<f64>, Vec<f64>)>) {
        assert!(eps > 0.0, "batch_norm eps must be positive");
        assert!(
            x.shape().len() >= 2,
            "batch_norm expects (batch, ch, spatial...)"
        );
        let b = x.shape()[0];
        let c = x.shape()[1];
        let spatial: usize = x.shape()[2..].iter().product::<usize>().max(1);
        assert!(b >= 1, "batch_norm needs at least one sample");
        assert_eq!(gamma.shape(), &[c], "gamma must be per-channel");
        assert_eq!(beta.shape(), &[c], "beta must be per-channel");
        assert_eq!(running_mean.len(), c);
        assert_eq!(running_var.len(), c);

        let n = b * spatial; // samples per channel
        let xd = x.data();
        let idx = move |bi: usize, ci: usize, s: usize| (bi * c + ci) * spatial + s;

        // channel statistics used for normalization
        let (mean, var, updated) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        for sp in 0..spatial {
                            s += xd[idx(bi, ci, sp)];
                        }
                    }
                    let m = s / n as f64;
                    let mut v = 0.0;
                    for bi in 0..b {
                        for sp in 0..spatial {
                            let d = xd[idx(bi, ci, sp)] - m;
                            v += d * d;
                        }
                    }
                    mean[ci] = m;
                    var[ci] = v / n as f64;
                }
                let mut new_rm = vec![0.0; c];
                let mut new_rv = vec![0.0; c];
                for ci in 0..c {
                    let unbiased = if n > 1 {
                        var[ci] * n as f64 / (n as f64 - 1.0)
                    } else {
                        var[ci]
                    };
                    new_rm[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean[ci];
                    new_rv[ci] = (1.0 - momentum) * running_var[ci] + momentum * unbiased;
                }
                (mean, var, Some((new_rm, new_rv)))
            }
            BatchNormMode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
        };

        let gd = gamma.data();
        let bd = beta.data();
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut y = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let (m, is, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
                for sp in 0..spatial {
                    let i = idx(bi, ci, sp);
                    y[i] = ga * (xd[i] - m) * is + be;
                }
            }
        }
        let out = Tensor::from_vec(x.shape(), y);

        let xi = self.index_of(x);
        let gi = self.index_of(gamma);
        let bi_ = self.index_of(beta);
        if xi.is_none() && gi.is_none() && bi_.is_none() {
            return (out, updated);
        }
        let mut parents = Vec::new();
        let (mut sx, mut sg, mut sb) = (None, None, None);
        if let Some(i) = xi {
            sx = Some(parents.len());
            parents.push(i);
        }
        if let Some(i) = gi {
            sg = Some(parents.len());
            parents.push(i);
        }
        if let Some(i) = bi_ {
            sb = Some(parents.len());
            parents.push(i);
        }
        let xd = x.share_data();
        let gd = gamma.share_data();
        let batch_stats = matches!(mode, BatchNormMode::Train);
        let out_t = self.record(
            "batch_norm",
            parents,
            out,
            Box::new(move |g| {
                let mut contribs = Vec::new();
                if let Some(slot) = sx {
                    let mut gx = vec![0.0; xd.len()];
                    if batch_stats {
                        // mean/var depend on x: full batch-norm backward
                        for ci in 0..c {
                            let (m, is, ga) = (mean[ci], inv_std[ci], gd[ci]);
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xhat = 0.0;
                            for bi in 0..b {
                                for sp in 0..spatial {
                                    let i = idx(bi, ci, sp);
                                    let dxhat = g[i] * ga;
                                    let xhat = (xd[i] - m) * is;
                                    sum_dxhat += dxhat;
                                    sum_dxhat_xhat += dxhat * xhat;
                                }
                            }
                            let nf = n as f64;
                            for bi in 0..b {
                                for sp in 0..spatial {
                                    let i = idx(bi, ci, sp);
                                    let dxhat = g[i] * ga;
                                    let xhat = (xd[i] - m) * is;
                                    gx[i] = is / nf
                                        * (nf * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                                }
                            }
                        }
                    } else {
                        for ci in 0..c {
                            let scale = gd[ci] * inv_std[ci];
                            for bi in 0..b {
                                for sp in 0..spatial {
                                    let i = idx(bi, ci, sp);
                                    gx[i] = g[i] * scale;
                                }
                            }
                        }
                    }
                    contribs.push((slot, gx));
                }
                if let Some(slot) = sg {
                    let mut gg = vec![0.0; c];
                    for ci in 0..c {
                        let (m, is) = (mean[ci], inv_std[ci]);
                        for bi in 0..b {
                            for sp in 0..spatial {
                                let i = idx(bi, ci, sp);
                                gg[ci] += g[i] * (xd[i] - m) * is;
                            }
                        }
                    }
                    contribs.push((slot, gg));
                }
                if let Some(slot) = sb {
                    let mut gb = vec![0.0; c];
                    for ci in 0..c {
                        for bi in 0..b {
                            for sp in 0..spatial {
                                gb[ci] += g[idx(bi, ci, sp)];
                            }
                        }
                    }
                    contribs.push((slot, gb));
                }
                contribs
            }),
        );
        (out_t, updated)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};
    use super::BatchNormMode;

    #[test]
    fn zero_variance_input_maps_to_zero() {
        let mut tape = Tape::new();
        let x = Tensor::filled(&[4, 2, 3], 7.0);
        let gamma = Tensor::filled(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let (y, _) = tape.batch_norm(
            &x,
            &gamma,
            &beta,
            &[0.0; 2],
            &[1.0; 2],
            BatchNormMode::Train,
            0.1,
            1e-5,
        );
        assert!(y.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn beta_shifts_output_mean() {
        let mut tape = Tape::new();
        let x = Tensor::from_fn(&[8, 1, 1], |i| i as f64);
        let gamma = Tensor::filled(&[1], 1.0);
        let beta = Tensor::filled(&[1], 5.0);
        let (y, _) = tape.batch_norm(
            &x,
            &gamma,
            &beta,
            &[0.0],
            &[1.0],
            BatchNormMode::Train,
            0.1,
            1e-8,
        );
        let m: f64 = y.data().iter().sum::<f64>() / 8.0;
        assert!((m - 5.0).abs() < 1e-9);
    }

    #[test]
    fn running_stats_update_is_ema() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[2, 1, 1], vec![1.0, 3.0]);
        let gamma = Tensor::filled(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let (_, upd) = tape.batch_norm(
            &x,
            &gamma,
            &beta,
            &[10.0],
            &[4.0],
            BatchNormMode::Train,
            0.5,
            1e-5,
        );
        let (rm, rv) = upd.unwrap();
        // batch mean 2, biased var 1, unbiased var 2
        assert!((rm[0] - (0.5 * 10.0 + 0.5 * 2.0)).abs() < 1e-12);
        assert!((rv[0] - (0.5 * 4.0 + 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[1, 1, 2], vec![3.0, 5.0]);
        let gamma = Tensor::filled(&[1], 2.0);
        let beta = Tensor::filled(&[1], 1.0);
        let (y, upd) = tape.batch_norm(
            &x,
            &gamma,
            &beta,
            &[3.0],
            &[4.0],
            BatchNormMode::Eval,
            0.1,
            1e-12,
        );
        assert!(upd.is_none());
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!((y.data()[1] - (2.0 * (5.0 - 3.0) / 2.0 + 1.0)).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "eps")]
    fn nonpositive_eps_rejected() {
        let mut tape = Tape::new();
        let x = Tensor::zeros(&[1, 1, 2]);
        let gamma = Tensor::filled(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let _ = tape.batch_norm(
            &x,
            &gamma,
            &beta,
            &[0.0],
            &[1.0],
            BatchNormMode::Train,
            0.1,
            0.0,
        );
    }
}
