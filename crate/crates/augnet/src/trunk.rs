//! Trunk networks: configurable MLPs and the two small CNNs used by the
//! signal and image experiments.

use crate::model::{ParamId, ParamRole, ParamStore, Session};
use crate::rng::RngStream;
use crate::tensor::{BatchNormMode, Tensor};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrunkKind {
    Mlp,
    SinusCnn,
    SpriteCnn,
}

#[derive(Clone, Debug)]
pub struct TrunkConfig {
    pub kind: TrunkKind,
    /// Hidden widths for the MLP (ignored by the CNNs).
    pub mlp_widths: Vec<usize>,
    /// Input shape without the batch axis, e.g. (1, 1024) or (3, 32, 32).
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl TrunkConfig {
    pub fn mlp(widths: Vec<usize>, input_shape: Vec<usize>, num_classes: usize) -> TrunkConfig {
        TrunkConfig {
            kind: TrunkKind::Mlp,
            mlp_widths: widths,
            input_shape,
            num_classes,
        }
    }

    pub fn sinus_cnn(n: usize, num_classes: usize) -> TrunkConfig {
        TrunkConfig {
            kind: TrunkKind::SinusCnn,
            mlp_widths: Vec::new(),
            input_shape: vec![1, n],
            num_classes,
        }
    }

    pub fn sprite_cnn(num_classes: usize) -> TrunkConfig {
        TrunkConfig {
            kind: TrunkKind::SpriteCnn,
            mlp_widths: Vec::new(),
            input_shape: vec![3, 32, 32],
            num_classes,
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv1d { w: ParamId, stride: usize, pad: usize },
    Conv2d { w: ParamId, stride: usize, pad: usize },
    BatchNorm { gamma: ParamId, beta: ParamId, rm: ParamId, rv: ParamId },
    Relu,
    MaxPool1d { size: usize, stride: usize },
    MaxPool2d { size: usize, stride: usize },
    GlobalMeanPool,
    Flatten,
    Dense { w: ParamId, b: ParamId },
}

/// A built trunk: layer program plus the ids of its parameters.
#[derive(Clone, Debug)]
pub struct Trunk {
    pub config: TrunkConfig,
    layers: Vec<Layer>,
    params: Vec<ParamId>,
}

fn kaiming_uniform(rng: &mut RngStream, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.uniform_in(-bound, bound)).collect()
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: RngStream,
    layers: Vec<Layer>,
    params: Vec<ParamId>,
}

impl<'a> Builder<'a> {
    fn conv1d(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        let w = kaiming_uniform(&mut self.rng, c_in * k, c_out * c_in * k);
        let id = self
            .store
            .add(format!("trunk.{name}.w"), &[c_out, c_in, k], w, ParamRole::Trunk);
        self.params.push(id);
        self.layers.push(Layer::Conv1d { w: id, stride: 1, pad: 1 });
    }

    fn conv2d(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        let w = kaiming_uniform(&mut self.rng, c_in * k * k, c_out * c_in * k * k);
        let id = self.store.add(
            format!("trunk.{name}.w"),
            &[c_out, c_in, k, k],
            w,
            ParamRole::Trunk,
        );
        self.params.push(id);
        self.layers.push(Layer::Conv2d { w: id, stride: 1, pad: 1 });
    }

    fn batch_norm(&mut self, name: &str, c: usize) {
        let gamma = self
            .store
            .add(format!("trunk.{name}.gamma"), &[c], vec![1.0; c], ParamRole::Trunk);
        let beta = self
            .store
            .add(format!("trunk.{name}.beta"), &[c], vec![0.0; c], ParamRole::Trunk);
        let rm = self.store.add(
            format!("trunk.{name}.running_mean"),
            &[c],
            vec![0.0; c],
            ParamRole::State,
        );
        let rv = self.store.add(
            format!("trunk.{name}.running_var"),
            &[c],
            vec![1.0; c],
            ParamRole::State,
        );
        self.params.extend([gamma, beta]);
        self.layers.push(Layer::BatchNorm { gamma, beta, rm, rv });
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let w = kaiming_uniform(&mut self.rng, fan_in, fan_in * fan_out);
        let wid =
            self.store
                .add(format!("trunk.{name}.w"), &[fan_in, fan_out], w, ParamRole::Trunk);
        let bid = self.store.add(
            format!("trunk.{name}.b"),
            &[fan_out],
            vec![0.0; fan_out],
            ParamRole::Trunk,
        );
        self.params.extend([wid, bid]);
        self.layers.push(Layer::Dense { w: wid, b: bid });
    }
}

/// Build a trunk's parameters into `store` and return the layer program.
///
/// Weights use Kaiming-uniform fan-in init, biases start at zero and batch
/// norms at gamma=1, beta=0.
pub fn build_trunk(config: &TrunkConfig, store: &mut ParamStore, rng: &RngStream) -> Trunk {
    let mut b = Builder {
        store,
        rng: rng.split(0x7268),
        layers: Vec::new(),
        params: Vec::new(),
    };
    match config.kind {
        TrunkKind::SinusCnn => {
            assert_eq!(config.input_shape.len(), 2, "sinus_cnn wants (ch, n)");
            let c_in = config.input_shape[0];
            b.conv1d("conv1", c_in, 2, 3);
            b.batch_norm("bn1", 2);
            b.layers.push(Layer::Relu);
            b.conv1d("conv2", 2, 2, 3);
            b.batch_norm("bn2", 2);
            b.layers.push(Layer::Relu);
            b.layers.push(Layer::MaxPool1d { size: 2, stride: 2 });
            b.layers.push(Layer::GlobalMeanPool);
            b.dense("fc", 2, config.num_classes);
        }
        TrunkKind::SpriteCnn => {
            assert_eq!(config.input_shape.len(), 3, "sprite_cnn wants (ch, h, w)");
            let c_in = config.input_shape[0];
            let filters = [32, 64, 128, 256];
            let mut prev = c_in;
            for (i, &f) in filters.iter().enumerate() {
                b.conv2d(&format!("conv{}", i + 1), prev, f, 3);
                b.batch_norm(&format!("bn{}", i + 1), f);
                b.layers.push(Layer::Relu);
                if i >= 1 {
                    b.layers.push(Layer::MaxPool2d { size: 2, stride: 2 });
                }
                prev = f;
            }
            // final block: maxpool size 4 stride 1 collapses the 4x4 map
            b.layers.push(Layer::MaxPool2d { size: 4, stride: 1 });
            b.layers.push(Layer::Flatten);
            b.dense("fc", 256, config.num_classes);
        }
        TrunkKind::Mlp => {
            let flat: usize = config.input_shape.iter().product();
            b.layers.push(Layer::Flatten);
            let mut prev = flat;
            for (i, &w) in config.mlp_widths.iter().enumerate() {
                b.dense(&format!("fc{}", i + 1), prev, w);
                b.layers.push(Layer::Relu);
                prev = w;
            }
            b.dense("out", prev, config.num_classes);
        }
    }
    Trunk {
        config: config.clone(),
        layers: b.layers,
        params: b.params,
    }
}

impl Trunk {
    /// Optimizable parameter count (BN running stats excluded).
    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.params.iter().map(|&id| store.data(id).len()).sum()
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }

    /// Pre-softmax outputs for a batch. Train sessions use batch statistics
    /// (updating the running stats); eval sessions are deterministic.
    pub fn forward(&self, session: &mut Session, x: &Tensor) -> Tensor {
        assert_eq!(
            &x.shape()[1..],
            &self.config.input_shape[..],
            "input shape mismatch: got {:?}, trunk wants batch x {:?}",
            x.shape(),
            self.config.input_shape
        );
        let bsz = x.shape()[0];
        let mode = if session.is_train() {
            BatchNormMode::Train
        } else {
            BatchNormMode::Eval
        };
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv1d { w, stride, pad } => {
                    let wt = session.param(*w);
                    session.tape.conv1d(&h, &wt, *stride, *pad)
                }
                Layer::Conv2d { w, stride, pad } => {
                    let wt = session.param(*w);
                    session.tape.conv2d(&h, &wt, *stride, *pad)
                }
                Layer::BatchNorm { gamma, beta, rm, rv } => {
                    let g = session.param(*gamma);
                    let bt = session.param(*beta);
                    let rm_v = session.store.data(*rm).to_vec();
                    let rv_v = session.store.data(*rv).to_vec();
                    let (y, upd) =
                        session
                            .tape
                            .batch_norm(&h, &g, &bt, &rm_v, &rv_v, mode, BN_MOMENTUM, BN_EPS);
                    if let Some((m, v)) = upd {
                        session.update_state(*rm, m);
                        session.update_state(*rv, v);
                    }
                    y
                }
                Layer::Relu => session.tape.relu(&h),
                Layer::MaxPool1d { size, stride } => session.tape.maxpool1d(&h, *size, *stride),
                Layer::MaxPool2d { size, stride } => session.tape.maxpool2d(&h, *size, *stride),
                Layer::GlobalMeanPool => session.tape.global_mean_pool(&h),
                Layer::Flatten => {
                    let flat = h.len() / bsz;
                    session.tape.reshape(&h, &[bsz, flat])
                }
                Layer::Dense { w, b } => {
                    let wt = session.param(*w);
                    let bt = session.param(*b);
                    session.tape.dense(&h, &wt, &bt)
                }
            };
        }
        assert_eq!(h.shape(), &[bsz, self.config.num_classes]);
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamStore, Session};
    use crate::rng::RngStream;

    #[test]
    fn mlp_param_count_closed_form() {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::mlp(vec![4], vec![1, 1024], 4);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(0));
        assert_eq!(trunk.param_count(&store), 4 * 1024 + 4 + 4 * 4 + 4);
    }

    #[test]
    fn param_count_matches_serialized_sum_and_grows_with_width() {
        let mut c1 = 0;
        let mut c2 = 0;
        for (widths, out) in [(vec![2, 2], &mut c1), (vec![2, 3], &mut c2)] {
            let mut store = ParamStore::new();
            let cfg = TrunkConfig::mlp(widths, vec![1, 64], 4);
            let trunk = build_trunk(&cfg, &mut store, &RngStream::new(0));
            assert_eq!(trunk.param_count(&store), store.param_count());
            *out = trunk.param_count(&store);
        }
        assert!(c2 > c1, "wider MLP must have more parameters");
    }

    #[test]
    fn sinus_cnn_output_shape() {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::sinus_cnn(1024, 4);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(1));
        let x = Tensor::from_fn(&[3, 1, 1024], |i| (i as f64 * 0.01).sin());
        let mut s = Session::eval(&mut store);
        let y = trunk.forward(&mut s, &x);
        assert_eq!(y.shape(), &[3, 4]);
    }

    #[test]
    fn sprite_cnn_output_shape() {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::sprite_cnn(4);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(2));
        let x = Tensor::from_fn(&[2, 3, 32, 32], |i| (i as f64 * 0.001).cos());
        let mut s = Session::eval(&mut store);
        let y = trunk.forward(&mut s, &x);
        assert_eq!(y.shape(), &[2, 4]);
    }

    #[test]
    fn zero_final_dense_gives_zero_outputs() {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::mlp(vec![3], vec![1, 16], 4);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(3));
        // zero the output layer (last two params: weight and bias)
        let ids: Vec<_> = trunk.param_ids().to_vec();
        for id in &ids[ids.len() - 2..] {
            let n = store.data(*id).len();
            store.set_data(*id, vec![0.0; n]);
        }
        let x = Tensor::from_fn(&[2, 1, 16], |i| i as f64);
        let mut s = Session::eval(&mut store);
        let y = trunk.forward(&mut s, &x);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::sinus_cnn(64, 4);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(4));
        let x = Tensor::from_fn(&[2, 1, 64], |i| (i as f64 * 0.3).sin());
        let a = {
            let mut s = Session::eval(&mut store);
            trunk.forward(&mut s, &x)
        };
        let b = {
            let mut s = Session::eval(&mut store);
            trunk.forward(&mut s, &x)
        };
        assert_eq!(a.data(), b.data());
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn wrong_input_shape_panics() {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::sinus_cnn(64, 4);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(5));
        let x = Tensor::zeros(&[2, 1, 32]);
        let mut s = Session::eval(&mut store);
        let _ = trunk.forward(&mut s, &x);
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::sinus_cnn(32, 4);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(6));
        let before: Vec<Vec<f64>> = store
            .iter()
            .filter(|(_, e)| e.role == ParamRole::State)
            .map(|(_, e)| e.data.clone())
            .collect();
        let x = Tensor::from_fn(&[4, 1, 32], |i| (i as f64 * 0.7).sin() + 1.0);
        let mut s = Session::train(&mut store);
        let _ = trunk.forward(&mut s, &x);
        let after: Vec<Vec<f64>> = store
            .iter()
            .filter(|(_, e)| e.role == ParamRole::State)
            .map(|(_, e)| e.data.clone())
            .collect();
        assert_ne!(before, after);
    }
}
