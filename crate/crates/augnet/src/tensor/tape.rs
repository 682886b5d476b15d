//! The gradient tape: an append-only record of operations replayed in
//! reverse to accumulate total derivatives.

use super::Tensor;
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Reference to a node on a specific tape. The tape id guards against
/// mixing tensors recorded on different tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

/// Gradient contributions produced by one node's backward rule:
/// `(parent_slot, contribution)` pairs. The slot indexes into the node's
/// parent list, so an op may skip parents that need no gradient.
pub(crate) type Contributions = Vec<(usize, Vec<f64>)>;
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Contributions>;

pub(crate) struct Node {
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    len: usize,
    label: &'static str,
}

/// Append-only operation record for reverse-mode differentiation.
///
/// Single-threaded by design: one tape per forward/backward pass. Distinct
/// tapes are independent and may live on different threads.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register `value` as a differentiable leaf on this tape.
    pub fn leaf(&mut self, value: Tensor) -> Tensor {
        let len = value.len();
        let index = self.push(Node {
            parents: Vec::new(),
            backward: None,
            len,
            label: "leaf",
        });
        value.with_node(NodeRef {
            tape: self.id,
            index,
        })
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Node index of a tracked tensor, checking tape identity.
    pub(crate) fn index_of(&self, t: &Tensor) -> Option<usize> {
        t.node().map(|r| {
            assert_eq!(
                r.tape, self.id,
                "tensor was recorded on a different tape (op mixes tapes)"
            );
            r.index
        })
    }

    /// Record an op producing `out` from tracked `parent_indices`.
    /// Returns `out` tagged with the new node when any parent is tracked,
    /// or unchanged (a constant) when none are.
    pub(crate) fn record(
        &mut self,
        label: &'static str,
        parents: Vec<usize>,
        out: Tensor,
        backward: BackwardFn,
    ) -> Tensor {
        if parents.is_empty() {
            return out;
        }
        let len = out.len();
        let index = self.push(Node {
            parents,
            backward: Some(backward),
            len,
            label,
        });
        out.with_node(NodeRef {
            tape: self.id,
            index,
        })
    }

    /// Reverse pass from a scalar loss. Every tracked leaf reachable from
    /// `loss` receives its total derivative; gradients from multiple
    /// consumers accumulate additively. Interior gradients are freed as soon
    /// as their node has been processed, so only leaf gradients survive.
    ///
    /// Panics if `loss` is not a tracked scalar on this tape, or if the tape
    /// was already consumed by a previous backward call.
    pub fn backward(&mut self, loss: &Tensor) -> Gradients {
        assert!(
            !self.consumed,
            "backward called twice on the same tape without reset"
        );
        self.consumed = true;
        assert!(loss.is_scalar(), "backward seed must be a scalar tensor");
        let seed = self
            .index_of(loss)
            .expect("backward seed is not recorded on this tape");

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[seed] = Some(vec![1.0]);

        let mut visited = 0usize;
        for i in (0..=seed).rev() {
            let is_leaf = self.nodes[i].backward.is_none();
            if is_leaf {
                continue;
            }
            // Interior node: take its gradient (freeing it) and scatter.
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            let node = &self.nodes[i];
            let contribs = (node.backward.as_ref().unwrap())(&g);
            for (slot, c) in contribs {
                let p = node.parents[slot];
                debug_assert!(p < i, "tape order violated by {}", node.label);
                let plen = self.nodes[p].len;
                assert_eq!(
                    c.len(),
                    plen,
                    "backward of {} produced gradient of wrong length",
                    node.label
                );
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(c.iter()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
        }

        Gradients {
            tape: self.id,
            grads,
            visited,
        }
    }
}

/// Result of a backward pass: per-leaf gradient buffers.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    visited: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to a tracked tensor, if any part of
    /// the loss depended on it. Interior (non-leaf) gradients are dropped
    /// during the pass and unavailable here.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let r = t.node()?;
        assert_eq!(r.tape, self.tape, "gradient query against a foreign tape");
        self.grads[r.index].as_deref()
    }

    /// Gradient of a tracked tensor, defaulting to zeros when the loss did
    /// not depend on it.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        match self.get(t) {
            Some(g) => g.to_vec(),
            None => vec![0.0; t.len()],
        }
    }

    /// Number of interior nodes whose backward rule ran (each exactly once).
    pub fn visited_nodes(&self) -> usize {
        self.visited
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    #[test]
    fn backward_on_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1., 2., 3.]));
        let s = tape.sum(&x);
        let g = tape.backward(&s);
        assert_eq!(g.get(&x).unwrap(), &[1., 1., 1.]);
    }

    #[test]
    fn squared_norm_gradient() {
        // loss = |x|^2 at x = [3, 4]  =>  grad [6, 8]
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![3., 4.]));
        let sq = tape.mul(&x, &x);
        let s = tape.sum(&sq);
        assert_eq!(s.item(), 25.0);
        let g = tape.backward(&s);
        assert_eq!(g.get(&x).unwrap(), &[6., 8.]);
    }

    #[test]
    fn gradients_accumulate_across_consumers() {
        // f = sum(x) + sum(x*x); df/dx = 1 + 2x, accumulated exactly
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![0.5, -2.0]));
        let a = tape.sum(&x);
        let xx = tape.mul(&x, &x);
        let b = tape.sum(&xx);
        let f = tape.add(&a, &b);
        let g = tape.backward(&f);
        assert_eq!(g.get(&x).unwrap(), &[1.0 + 1.0, 1.0 - 4.0]);
    }

    #[test]
    #[should_panic(expected = "scalar")]
    fn non_scalar_seed_panics() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1., 2.]));
        let y = tape.mul(&x, &x);
        let _ = tape.backward(&y);
    }

    #[test]
    #[should_panic(expected = "twice")]
    fn repeated_backward_panics() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(&x, &x);
        let _ = tape.backward(&y);
        let _ = tape.backward(&y);
    }

    #[test]
    fn untracked_tensors_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let c = Tensor::scalar(5.0); // constant
        let y = tape.mul(&x, &c);
        let g = tape.backward(&y);
        assert_eq!(g.get(&x).unwrap(), &[5.0]);
        assert!(g.get(&c).is_none());
    }

    #[test]
    fn each_interior_node_visited_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[4], vec![1., 2., 3., 4.]));
        let a = tape.mul(&x, &x); // node
        let b = tape.add(&a, &x); // node, diamond on x
        let s = tape.sum(&b); // node
        let g = tape.backward(&s);
        assert_eq!(g.visited_nodes(), 3);
        assert_eq!(g.get(&x).unwrap(), &[3., 5., 7., 9.]);
    }
}
