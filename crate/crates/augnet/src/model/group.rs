//! Exact group averaging over finite input permutations.
//!
//! When the transformation set is literally a finite group of input
//! permutations, averaging the trunk over the whole group is exactly
//! invariant — this module certifies that limit case and backs the
//! exact-invariance tests.

use super::params::{ParamStore, Session};
use crate::error::AugError;
use crate::tensor::Tensor;
use crate::trunk::Trunk;

/// A permutation of a single example's flattened elements:
/// `output[i] = input[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupElement {
    pub name: String,
    perm: Vec<usize>,
}

impl GroupElement {
    pub fn identity(len: usize, name: &str) -> GroupElement {
        GroupElement {
            name: name.to_string(),
            perm: (0..len).collect(),
        }
    }

    /// Mirror the width axis of a (C, H, W) example.
    pub fn hflip(shape: &[usize]) -> GroupElement {
        assert_eq!(shape.len(), 3, "hflip permutation wants (c, h, w)");
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut perm = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for r in 0..h {
                for cc in 0..w {
                    perm.push((ci * h + r) * w + (w - 1 - cc));
                }
            }
        }
        GroupElement {
            name: "hflip".to_string(),
            perm,
        }
    }

    /// Quarter turn of a square (C, H, W) example.
    pub fn rot90(shape: &[usize]) -> GroupElement {
        assert_eq!(shape.len(), 3, "rot90 permutation wants (c, h, w)");
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        assert_eq!(h, w, "rot90 needs square frames");
        let mut perm = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for r in 0..h {
                for cc in 0..w {
                    // out(r, cc) = in(h-1-cc, r)
                    perm.push((ci * h + (h - 1 - cc)) * w + r);
                }
            }
        }
        GroupElement {
            name: "rot90".to_string(),
            perm,
        }
    }

    /// The four-element rotation group {id, 90, 180, 270}.
    pub fn rotation_group(shape: &[usize]) -> Vec<GroupElement> {
        let len: usize = shape.iter().product();
        let q = GroupElement::rot90(shape);
        let r180 = q.compose(&q, "rot180");
        let r270 = r180.compose(&q, "rot270");
        vec![GroupElement::identity(len, "id"), q, r180, r270]
    }

    /// The two-element {identity, hflip} group.
    pub fn flip_group(shape: &[usize]) -> Vec<GroupElement> {
        let len: usize = shape.iter().product();
        vec![GroupElement::identity(len, "id"), GroupElement::hflip(shape)]
    }

    /// `self` after `other`: (self . other)(x) = self(other(x)).
    pub fn compose(&self, other: &GroupElement, name: &str) -> GroupElement {
        assert_eq!(self.perm.len(), other.perm.len());
        let perm = self.perm.iter().map(|&i| other.perm[i]).collect();
        GroupElement {
            name: name.to_string(),
            perm,
        }
    }

    /// Apply the permutation to every example of a batch `(B, ...)`.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let per = self.perm.len();
        assert_eq!(
            x.len() % per,
            0,
            "element length {per} does not divide input {}",
            x.len()
        );
        let b = x.len() / per;
        let xd = x.data();
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            let src = &xd[bi * per..(bi + 1) * per];
            for (o, &p) in out[bi * per..(bi + 1) * per].iter_mut().zip(&self.perm) {
                *o = src[p];
            }
        }
        Tensor::from_vec(x.shape(), out)
    }
}

/// Check closure under composition and existence of inverses by building
/// the composition table.
pub fn verify_group(elements: &[GroupElement]) -> Result<(), AugError> {
    if elements.is_empty() {
        return Err(AugError::NotAGroup {
            reason: "empty set".to_string(),
        });
    }
    let len = elements[0].perm.len();
    let identity: Vec<usize> = (0..len).collect();
    let find = |perm: &[usize]| elements.iter().position(|e| e.perm == perm);
    if find(&identity).is_none() {
        return Err(AugError::NotAGroup {
            reason: "identity element missing".to_string(),
        });
    }
    for g in elements {
        let mut has_inverse = false;
        for h in elements {
            let gh = g.compose(h, "");
            if find(&gh.perm).is_none() {
                return Err(AugError::NotAGroup {
                    reason: format!("composition {} . {} leaves the set", g.name, h.name),
                });
            }
            if gh.perm == identity {
                has_inverse = true;
            }
        }
        if !has_inverse {
            return Err(AugError::NotAGroup {
                reason: format!("{} has no inverse in the set", g.name),
            });
        }
    }
    Ok(())
}

/// `(1/|G|) sum_g trunk(g x)`: the exact orbit average of the trunk's
/// pre-softmax outputs. Verifies the group laws first.
pub fn group_average_exact(
    trunk: &Trunk,
    store: &mut ParamStore,
    elements: &[GroupElement],
    x: &Tensor,
) -> Result<Tensor, AugError> {
    verify_group(elements)?;
    let mut acc: Option<Vec<f64>> = None;
    let mut shape: Vec<usize> = Vec::new();
    for g in elements {
        let gx = g.apply(x);
        let mut session = Session::eval(store);
        let out = trunk.forward(&mut session, &gx);
        shape = out.shape().to_vec();
        match &mut acc {
            Some(a) => {
                for (av, v) in a.iter_mut().zip(out.data()) {
                    *av += v;
                }
            }
            None => acc = Some(out.to_vec()),
        }
    }
    let mut data = acc.expect("non-empty group");
    let scale = 1.0 / elements.len() as f64;
    for v in &mut data {
        *v *= scale;
    }
    Ok(Tensor::from_vec(&shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::trunk::{build_trunk, TrunkConfig};

    fn random_trunk(seed: u64) -> (Trunk, ParamStore) {
        let mut store = ParamStore::new();
        let cfg = TrunkConfig::mlp(vec![6], vec![2, 6, 6], 3);
        let trunk = build_trunk(&cfg, &mut store, &RngStream::new(seed));
        (trunk, store)
    }

    #[test]
    fn flip_group_average_is_exactly_invariant() {
        let (trunk, mut store) = random_trunk(11);
        let g = GroupElement::flip_group(&[2, 6, 6]);
        let mut rng = RngStream::new(5);
        let x = Tensor::from_fn(&[1, 2, 6, 6], |_| rng.normal());
        let fx = group_average_exact(&trunk, &mut store, &g, &x).unwrap();
        let xf = g[1].apply(&x);
        let ffx = group_average_exact(&trunk, &mut store, &g, &xf).unwrap();
        assert!(fx.max_abs_diff(&ffx) < 1e-12);
    }

    #[test]
    fn rotation_group_average_is_invariant_for_random_trunks() {
        for seed in 0..4 {
            let (trunk, mut store) = random_trunk(seed);
            let g = GroupElement::rotation_group(&[2, 6, 6]);
            verify_group(&g).unwrap();
            let mut rng = RngStream::new(100 + seed);
            let x = Tensor::from_fn(&[1, 2, 6, 6], |_| rng.normal());
            let fx = group_average_exact(&trunk, &mut store, &g, &x).unwrap();
            for elem in &g {
                let gx = elem.apply(&x);
                let fgx = group_average_exact(&trunk, &mut store, &g, &gx).unwrap();
                assert!(
                    fx.max_abs_diff(&fgx) < 1e-9,
                    "not invariant under {} (seed {seed})",
                    elem.name
                );
            }
        }
    }

    #[test]
    fn trivial_group_reduces_to_trunk() {
        let (trunk, mut store) = random_trunk(3);
        let g = vec![GroupElement::identity(2 * 6 * 6, "id")];
        let mut rng = RngStream::new(9);
        let x = Tensor::from_fn(&[2, 2, 6, 6], |_| rng.normal());
        let avg = group_average_exact(&trunk, &mut store, &g, &x).unwrap();
        let mut session = Session::eval(&mut store);
        let direct = trunk.forward(&mut session, &x);
        assert!(avg.max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn non_closed_set_is_rejected() {
        let shape = [1, 4, 4];
        let len = 16;
        let set = vec![
            GroupElement::identity(len, "id"),
            GroupElement::rot90(&shape),
        ];
        let err = verify_group(&set).unwrap_err();
        assert!(matches!(err, AugError::NotAGroup { .. }));
    }

    #[test]
    fn rot90_composes_to_identity_in_four() {
        let shape = [1, 5, 5];
        let q = GroupElement::rot90(&shape);
        let r = q.compose(&q, "").compose(&q, "").compose(&q, "");
        assert_eq!(r.perm, GroupElement::identity(25, "id").perm);
    }
}
