use rand::Rng;

use super::tree::DraftTree;
use crate::error::{invalid, Result};
use crate::kernels::{argmax, Real};
use crate::model::TokenId;

/// Result of greedy tree verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyOutcome {
    /// Accepted tree nodes, root first.
    pub path: Vec<usize>,
    /// Accepted tokens followed by the bonus token.
    pub tokens: Vec<TokenId>,
    pub bonus: TokenId,
}

impl GreedyOutcome {
    pub fn accepted(&self) -> usize {
        self.path.len()
    }
}

/// Walks the tree following the target argmax. `context_logits` predicts
/// the depth-1 token; `node_logits[i]` predicts the token after node `i`.
pub fn verify_greedy(
    tree: &DraftTree,
    context_logits: &[Real],
    node_logits: &[Vec<Real>],
) -> Result<GreedyOutcome> {
    if node_logits.len() != tree.len() {
        return invalid(format!(
            "{} logit rows for {} tree nodes",
            node_logits.len(),
            tree.len()
        ));
    }
    let mut path = Vec::new();
    let mut tokens = Vec::new();
    let mut at: Option<usize> = None;
    loop {
        let logits = at.map_or(context_logits, |i| node_logits[i].as_slice());
        let target = argmax(logits);
        match tree.child_with_token(at, target) {
            Some(child) => {
                path.push(child);
                tokens.push(target);
                at = Some(child);
            }
            None => {
                tokens.push(target);
                return Ok(GreedyOutcome {
                    path,
                    tokens,
                    bonus: target,
                });
            }
        }
    }
}

/// `min(1, p(t)/q(t))`.
pub fn acceptance_probability(p: &[Real], q: &[Real], token: TokenId) -> Real {
    if q[token] <= 0.0 {
        return 1.0;
    }
    (p[token] / q[token]).min(1.0)
}

/// `normalize(max(0, p − q))`, or `None` when that is identically zero.
pub fn residual_distribution(p: &[Real], q: &[Real]) -> Option<Vec<Real>> {
    let diff: Vec<Real> = p.iter().zip(q).map(|(a, b)| (a - b).max(0.0)).collect();
    let total: Real = diff.iter().sum();
    (total > 0.0).then(|| diff.into_iter().map(|x| x / total).collect())
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(dist: &[Real], rng: &mut R) -> TokenId {
    let u: Real = rng.random::<Real>() * dist.iter().sum::<Real>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingOutcome {
    /// Number of draft tokens accepted.
    pub accepted: usize,
    /// Token emitted after the accepted prefix: a residual draw on
    /// rejection, a draw from the last target distribution otherwise.
    pub next: TokenId,
    /// The residual was identically zero and `next` came from `p`.
    pub fallback: bool,
}

/// Speculative sampling over a single draft chain.
///
/// `q[j]` is the draft distribution `draft[j]` was drawn from and `p[j]`
/// the target distribution at the same position given the draft prefix;
/// `p` carries one extra entry for the token after a fully accepted chain.
pub fn verify_sampling<R: Rng + ?Sized>(
    draft: &[TokenId],
    q: &[Vec<Real>],
    p: &[Vec<Real>],
    rng: &mut R,
) -> Result<SamplingOutcome> {
    if q.len() != draft.len() || p.len() != draft.len() + 1 {
        return invalid("verify_sampling needs |q| = |draft| and |p| = |draft| + 1");
    }
    for (j, &t) in draft.iter().enumerate() {
        let accept = acceptance_probability(&p[j], &q[j], t);
        if rng.random::<Real>() < accept {
            continue;
        }
        return Ok(match residual_distribution(&p[j], &q[j]) {
            Some(r) => SamplingOutcome {
                accepted: j,
                next: sample_categorical(&r, rng),
                fallback: false,
            },
            None => {
                log::warn!("residual distribution vanished at depth {}; sampling from p", j + 1);
                SamplingOutcome {
                    accepted: j,
                    next: sample_categorical(&p[j], rng),
                    fallback: true,
                }
            }
        });
    }
    Ok(SamplingOutcome {
        accepted: draft.len(),
        next: sample_categorical(&p[draft.len()], rng),
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specdec::tree::{build_tree, BranchSpec};
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn one_hot(n: usize, i: usize) -> Vec<Real> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn matched_prefix_then_bonus() {
        let tree = build_tree(&[one_hot(10, 5), one_hot(10, 9)], &BranchSpec::chain(2)).unwrap();
        let out = verify_greedy(&tree, &one_hot(10, 5), &[one_hot(10, 7), one_hot(10, 1)]).unwrap();
        assert_eq!(out.path, vec![0]);
        assert_eq!(out.tokens, vec![5, 7]);
        assert_eq!(out.bonus, 7);
    }

    #[test]
    fn full_acceptance_emits_gamma_plus_one() {
        let tree = build_tree(&[one_hot(6, 2), one_hot(6, 3)], &BranchSpec::chain(2)).unwrap();
        let out = verify_greedy(&tree, &one_hot(6, 2), &[one_hot(6, 3), one_hot(6, 4)]).unwrap();
        assert_eq!(out.tokens, vec![2, 3, 4]);
        assert_eq!(out.accepted(), 2);
    }

    #[test]
    fn zero_acceptance() {
        let tree = build_tree(&[one_hot(6, 2)], &BranchSpec::chain(1)).unwrap();
        let out = verify_greedy(&tree, &one_hot(6, 1), &[one_hot(6, 4)]).unwrap();
        assert!(out.path.is_empty());
        assert_eq!(out.tokens, vec![1]);
    }

    #[test]
    fn branch_selection_follows_target() {
        let spec = BranchSpec {
            branching: vec![2, 1],
            max_nodes: 8,
        };
        let d1 = vec![0.5, 0.3, 0.2];
        let d2 = vec![0.1, 0.1, 0.8];
        let tree = build_tree(&[d1, d2], &spec).unwrap();
        // roots: 0 (node 0), 1 (node 1); leaves token 2 under each
        let ctx = one_hot(3, 1);
        let logits: Vec<Vec<Real>> = tree
            .nodes
            .iter()
            .map(|n| if n.depth == 1 { one_hot(3, 2) } else { one_hot(3, 0) })
            .collect();
        let out = verify_greedy(&tree, &ctx, &logits).unwrap();
        assert_eq!(out.tokens, vec![1, 2, 0]);
        assert_eq!(tree.nodes[out.path[0]].token, 1);
    }

    #[test]
    fn identical_distributions_always_accept() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let d = vec![0.2, 0.5, 0.3];
        for _ in 0..1000 {
            let t = sample_categorical(&d, &mut rng);
            let out = verify_sampling(&[t, t], &[d.clone(), d.clone()], &[d.clone(), d.clone(), d.clone()], &mut rng)
                .unwrap();
            assert_eq!(out.accepted, 2);
        }
    }

    #[test]
    fn residual_example() {
        let p = [0.5, 0.5, 0.0];
        let q = [1.0, 0.0, 0.0];
        assert_eq!(acceptance_probability(&p, &q, 0), 0.5);
        assert_eq!(residual_distribution(&p, &q).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(residual_distribution(&p, &p).is_none());
    }

    #[test]
    fn categorical_skips_zero_mass() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
