use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::Real;
use crate::model::TokenId;

/// Most successors any token pair may have.
pub const MAX_SUCCESSORS: usize = 4;

/// Order-2 Markov source over every token except `<M>`. Each ordered pair
/// of tokens has between two and [`MAX_SUCCESSORS`] possible successors, so
/// the chain can never lock into a deterministic cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub vocab_size: usize,
    pub mask_token_id: TokenId,
    pub seed: u64,
    /// Indexed by `a · vocab_size + b`; empty for pairs involving `<M>`.
    pub transitions: Vec<Vec<(TokenId, Real)>>,
}

impl SynthCorpus {
    pub fn new(vocab_size: usize, mask_token_id: TokenId, seed: u64) -> Result<Self> {
        if vocab_size < 3 || mask_token_id >= vocab_size {
            return invalid("corpus needs at least two ordinary tokens and an in-range mask id");
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let ordinary: Vec<TokenId> = (0..vocab_size).filter(|&t| t != mask_token_id).collect();
        let mut transitions = vec![Vec::new(); vocab_size * vocab_size];
        for &a in &ordinary {
            for &b in &ordinary {
                let k = rng.random_range(2..=MAX_SUCCESSORS.min(ordinary.len()));
                let mut picks: Vec<TokenId> = Vec::with_capacity(k);
                while picks.len() < k {
                    let t = ordinary[rng.random_range(0..ordinary.len())];
                    if !picks.contains(&t) {
                        picks.push(t);
                    }
                }
                let raw: Vec<Real> = (0..k).map(|_| rng.random::<Real>() + 0.1).collect();
                let total: Real = raw.iter().sum();
                transitions[a * vocab_size + b] =
                    picks.into_iter().zip(raw.into_iter().map(|w| w / total)).collect();
            }
        }
        Ok(Self {
            vocab_size,
            mask_token_id,
            seed,
            transitions,
        })
    }

    pub fn successors(&self, a: TokenId, b: TokenId) -> &[(TokenId, Real)] {
        &self.transitions[a * self.vocab_size + b]
    }

    /// `n` tokens starting from a uniformly drawn pair.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<TokenId> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let ordinary: Vec<TokenId> = (0..self.vocab_size)
            .filter(|&t| t != self.mask_token_id)
            .collect();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n.min(2) {
            out.push(ordinary[rng.random_range(0..ordinary.len())]);
        }
        while out.len() < n {
            let succ = self.successors(out[out.len() - 2], out[out.len() - 1]);
            let u: Real = rng.random();
            let mut acc = 0.0;
            let mut next = succ[succ.len() - 1].0;
            for &(t, p) in succ {
                acc += p;
                if u < acc {
                    next = t;
                    break;
                }
            }
            out.push(next);
        }
        out
    }
}

/// Token stream of length `n_tokens` from the corpus seeded with `seed`.
pub fn gen_corpus(
    vocab_size: usize,
    mask_token_id: TokenId,
    seed: u64,
    n_tokens: usize,
) -> Result<Vec<TokenId>> {
    Ok(SynthCorpus::new(vocab_size, mask_token_id, seed)?.sample(n_tokens, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions() {
        let c = SynthCorpus::new(12, 11, 5).unwrap();
        for (i, row) in c.transitions.iter().enumerate() {
            let (a, b) = (i / 12, i % 12);
            if a == 11 || b == 11 {
                assert!(row.is_empty());
                continue;
            }
            assert!((2..=MAX_SUCCESSORS).contains(&row.len()));
            assert!((row.iter().map(|x| x.1).sum::<Real>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&(t, _)| t != 11));
        }
    }

    #[test]
    fn deterministic_and_excludes_mask() {
        let a = gen_corpus(16, 15, 3, 2000).unwrap();
        assert_eq!(a, gen_corpus(16, 15, 3, 2000).unwrap());
        assert_ne!(a, gen_corpus(16, 15, 4, 2000).unwrap());
        assert!(a.iter().all(|&t| t < 15));
        assert!(SynthCorpus::new(2, 1, 0).is_err());
    }
}
