use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::derive_seed;
use crate::kernels::Real;
use crate::model::TokenId;

/// One training sequence with `<M>` substitutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSequence {
    pub tokens: Vec<TokenId>,
    pub input: Vec<TokenId>,
    pub masked: Vec<bool>,
    /// Positions whose next-token prediction is trained, ascending.
    pub decode_set: Vec<usize>,
}

impl MaskedSequence {
    /// Builds the input and decode set from an explicit mask. Position 0
    /// may not be masked.
    pub fn from_mask(tokens: &[TokenId], masked: &[bool], mask_token_id: TokenId) -> Result<Self> {
        if tokens.len() < 2 || masked.len() != tokens.len() {
            return invalid("masking needs at least two tokens and one flag per token");
        }
        if masked[0] {
            return invalid("position 0 cannot be masked");
        }
        let input = tokens
            .iter()
            .zip(masked)
            .map(|(&t, &m)| if m { mask_token_id } else { t })
            .collect();
        let last = tokens.len() - 1;
        let decode_set = (0..last).filter(|&j| masked[j + 1] || masked[j]).collect();
        Ok(Self {
            tokens: tokens.to_vec(),
            input,
            masked: masked.to_vec(),
            decode_set,
        })
    }

    /// No position is trained, so the sequence contributes nothing.
    pub fn is_skipped(&self) -> bool {
        self.decode_set.is_empty()
    }

    /// Maximal masked runs as `start..end`.
    pub fn runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.masked.len() {
            if self.masked[i] {
                let start = i;
                while i < self.masked.len() && self.masked[i] {
                    i += 1;
                }
                out.push(start..i);
            } else {
                i += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskedBatch {
    pub sequences: Vec<MaskedSequence>,
}

impl MaskedBatch {
    /// Total size of every decode set.
    pub fn targets(&self) -> usize {
        self.sequences.iter().map(|s| s.decode_set.len()).sum()
    }
}

/// Masks each position after the first independently with probability
/// `mask_rate`.
pub fn mask_sequence(
    tokens: &[TokenId],
    mask_rate: Real,
    mask_token_id: TokenId,
    seed: u64,
) -> Result<MaskedSequence> {
    if !(0.0..1.0).contains(&mask_rate) {
        return invalid(format!("mask rate {mask_rate} is not in [0, 1)"));
    }
    if tokens.len() < 2 {
        return invalid("masking needs at least two tokens");
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let masked: Vec<bool> = (0..tokens.len())
        .map(|i| {
            let draw = rng.random::<Real>() < mask_rate;
            i > 0 && draw
        })
        .collect();
    MaskedSequence::from_mask(tokens, &masked, mask_token_id)
}

/// Masks every sequence with a seed derived from `seed` and its index.
pub fn sample_masks(
    sequences: &[Vec<TokenId>],
    mask_rate: Real,
    mask_token_id: TokenId,
    seed: u64,
) -> Result<MaskedBatch> {
    let sequences = sequences
        .iter()
        .enumerate()
        .map(|(i, s)| mask_sequence(s, mask_rate, mask_token_id, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(MaskedBatch { sequences })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_run_decode_set() {
        let mut m = vec![false; 6];
        m[2] = true;
        m[3] = true;
        let s = MaskedSequence::from_mask(&[1, 2, 3, 4, 5, 6], &m, 9).unwrap();
        assert_eq!(s.decode_set, vec![1, 2, 3]);
        assert_eq!(s.input, vec![1, 2, 9, 9, 5, 6]);
        assert_eq!(s.runs(), vec![2..4]);
    }

    #[test]
    fn trailing_mask_is_not_a_target() {
        let m = [false, false, true];
        let s = MaskedSequence::from_mask(&[1, 2, 3], &m, 9).unwrap();
        assert_eq!(s.decode_set, vec![1]);
    }

    #[test]
    fn zero_rate_skips() {
        let s = mask_sequence(&[1, 2, 3, 4], 0.0, 9, 1).unwrap();
        assert!(s.is_skipped());
        assert!(mask_sequence(&[1], 0.1, 9, 1).is_err());
        assert!(mask_sequence(&[1, 2], 1.0, 9, 1).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let toks: Vec<TokenId> = (0..40).collect();
        let a = sample_masks(&[toks.clone(), toks.clone()], 0.3, 99, 7).unwrap();
        assert_eq!(a, sample_masks(&[toks.clone(), toks], 0.3, 99, 7).unwrap());
        assert_ne!(a.sequences[0].masked, a.sequences[1].masked);
    }
}
