use serde::{Deserialize, Serialize};

use super::telemetry::{merge_counts, tally, DepthCount};
use super::tree::{build_tree, BranchSpec};
use super::verify::verify_greedy;
use crate::error::{invalid, Result};
use crate::exec::{map_indexed, Exec};
use crate::kernels::Real;
use crate::model::{Model, SkipSpec, TokenId};

/// Per-depth conditional acceptance of single-chain drafts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceMeasurement {
    pub skip: SkipSpec,
    pub beta: Real,
    pub gamma: usize,
    pub episodes: usize,
    pub counts: Vec<DepthCount>,
    /// `None` where no episode reached the depth.
    pub rates: Vec<Option<Real>>,
    /// Mean of accepted drafts plus one.
    pub mean_tokens: Real,
}

/// Start offsets of `trials` windows of `context_len` tokens spread evenly
/// over every window the corpus contains.
fn windows(corpus: &[Vec<TokenId>], context_len: usize, trials: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..(seq.len() + 1).saturating_sub(context_len)).map(move |o| (s, o)))
        .collect();
    if all.is_empty() {
        return all;
    }
    (0..trials)
        .map(|i| all[(i as u128 * all.len() as u128 / trials as u128) as usize])
        .collect()
}

/// One draft/verify episode per corpus window: the window is the context,
/// a `gamma`-deep chain is drafted from it, and depth `k` counts as
/// accepted when every depth up to `k` matched the target argmax.
pub fn measure_acceptance(
    model: &Model,
    skip: SkipSpec,
    corpus: &[Vec<TokenId>],
    gamma: usize,
    trials: usize,
    context_len: usize,
    exec: Exec,
) -> Result<AcceptanceMeasurement> {
    let cfg = model.config();
    skip.validate(cfg.n_layers)?;
    if gamma == 0 || trials == 0 || context_len == 0 {
        return invalid("gamma, trials and context length must all be positive");
    }
    if context_len + gamma > cfg.max_seq_len {
        return invalid("context plus draft depth exceeds max_seq_len");
    }
    let starts = windows(corpus, context_len, trials);
    if starts.is_empty() {
        return invalid(format!("no corpus sequence holds {context_len} tokens"));
    }
    let spec = BranchSpec::chain(gamma);
    let accepted: Vec<Result<usize>> = map_indexed(starts.len(), exec, |i| {
        let (s, o) = starts[i];
        let ctx = &corpus[s][o..o + context_len];
        let mut cache = model.new_cache();
        model.forward_full(&mut cache, &ctx[..context_len - 1])?;
        let last = ctx[context_len - 1];
        let dists = model.forward_draft(skip, &mut cache, last, gamma)?;
        cache.rollback();
        let tree = build_tree(&dists, &spec)?;
        let logits = model.forward_tree(&mut cache, &tree.layout().under_root(last))?;
        Ok(verify_greedy(&tree, &logits[0], &logits[1..])?.accepted())
    });
    let mut counts = Vec::new();
    let mut total = 0usize;
    for a in accepted {
        let a = a?;
        let mut one = Vec::new();
        tally(&mut one, gamma, a);
        merge_counts(&mut counts, &one);
        total += a + 1;
    }
    Ok(AcceptanceMeasurement {
        skip,
        beta: skip.beta(cfg),
        gamma,
        episodes: starts.len(),
        rates: counts.iter().map(DepthCount::rate).collect(),
        counts,
        mean_tokens: total as Real / starts.len() as Real,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn windows_spread_evenly() {
        let corpus = vec![vec![0; 5], vec![0; 2], vec![0; 4]];
        // windows of 3: seq 0 at 0,1,2; seq 2 at 0,1
        let w = windows(&corpus, 3, 5);
        assert_eq!(w, vec![(0, 0), (0, 1), (0, 2), (2, 0), (2, 1)]);
        assert_eq!(windows(&corpus, 3, 2), vec![(0, 0), (0, 2)]);
        assert!(windows(&corpus, 6, 2).is_empty());
    }

    #[test]
    fn empty_skip_accepts_the_first_depth() {
        let cfg = ModelConfig::tiny(16, 2, 16);
        let model = Model::init(cfg, 4).unwrap();
        let corpus = vec![(0..40).map(|i| (i * 7) % 15).collect::<Vec<_>>()];
        let m = measure_acceptance(&model, SkipSpec::EMPTY, &corpus, 3, 12, 6, Exec::Sequential)
            .unwrap();
        assert_eq!(m.counts[0], DepthCount { attempted: 12, accepted: 12 });
        let par = measure_acceptance(&model, SkipSpec::EMPTY, &corpus, 3, 12, 6, Exec::Parallel)
            .unwrap();
        assert_eq!(m, par);
    }
}
