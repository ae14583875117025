use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::telemetry::{AcceptanceRecord, IterationRecord};
use super::tree::{build_tree, BranchSpec};
use super::verify::{sample_categorical, verify_greedy, verify_sampling};
use crate::error::{invalid, Result};
use crate::kernels::{argmax, softmax, Real};
use crate::model::{KvCache, Model, SkipSpec, TokenId, TreeLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopCondition {
    pub max_new_tokens: usize,
    #[serde(default)]
    pub end_token: Option<TokenId>,
}

impl StopCondition {
    pub fn max_tokens(n: usize) -> Self {
        Self {
            max_new_tokens: n,
            end_token: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStatus {
    MaxTokens,
    EndToken,
    /// Prompt plus output reached the model's context window.
    ContextFull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub skip: SkipSpec,
    pub gamma: usize,
    pub branch: BranchSpec,
    pub mode: DecodeMode,
    pub stop: StopCondition,
    pub seed: u64,
}

impl DecodeOptions {
    /// Greedy single-chain decoding.
    pub fn greedy_chain(skip: SkipSpec, gamma: usize, max_new_tokens: usize) -> Self {
        Self {
            skip,
            gamma,
            branch: BranchSpec::chain(gamma),
            mode: DecodeMode::Greedy,
            stop: StopCondition::max_tokens(max_new_tokens),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutput {
    /// Generated tokens, prompt excluded.
    pub tokens: Vec<TokenId>,
    pub status: DecodeStatus,
    pub record: AcceptanceRecord,
}

/// Tracks output length against the stop condition and the context window.
struct Stopper {
    stop: StopCondition,
    max_total: usize,
    prompt_len: usize,
    out: Vec<TokenId>,
}

impl Stopper {
    fn new(stop: StopCondition, max_total: usize, prompt_len: usize) -> Self {
        Self {
            stop,
            max_total,
            prompt_len,
            out: Vec::new(),
        }
    }

    fn total(&self) -> usize {
        self.prompt_len + self.out.len()
    }

    /// Status before any token is generated.
    fn initial(&self) -> Option<DecodeStatus> {
        if self.stop.max_new_tokens == 0 {
            Some(DecodeStatus::MaxTokens)
        } else if self.total() >= self.max_total {
            Some(DecodeStatus::ContextFull)
        } else {
            None
        }
    }

    fn push(&mut self, token: TokenId) -> Option<DecodeStatus> {
        self.out.push(token);
        if self.stop.end_token == Some(token) {
            Some(DecodeStatus::EndToken)
        } else if self.out.len() >= self.stop.max_new_tokens {
            Some(DecodeStatus::MaxTokens)
        } else if self.total() >= self.max_total {
            Some(DecodeStatus::ContextFull)
        } else {
            None
        }
    }
}

fn check_prompt(model: &Model, prompt: &[TokenId]) -> Result<()> {
    let cfg = model.config();
    if prompt.is_empty() {
        return invalid("prompt must contain at least one token");
    }
    if prompt.len() > cfg.max_seq_len {
        return invalid(format!(
            "prompt of {} tokens exceeds max_seq_len {}",
            prompt.len(),
            cfg.max_seq_len
        ));
    }
    if let Some(t) = prompt.iter().find(|&&t| t >= cfg.vocab_size) {
        return invalid(format!("prompt token {t} is outside the vocabulary"));
    }
    Ok(())
}

/// Plain one-token-at-a-time decoding with the full model.
pub fn baseline_decode(
    model: &Model,
    prompt: &[TokenId],
    mode: DecodeMode,
    stop: StopCondition,
    seed: u64,
) -> Result<(Vec<TokenId>, DecodeStatus)> {
    check_prompt(model, prompt)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut stopper = Stopper::new(stop, model.config().max_seq_len, prompt.len());
    if let Some(status) = stopper.initial() {
        return Ok((stopper.out, status));
    }
    let mut cache = model.new_cache();
    let mut logits = model
        .forward_full(&mut cache, prompt)?
        .pop()
        .expect("prompt is non-empty");
    loop {
        let token = match mode {
            DecodeMode::Greedy => argmax(&logits),
            DecodeMode::Sampling => sample_categorical(&softmax(&logits)?, &mut rng),
        };
        if let Some(status) = stopper.push(token) {
            return Ok((stopper.out, status));
        }
        logits = model
            .forward_full(&mut cache, &[token])?
            .pop()
            .expect("one row");
    }
}

/// Draft-then-verify decoding.
///
/// The newest token is held back from the cache. Each iteration drafts from
/// it with the skipped model, builds the candidate tree, and verifies the
/// tree rooted at that token with one full pass. The accepted nodes are
/// committed and the verifier's own next token becomes the new held-back
/// token, so every iteration emits between 1 and `gamma + 1` tokens.
pub fn decode(model: &Model, prompt: &[TokenId], opts: &DecodeOptions) -> Result<DecodeOutput> {
    check_prompt(model, prompt)?;
    let cfg = model.config();
    opts.skip.validate(cfg.n_layers)?;
    if opts.gamma == 0 {
        return invalid("gamma must be at least 1");
    }
    let branch = opts.branch.for_depth(opts.gamma);
    branch.validate()?;
    if opts.mode == DecodeMode::Sampling && !branch.is_chain() {
        return invalid("sampling mode requires a single-chain branch spec");
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    let mut record = AcceptanceRecord::default();
    let mut stopper = Stopper::new(opts.stop, cfg.max_seq_len, prompt.len());
    if let Some(status) = stopper.initial() {
        return Ok(DecodeOutput {
            tokens: stopper.out,
            status,
            record,
        });
    }

    let mut cache = model.new_cache();
    model.forward_full(&mut cache, &prompt[..prompt.len() - 1])?;
    let mut pending = *prompt.last().expect("prompt is non-empty");

    for iter in 0.. {
        // the tree's deepest node sits at committed + gamma
        let gamma = opts.gamma.min(cfg.max_seq_len - stopper.total());
        let spec = branch.for_depth(gamma);
        let t0 = Instant::now();
        let dists = model.forward_draft(opts.skip, &mut cache, pending, gamma)?;
        cache.rollback();
        let draft_ns = t0.elapsed().as_nanos() as u64;

        let t1 = Instant::now();
        let (accepted, emitted) = match opts.mode {
            DecodeMode::Greedy => verify_tree_greedy(model, &mut cache, pending, &dists, &spec)?,
            DecodeMode::Sampling => {
                verify_chain_sampling(model, &mut cache, pending, &dists, &mut rng)?
            }
        };
        let verify_ns = t1.elapsed().as_nanos() as u64;

        let bonus = *emitted.last().expect("at least one token per iteration");
        pending = bonus;
        let mut status = None;
        let mut kept = 0;
        for &t in &emitted {
            kept += 1;
            status = stopper.push(t);
            if status.is_some() {
                break;
            }
        }
        record.push(IterationRecord {
            iter,
            drafted: gamma,
            accepted,
            bonus,
            emitted: kept,
            draft_ns,
            verify_ns,
        });
        if let Some(status) = status {
            return Ok(DecodeOutput {
                tokens: stopper.out,
                status,
                record,
            });
        }
    }
    unreachable!("the stop condition always fires before usize overflow")
}

/// Returns (accepted drafts, emitted tokens ending in the bonus) and leaves
/// the accepted nodes committed.
fn verify_tree_greedy(
    model: &Model,
    cache: &mut KvCache,
    pending: TokenId,
    dists: &[Vec<Real>],
    spec: &BranchSpec,
) -> Result<(usize, Vec<TokenId>)> {
    let tree = build_tree(dists, spec)?;
    let layout = tree.layout().under_root(pending);
    let logits = model.forward_tree(cache, &layout)?;
    let out = verify_greedy(&tree, &logits[0], &logits[1..])?;
    commit(cache, &out.path)?;
    Ok((out.accepted(), out.tokens))
}

fn verify_chain_sampling<R: Rng + ?Sized>(
    model: &Model,
    cache: &mut KvCache,
    pending: TokenId,
    dists: &[Vec<Real>],
    rng: &mut R,
) -> Result<(usize, Vec<TokenId>)> {
    let draft: Vec<TokenId> = dists.iter().map(|q| sample_categorical(q, rng)).collect();
    let mut chain = vec![pending];
    chain.extend_from_slice(&draft);
    let logits = model.forward_tree(cache, &TreeLayout::chain(&chain))?;
    let p = logits.iter().map(|l| softmax(l)).collect::<Result<Vec<_>>>()?;
    let out = verify_sampling(&draft, dists, &p, rng)?;
    let path: Vec<usize> = (0..out.accepted).collect();
    commit(cache, &path)?;
    let mut emitted = draft[..out.accepted].to_vec();
    emitted.push(out.next);
    Ok((out.accepted, emitted))
}

/// Commits the root (the held-back token) plus the accepted nodes, whose
/// indices are shifted by one under the root.
fn commit(cache: &mut KvCache, path: &[usize]) -> Result<()> {
    let full: Vec<usize> = std::iter::once(0).chain(path.iter().map(|&i| i + 1)).collect();
    cache.commit_path(&full)
}
