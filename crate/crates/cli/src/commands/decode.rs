use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use s3d::exec::derive_seed;
use s3d::model::{Model, TokenId};
use s3d::specdec::{baseline_decode, decode, DecodeMode, DecodeStatus};
use serde::Serialize;

use crate::args::DecodeArgs;
use crate::config::resolve;
use crate::error::{usage, CliError, Result};
use crate::io::{create, print_json};

#[derive(Serialize)]
struct Generated {
    tokens: Vec<TokenId>,
    status: DecodeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_tokens_per_iteration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance: Option<Vec<Option<f64>>>,
}

#[derive(Serialize)]
struct LosslessReport {
    episodes: usize,
    mismatches: usize,
    mismatching_episodes: Vec<usize>,
}

/// Seeded random prompt of 1 to 8 non-mask tokens.
fn episode_prompt(model: &Model, seed: u64, episode: usize) -> Vec<TokenId> {
    let cfg = model.config();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, episode as u64));
    let len = rng.random_range(1..=8usize.min(cfg.max_seq_len));
    (0..len)
        .map(|_| {
            let t = rng.random_range(0..cfg.vocab_size - 1);
            if t >= cfg.mask_token_id {
                t + 1
            } else {
                t
            }
        })
        .collect()
}

pub fn run(a: DecodeArgs) -> Result<()> {
    let r = resolve(&a.run)?;
    let prompt: Option<Vec<TokenId>> = match &a.prompt {
        Some(p) => Some(
            serde_json::from_str(p)
                .map_err(|e| CliError::Usage(format!("--prompt must be a JSON array of token ids: {e}")))?,
        ),
        None => r.file.prompt.clone(),
    };
    let (model, opts) = (&r.model, &r.opts);

    if a.verify_lossless {
        if opts.mode != DecodeMode::Greedy {
            return usage("--verify-lossless compares greedy outputs; use --mode greedy");
        }
        let prompts: Vec<Vec<TokenId>> = match (a.episodes, prompt) {
            (Some(n), _) => (0..n).map(|i| episode_prompt(model, opts.seed, i)).collect(),
            (None, Some(p)) => vec![p],
            (None, None) => return usage("--verify-lossless needs --prompt or --episodes"),
        };
        let mut bad = Vec::new();
        for (i, p) in prompts.iter().enumerate() {
            let spec = decode(model, p, opts)?;
            let (base, _) = baseline_decode(model, p, DecodeMode::Greedy, opts.stop, opts.seed)?;
            if spec.tokens != base {
                bad.push(i);
            }
        }
        print_json(&LosslessReport {
            episodes: prompts.len(),
            mismatches: bad.len(),
            mismatching_episodes: bad.clone(),
        })?;
        if !bad.is_empty() {
            return Err(CliError::Mismatch(format!(
                "speculative output differs from plain decoding in {} of {} episodes",
                bad.len(),
                prompts.len()
            )));
        }
        return Ok(());
    }

    let Some(prompt) = prompt else {
        return usage("no prompt given (use --prompt or the config's \"prompt\")");
    };
    if a.baseline {
        let (tokens, status) = baseline_decode(model, &prompt, opts.mode, opts.stop, opts.seed)?;
        return print_json(&Generated {
            tokens,
            status,
            iterations: None,
            mean_tokens_per_iteration: None,
            acceptance: None,
        });
    }
    let out = decode(model, &prompt, opts)?;
    if let Some(path) = a.telemetry.as_ref().or(r.file.telemetry.as_ref()) {
        out.record.write_jsonl(create(path)?)?;
    }
    print_json(&Generated {
        iterations: Some(out.record.iterations.len()),
        mean_tokens_per_iteration: out.record.mean_tokens_per_iteration(),
        acceptance: Some(out.record.rates()),
        tokens: out.tokens,
        status: out.status,
    })
}
