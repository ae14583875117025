use std::time::{Instant, SystemTime, UNIX_EPOCH};

use s3d::exec::{map_indexed, Exec};
use s3d::model::{SkipSpec, TokenId};
use s3d::perf::memory_normalized_speed;
use s3d::specdec::{baseline_decode, decode, AcceptanceRecord, DepthSummary};
use serde::Serialize;

use crate::args::BenchArgs;
use crate::config::resolve;
use crate::error::{usage, Result};
use crate::io::{corpus, print_json, write_json};

pub const REPORT_SCHEMA: &str = "s3d-bench/1";

#[derive(Serialize)]
pub struct BenchReport {
    pub schema: &'static str,
    pub config: BenchConfig,
    pub speculative: SpecStats,
    pub baseline: BaseStats,
    /// Wall-clock derived quantities; they vary between runs.
    pub timing: Timing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_normalized_speed: Option<f64>,
    pub metadata: Metadata,
}

#[derive(Serialize)]
pub struct BenchConfig {
    pub skip: SkipSpec,
    pub beta: f64,
    pub gamma: usize,
    pub branching: Vec<usize>,
    pub max_nodes: usize,
    pub episodes: usize,
    pub prompt_len: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

#[derive(Serialize)]
pub struct SpecStats {
    pub tokens: usize,
    pub iterations: usize,
    pub tau_hat: Option<f64>,
    pub per_depth: Vec<DepthSummary>,
}

#[derive(Serialize)]
pub struct BaseStats {
    pub tokens: usize,
}

#[derive(Serialize)]
pub struct Timing {
    pub speculative_seconds: f64,
    pub baseline_seconds: f64,
    pub speculative_tokens_per_sec: f64,
    pub baseline_tokens_per_sec: f64,
    pub speedup: f64,
    pub full_pass_equivalents_per_token: FullPasses,
    /// Per-iteration overhead in full-pass units implied by the measured
    /// cost: `measured · τ̂ − β − 1`.
    pub delta_hat: Option<f64>,
}

#[derive(Serialize)]
pub struct FullPasses {
    /// `(β + 1)/τ̂`.
    pub analytic: Option<f64>,
    /// Speculative time per token over plain time per token.
    pub measured: f64,
}

#[derive(Serialize)]
pub struct Metadata {
    pub unix_time: u64,
}

struct Episode {
    record: AcceptanceRecord,
    spec_tokens: usize,
    spec_secs: f64,
    base_tokens: usize,
    base_secs: f64,
}

/// `count` evenly spaced windows of `len` tokens across the sequences.
fn windows(seqs: &[Vec<TokenId>], len: usize, count: usize) -> Vec<Vec<TokenId>> {
    let mut starts = Vec::new();
    for (s, v) in seqs.iter().enumerate().filter(|(_, v)| v.len() >= len) {
        starts.extend((0..=v.len() - len).map(|i| (s, i)));
    }
    if starts.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|e| {
            let (s, i) = starts[e * starts.len() / count];
            seqs[s][i..i + len].to_vec()
        })
        .collect()
}

pub fn run(a: &BenchArgs, exec: Exec) -> Result<()> {
    let r = resolve(&a.run)?;
    let (model, opts) = (&r.model, &r.opts);
    if a.episodes == 0 || a.prompt_len == 0 {
        return usage("--episodes and --prompt-len must be positive");
    }
    if a.prompt_len >= model.config().max_seq_len {
        return usage("--prompt-len must be below the model's max_seq_len");
    }
    let prompts = windows(&corpus(&a.corpus, model)?, a.prompt_len, a.episodes);
    if prompts.is_empty() {
        return usage(format!("corpus has no window of {} tokens", a.prompt_len));
    }
    let runs = map_indexed(prompts.len(), exec, |i| -> Result<Episode> {
        let p = &prompts[i];
        let t = Instant::now();
        let out = decode(model, p, opts)?;
        let spec_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (base, _) = baseline_decode(model, p, opts.mode, opts.stop, opts.seed)?;
        let base_secs = t.elapsed().as_secs_f64();
        Ok(Episode {
            spec_tokens: out.tokens.len(),
            record: out.record,
            spec_secs,
            base_tokens: base.len(),
            base_secs,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut record = AcceptanceRecord::default();
    for e in &runs {
        record.merge(&e.record);
    }
    let beta = opts.skip.beta(model.config());
    let spec_tokens: usize = runs.iter().map(|e| e.spec_tokens).sum();
    let base_tokens: usize = runs.iter().map(|e| e.base_tokens).sum();
    let spec_secs: f64 = runs.iter().map(|e| e.spec_secs).sum();
    let base_secs: f64 = runs.iter().map(|e| e.base_secs).sum();
    let spec_tps = spec_tokens as f64 / spec_secs;
    let base_tps = base_tokens as f64 / base_secs;
    let tau_hat = record.mean_tokens_per_iteration();
    let measured = base_tps / spec_tps;
    let mns = match (a.baseline_speed, a.baseline_memory, a.memory) {
        (Some(v0), Some(m0), Some(m1)) => Some(memory_normalized_speed(v0, m0, a.speed.unwrap_or(spec_tps), m1)?),
        _ => None,
    };
    let summary = record.summary();
    let report = BenchReport {
        schema: REPORT_SCHEMA,
        config: BenchConfig {
            skip: opts.skip,
            beta,
            gamma: opts.gamma,
            branching: opts.branch.branching.clone(),
            max_nodes: opts.branch.max_nodes,
            episodes: prompts.len(),
            prompt_len: a.prompt_len,
            max_new_tokens: opts.stop.max_new_tokens,
            seed: opts.seed,
        },
        speculative: SpecStats {
            tokens: spec_tokens,
            iterations: summary.iterations,
            tau_hat,
            per_depth: summary.per_depth,
        },
        baseline: BaseStats { tokens: base_tokens },
        timing: Timing {
            speculative_seconds: spec_secs,
            baseline_seconds: base_secs,
            speculative_tokens_per_sec: spec_tps,
            baseline_tokens_per_sec: base_tps,
            speedup: spec_tps / base_tps,
            full_pass_equivalents_per_token: FullPasses {
                analytic: tau_hat.map(|t| (beta + 1.0) / t),
                measured,
            },
            delta_hat: tau_hat.map(|t| measured * t - beta - 1.0),
        },
        memory_normalized_speed: mns,
        metadata: Metadata {
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        },
    };
    match &a.out {
        Some(p) => write_json(p, &report),
        None => print_json(&report),
    }
}
