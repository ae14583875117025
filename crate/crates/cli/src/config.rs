use std::path::PathBuf;

use s3d::model::{Model, Precision, SkipSpec};
use s3d::specdec::{BranchSpec, DecodeMode, DecodeOptions, StopCondition};
use s3d::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::RunArgs;
use crate::error::{usage, CliError, Result};
use crate::io::{load, read_json};

/// Decode/bench run description. Every field is optional; command-line
/// flags take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub skip: Option<SkipSpec>,
    pub gamma: Option<usize>,
    pub branch: Option<BranchSpec>,
    pub mode: Option<DecodeMode>,
    pub stop: Option<StopCondition>,
    pub seed: Option<u64>,
    pub prompt: Option<Vec<usize>>,
    pub telemetry: Option<PathBuf>,
}

pub const DEFAULT_GAMMA: usize = 4;
pub const DEFAULT_MAX_NEW: usize = 64;

/// A loaded model and validated decode options.
pub struct Resolved {
    pub model: Model,
    pub opts: DecodeOptions,
    pub file: RunConfig,
}

pub fn resolve(args: &RunArgs) -> Result<Resolved> {
    let file: RunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let Some(path) = args.model.clone().or_else(|| file.model.clone()) else {
        return usage("no model given (use --model or the config's \"model\")");
    };
    let model = load(&path)?;
    let layers = model.config().n_layers;
    let skip = match &args.skip {
        Some(s) => parse_skip(s)?,
        None => file.skip.unwrap_or_else(|| {
            let bands = SkipSpec::symmetric_middle(layers);
            bands[1.min(bands.len() - 1)]
        }),
    };
    skip.validate(layers).map_err(|e| CliError::Usage(e.to_string()))?;
    let gamma = args.gamma.or(file.gamma).unwrap_or(DEFAULT_GAMMA);
    if gamma == 0 || gamma >= model.config().max_seq_len {
        return usage(format!("gamma {gamma} is outside 1..{}", model.config().max_seq_len));
    }
    let mut branch = match &args.branch {
        Some(b) => BranchSpec {
            branching: parse_list(b)?,
            max_nodes: 0,
        },
        None => file.branch.clone().unwrap_or_default(),
    };
    if let Some(n) = args.max_nodes {
        branch.max_nodes = n;
    } else if args.branch.is_some() {
        branch.max_nodes = branch.branching.iter().product::<usize>().max(gamma);
    }
    let mode = match &args.mode {
        Some(m) => parse_mode(m)?,
        None => file.mode.unwrap_or_default(),
    };
    if mode == DecodeMode::Sampling && args.branch.is_none() && file.branch.is_none() {
        branch = BranchSpec::chain(gamma);
    }
    branch
        .for_depth(gamma)
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut stop = file.stop.unwrap_or(StopCondition::max_tokens(DEFAULT_MAX_NEW));
    if let Some(n) = args.max_new_tokens {
        stop.max_new_tokens = n;
    }
    if args.end_token.is_some() {
        stop.end_token = args.end_token;
    }
    let opts = DecodeOptions {
        skip,
        gamma,
        branch,
        mode,
        stop,
        seed: args.seed.or(file.seed).unwrap_or(0),
    };
    Ok(Resolved { model, opts, file })
}

/// `m..n` or `m,n`.
pub fn parse_skip(s: &str) -> Result<SkipSpec> {
    let parts: Vec<&str> = if s.contains("..") {
        s.split("..").collect()
    } else {
        s.split(',').collect()
    };
    match parts.as_slice() {
        [m, n] => match (m.trim().parse(), n.trim().parse()) {
            (Ok(m), Ok(n)) => Ok(SkipSpec { m, n }),
            _ => usage(format!("bad skip {s:?}; expected m..n")),
        },
        _ => usage(format!("bad skip {s:?}; expected m..n")),
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| CliError::Usage(format!("bad list entry {x:?} in {s:?}"))))
        .collect()
}

/// Comma list of integers and inclusive `a-b` ranges.
pub fn parse_ranges(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = match (a.trim().parse(), b.trim().parse()) {
                    (Ok(a), Ok(b)) if a <= b => (a, b),
                    _ => return usage(format!("bad range {part:?}")),
                };
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| CliError::Usage(format!("bad value {part:?}")))?),
        }
    }
    Ok(out)
}

pub fn parse_mode(s: &str) -> Result<DecodeMode> {
    match s {
        "greedy" => Ok(DecodeMode::Greedy),
        "sampling" => Ok(DecodeMode::Sampling),
        _ => usage(format!("unknown mode {s:?}; expected greedy or sampling")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSpec {
    /// JSON array of token ids.
    File { path: PathBuf },
    /// The seeded order-2 Markov corpus over the model vocabulary.
    Synthetic { seed: u64, tokens: usize },
}

/// Training run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    /// Initial weights.
    pub model: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    /// Storage precision of the exported model.
    #[serde(default)]
    pub precision: Precision,
}
