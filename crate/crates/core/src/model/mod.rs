//! Decoder-only transformer with three forward modes over a shared KV cache:
//! the full target pass, the skip-band draft pass over `<M>` mask inputs,
//! and the tree-attention verification pass.

mod cache;
mod format;
mod forward;
mod tree;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::Real;

pub use cache::{KvCache, Provenance};
pub use format::{
    load_model, read_tensor_file, read_weights, save_model, write_tensor_file, write_weights,
    NamedTensor, Precision, TensorFile, FORMAT_VERSION, MAGIC,
};
pub(crate) use forward::{rope, Row, Trace};
pub use tree::{TreeLayout, TreeNode};
pub use weights::{init_weights, LayerWeights, TensorInfo, Weights};

/// Vocabulary index. The `<M>` mask token is an ordinary entry.
pub type TokenId = usize;

fn default_rope_base() -> Real {
    10_000.0
}

fn default_init_std() -> Real {
    0.02
}

/// Transformer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub mask_token_id: TokenId,
    #[serde(default = "default_rope_base")]
    pub rope_base: Real,
    /// Share the LM head with the token embedding.
    #[serde(default)]
    pub tie_embeddings: bool,
    /// Standard deviation of the random matrix initialization.
    #[serde(default = "default_init_std")]
    pub init_std: Real,
}

impl ModelConfig {
    /// A small configuration; the mask token is the last vocabulary entry.
    pub fn tiny(vocab_size: usize, n_layers: usize, d_model: usize) -> Self {
        Self {
            vocab_size,
            n_layers,
            d_model,
            n_heads: 4,
            d_ff: 2 * d_model,
            max_seq_len: 256,
            mask_token_id: vocab_size - 1,
            rope_base: default_rope_base(),
            tie_embeddings: false,
            init_std: default_init_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return invalid("a model needs at least two layers");
        }
        if self.vocab_size < 2 || self.d_model == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return invalid("model dimensions must be positive");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return invalid("rotary encoding needs an even head dimension");
        }
        if self.mask_token_id >= self.vocab_size {
            return invalid("mask_token_id is outside the vocabulary");
        }
        if !(self.rope_base > 1.0) {
            return invalid("rope_base must exceed 1");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return invalid("init_std must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn layer_param_count(&self) -> usize {
        let d = self.d_model;
        2 * d + 4 * d * d + 3 * d * self.d_ff
    }

    /// Total parameter count from the dimensions alone.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let head = if self.tie_embeddings {
            0
        } else {
            d * self.vocab_size
        };
        self.vocab_size * d + self.n_layers * self.layer_param_count() + d + head
    }
}

/// Mid-layer band excluded from draft passes: layers `m..n` (1-based,
/// `n` exclusive). `m == n` is the empty band. Draft positions feed the
/// output of layer `m − 1` (the embedding when `m == 1`) straight into
/// layer `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipSpec {
    pub m: usize,
    pub n: usize,
}

impl SkipSpec {
    pub const EMPTY: SkipSpec = SkipSpec { m: 1, n: 1 };

    pub fn new(m: usize, n: usize, n_layers: usize) -> Result<Self> {
        let s = Self { m, n };
        s.validate(n_layers)?;
        Ok(s)
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.m < 1 || self.m > self.n || self.n > n_layers + 1 {
            return invalid(format!(
                "skip band {}..{} is not within 1 <= m <= n <= {}",
                self.m,
                self.n,
                n_layers + 1
            ));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.m == self.n
    }

    pub fn skipped_layers(&self) -> usize {
        self.n - self.m
    }

    /// Whether the 0-based layer `layer` is skipped by draft rows.
    pub fn skips(&self, layer: usize) -> bool {
        layer + 1 >= self.m && layer + 1 < self.n
    }

    /// Symmetric middle bands for an `n_layers` model, ordered from the
    /// empty band to the widest (one layer kept at each end).
    pub fn symmetric_middle(n_layers: usize) -> Vec<SkipSpec> {
        let mut out = vec![SkipSpec::EMPTY];
        for keep in (1..=n_layers / 2).rev() {
            let skipped = n_layers - 2 * keep;
            if skipped == 0 {
                continue;
            }
            out.push(SkipSpec {
                m: keep + 1,
                n: keep + 1 + skipped,
            });
        }
        out
    }

    /// Fraction of the model's parameters used by a draft pass.
    pub fn beta(&self, config: &ModelConfig) -> Real {
        let total = config.param_count();
        let skipped = self.skipped_layers() * config.layer_param_count();
        (total - skipped) as Real / total as Real
    }
}

impl std::fmt::Display for SkipSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.m, self.n)
    }
}

/// Immutable model: configuration plus validated weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    weights: Weights,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Self { config, weights })
    }

    /// Freshly initialized model (see [`init_weights`]).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = init_weights(&config, seed);
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    pub fn into_weights(self) -> Weights {
        self.weights
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(&self.config)
    }

    /// Runs the target model over `tokens`, appending verified KV at every
    /// layer. Returns the LM-head logits at each new position.
    pub fn forward_full(&self, cache: &mut KvCache, tokens: &[TokenId]) -> Result<Vec<Vec<Real>>> {
        self.check_clean(cache)?;
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let start = cache.committed();
        if start + tokens.len() > self.config.max_seq_len {
            return invalid(format!(
                "context overflow: {} + {} tokens exceeds max_seq_len {}",
                start,
                tokens.len(),
                self.config.max_seq_len
            ));
        }
        self.check_tokens(tokens)?;
        let rows: Vec<Row> = tokens
            .iter()
            .enumerate()
            .map(|(i, &token)| Row {
                token,
                pos: start + i,
                draft: false,
                visible: (0..=i).collect(),
            })
            .collect();
        let pass = self.run_rows(&rows, Some(cache), SkipSpec::EMPTY, None)?;
        cache.append_verified(&pass.kv);
        Ok(pass.logits)
    }

    /// Simultaneous multi-token draft.
    ///
    /// `last` is the newest token of the sequence, which sits at position
    /// `committed` and has no cached states yet. It is followed by
    /// `gamma − 1` mask tokens. All of these rows run only the layers
    /// outside `skip`, attend to the verified cache plus earlier draft rows,
    /// and write draft-tagged KV at the layers they run. Row `k` predicts
    /// the token `k + 1` places after `last`.
    pub fn forward_draft(
        &self,
        skip: SkipSpec,
        cache: &mut KvCache,
        last: TokenId,
        gamma: usize,
    ) -> Result<Vec<Vec<Real>>> {
        self.check_clean(cache)?;
        skip.validate(self.config.n_layers)?;
        if gamma == 0 {
            return invalid("gamma must be at least 1");
        }
        let start = cache.committed();
        if start + gamma > self.config.max_seq_len {
            return invalid(format!(
                "gamma {gamma} does not fit the context window at position {start}"
            ));
        }
        self.check_tokens(&[last])?;
        let rows: Vec<Row> = (0..gamma)
            .map(|k| Row {
                token: if k == 0 {
                    last
                } else {
                    self.config.mask_token_id
                },
                pos: start + k,
                draft: true,
                visible: (0..=k).collect(),
            })
            .collect();
        let pass = self.run_rows(&rows, Some(cache), skip, None)?;
        cache.append_draft(&pass.kv, &rows, None);
        Ok(pass
            .logits
            .iter()
            .map(|l| crate::kernels::softmax_unchecked(l))
            .collect())
    }

    /// Full-model pass over a token tree. Each node sees the verified cache
    /// and its ancestors; its logits predict the token after it.
    pub fn forward_tree(&self, cache: &mut KvCache, tree: &TreeLayout) -> Result<Vec<Vec<Real>>> {
        self.check_clean(cache)?;
        if tree.is_empty() {
            return Ok(Vec::new());
        }
        let start = cache.committed();
        if start + tree.max_depth() > self.config.max_seq_len {
            return invalid("tree does not fit the context window");
        }
        let tokens: Vec<TokenId> = tree.nodes().iter().map(|n| n.token).collect();
        self.check_tokens(&tokens)?;
        let rows: Vec<Row> = (0..tree.len())
            .map(|i| Row {
                token: tree.nodes()[i].token,
                pos: start + tree.depth(i) - 1,
                draft: false,
                visible: tree.ancestors_inclusive(i),
            })
            .collect();
        let pass = self.run_rows(&rows, Some(cache), SkipSpec::EMPTY, None)?;
        cache.append_draft(&pass.kv, &rows, Some(tree.parents()));
        Ok(pass.logits)
    }

    fn check_clean(&self, cache: &KvCache) -> Result<()> {
        if cache.n_layers() != self.config.n_layers {
            return invalid("cache layer count does not match the model");
        }
        if cache.has_draft() {
            return invalid("cache holds uncommitted draft entries; roll back or commit first");
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            Some(t) => invalid(format!("token {t} is outside the vocabulary")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_indexing() {
        let s = SkipSpec::new(2, 4, 4).unwrap();
        assert!(!s.skips(0));
        assert!(s.skips(1) && s.skips(2));
        assert!(!s.skips(3));
        assert!(SkipSpec::new(3, 2, 4).is_err());
        assert!(SkipSpec::new(1, 6, 4).is_err());
        assert!(SkipSpec::new(5, 5, 4).unwrap().is_empty());
    }

    #[test]
    fn symmetric_middle_betas_decrease() {
        let cfg = ModelConfig::tiny(64, 8, 32);
        let skips = SkipSpec::symmetric_middle(8);
        assert_eq!(
            skips,
            vec![
                SkipSpec::EMPTY,
                SkipSpec { m: 4, n: 6 },
                SkipSpec { m: 3, n: 7 },
                SkipSpec { m: 2, n: 8 },
            ]
        );
        let betas: Vec<Real> = skips.iter().map(|s| s.beta(&cfg)).collect();
        assert_eq!(betas[0], 1.0);
        assert!(betas.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn param_count_closed_form() {
        let cfg = ModelConfig::tiny(32, 2, 16);
        // emb 32·16 + 2·(2·16 + 4·256 + 3·16·32) + 16 + head 16·32
        assert_eq!(cfg.param_count(), 512 + 2 * (32 + 1024 + 1536) + 16 + 512);
        let model = Model::init(cfg.clone(), 1).unwrap();
        assert_eq!(model.weights().param_count(), cfg.param_count());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::tiny(16, 2, 16);
        assert!(cfg.validate().is_ok());
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny(16, 1, 16);
        assert!(cfg.validate().is_err());
        cfg.n_layers = 2;
        cfg.mask_token_id = 16;
        assert!(cfg.validate().is_err());
    }
}
