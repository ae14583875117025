use std::hash::{DefaultHasher, Hasher};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::ModelConfig;
use crate::error::{invalid, Result};
use crate::kernels::{Matrix, Real};


#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<Real>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm: Vec<Real>,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

/// All model parameters. Matrices multiply row vectors from the left
/// (`x · W`), so projections are stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `vocab × d_model`, including the `<M>` row.
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<Real>,
    /// `d_model × vocab`; `None` when tied to the embedding.
    pub lm_head: Option<Matrix>,
}

/// Name and role of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// 0-based transformer layer, if the tensor belongs to one.
    pub layer: Option<usize>,
}

impl TensorInfo {
    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }
}

fn vector_info(name: String, len: usize, layer: Option<usize>) -> TensorInfo {
    TensorInfo {
        name,
        shape: vec![len],
        layer,
    }
}

fn matrix_info(name: String, m: &Matrix, layer: Option<usize>) -> TensorInfo {
    TensorInfo {
        name,
        shape: vec![m.rows(), m.cols()],
        layer,
    }
}

impl LayerWeights {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            attn_norm: vec![0.0; d],
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            mlp_norm: vec![0.0; d],
            w_gate: Matrix::zeros(d, cfg.d_ff),
            w_up: Matrix::zeros(d, cfg.d_ff),
            w_down: Matrix::zeros(cfg.d_ff, d),
        }
    }
}

impl Weights {
    /// All-zero tensors with the shapes `cfg` implies (gradient buffers).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            embedding: Matrix::zeros(cfg.vocab_size, cfg.d_model),
            layers: (0..cfg.n_layers).map(|_| LayerWeights::zeros(cfg)).collect(),
            final_norm: vec![0.0; cfg.d_model],
            lm_head: (!cfg.tie_embeddings).then(|| Matrix::zeros(cfg.d_model, cfg.vocab_size)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Every tensor in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(TensorInfo, &[Real])> {
        let mut out: Vec<(TensorInfo, &[Real])> = vec![(
            matrix_info("embedding".into(), &self.embedding, None),
            self.embedding.data(),
        )];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((vector_info(p("attn_norm"), l.attn_norm.len(), Some(i)), &l.attn_norm));
            for (name, m) in [("wq", &l.wq), ("wk", &l.wk), ("wv", &l.wv), ("wo", &l.wo)] {
                out.push((matrix_info(p(name), m, Some(i)), m.data()));
            }
            out.push((vector_info(p("mlp_norm"), l.mlp_norm.len(), Some(i)), &l.mlp_norm));
            for (name, m) in [("w_gate", &l.w_gate), ("w_up", &l.w_up), ("w_down", &l.w_down)] {
                out.push((matrix_info(p(name), m, Some(i)), m.data()));
            }
        }
        out.push((
            vector_info("final_norm".into(), self.final_norm.len(), None),
            &self.final_norm,
        ));
        if let Some(h) = &self.lm_head {
            out.push((matrix_info("lm_head".into(), h, None), h.data()));
        }
        out
    }

    /// Mutable view in the same order as [`Weights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(TensorInfo, &mut [Real])> {
        let infos: Vec<TensorInfo> = self.tensors().into_iter().map(|(i, _)| i).collect();
        let mut slices: Vec<&mut [Real]> = vec![self.embedding.data_mut()];
        for l in self.layers.iter_mut() {
            slices.push(&mut l.attn_norm);
            slices.push(l.wq.data_mut());
            slices.push(l.wk.data_mut());
            slices.push(l.wv.data_mut());
            slices.push(l.wo.data_mut());
            slices.push(&mut l.mlp_norm);
            slices.push(l.w_gate.data_mut());
            slices.push(l.w_up.data_mut());
            slices.push(l.w_down.data_mut());
        }
        slices.push(&mut self.final_norm);
        if let Some(h) = &mut self.lm_head {
            slices.push(h.data_mut());
        }
        infos.into_iter().zip(slices).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Order-sensitive hash over the exact bit patterns of every tensor.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (info, t) in self.tensors() {
            h.write(info.name.as_bytes());
            for v in t {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    pub(crate) fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = Weights::zeros(cfg);
        let want = expect.tensors();
        let have = self.tensors();
        if want.len() != have.len() {
            return invalid("weight tensor set does not match the configuration");
        }
        for ((wi, _), (hi, data)) in want.iter().zip(&have) {
            if wi != hi {
                return invalid(format!(
                    "tensor {} has shape {:?}, expected {} {:?}",
                    hi.name, hi.shape, wi.name, wi.shape
                ));
            }
            if data.iter().any(|x| !x.is_finite()) {
                return invalid(format!("tensor {} contains non-finite values", hi.name));
            }
        }
        Ok(())
    }

    /// Sets the `<M>` embedding row to the mean of every other row.
    pub fn init_mask_embedding(&mut self, mask_token_id: usize) {
        let rows = self.embedding.rows();
        let cols = self.embedding.cols();
        let mut mean = vec![0.0; cols];
        for r in (0..rows).filter(|&r| r != mask_token_id) {
            for (m, v) in mean.iter_mut().zip(self.embedding.row(r)) {
                *m += v;
            }
        }
        let n = (rows - 1) as Real;
        for (dst, m) in self.embedding.row_mut(mask_token_id).iter_mut().zip(mean) {
            *dst = m / n;
        }
    }
}

/// Seeded initialization: N(0, init_std²) for matrices, ones for norm gains,
/// and the `<M>` row set to the mean of the other embedding rows.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Weights {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.init_std).expect("validated std");
    let mut w = Weights::zeros(config);
    for (info, t) in w.tensors_mut() {
        if info.is_matrix() {
            for v in t.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        } else {
            t.fill(1.0);
        }
    }
    w.init_mask_embedding(config.mask_token_id);
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny(32, 2, 16);
        assert_eq!(init_weights(&cfg, 5).checksum(), init_weights(&cfg, 5).checksum());
        assert_ne!(init_weights(&cfg, 5).checksum(), init_weights(&cfg, 6).checksum());
    }

    #[test]
    fn mask_row_is_mean() {
        let cfg = ModelConfig::tiny(8, 2, 16);
        let w = init_weights(&cfg, 3);
        for c in 0..16 {
            let mean: Real = (0..7).map(|r| w.embedding.get(r, c)).sum::<Real>() / 7.0;
            assert!((w.embedding.get(7, c) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn tensor_views_line_up() {
        let cfg = ModelConfig::tiny(8, 3, 16);
        let mut w = init_weights(&cfg, 3);
        let names: Vec<String> = w.tensors().into_iter().map(|(i, _)| i.name).collect();
        let names_mut: Vec<String> = w.tensors_mut().into_iter().map(|(i, _)| i.name).collect();
        assert_eq!(names, names_mut);
        assert!(w.check_shapes(&cfg).is_ok());
        let lens: Vec<usize> = w.tensors().iter().map(|(_, t)| t.len()).collect();
        let lens_mut: Vec<usize> = w.tensors_mut().iter().map(|(_, t)| t.len()).collect();
        assert_eq!(lens, lens_mut);
    }
}
