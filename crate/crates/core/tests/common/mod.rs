//! Naive reference transformer used as an oracle by the integration tests.
//!
//! Written independently of the crate's row engine: explicit loops, one
//! position at a time, no cache, rotary angles computed through `exp/ln`.
#![allow(dead_code)]

use s3d::kernels::Matrix;
use s3d::model::{Model, ModelConfig, SkipSpec, TokenId};
use s3d::train::{MaskedBatch, MaskedSequence};

pub fn model(vocab: usize, layers: usize, d: usize, seed: u64, std: f64) -> Model {
    let mut cfg = ModelConfig::tiny(vocab, layers, d);
    cfg.max_seq_len = 64;
    cfg.init_std = std;
    Model::init(cfg, seed).unwrap()
}

fn times(x: &[f64], m: &Matrix) -> Vec<f64> {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| x[i] * m.get(i, j)).sum())
        .collect()
}

fn norm(x: &[f64], g: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = 1.0 / (ms + 1e-6).sqrt();
    x.iter().zip(g).map(|(v, w)| v * r * w).collect()
}

fn rotate(x: &mut [f64], pos: usize, hd: usize, base: f64) {
    for h in 0..x.len() / hd {
        for i in 0..hd / 2 {
            let freq = (-(2.0 * i as f64 / hd as f64) * base.ln()).exp();
            let a = pos as f64 * freq;
            let (x0, x1) = (x[h * hd + 2 * i], x[h * hd + 2 * i + 1]);
            x[h * hd + 2 * i] = x0 * a.cos() - x1 * a.sin();
            x[h * hd + 2 * i + 1] = x0 * a.sin() + x1 * a.cos();
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Logits of `context` rows (causal, every layer) and of `draft` rows
/// (which see the whole context plus earlier draft rows and skip the
/// layers inside `skip`). Each entry is `(token, position)`.
pub fn reference_pass(
    model: &Model,
    context: &[(TokenId, usize)],
    draft: &[(TokenId, usize)],
    skip: SkipSpec,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let cfg = model.config();
    let w = model.weights();
    let (d, hd, nh) = (cfg.d_model, cfg.head_dim(), cfg.n_heads);
    let all: Vec<(TokenId, usize, bool)> = context
        .iter()
        .map(|&(t, p)| (t, p, false))
        .chain(draft.iter().map(|&(t, p)| (t, p, true)))
        .collect();
    let nc = context.len();
    let mut x: Vec<Vec<f64>> = all.iter().map(|&(t, _, _)| w.embedding.row(t).to_vec()).collect();
    for (l, lw) in w.layers.iter().enumerate() {
        let runs = |i: usize| !(all[i].2 && skip.skips(l));
        let mut q = vec![Vec::new(); all.len()];
        let mut k = vec![Vec::new(); all.len()];
        let mut v = vec![Vec::new(); all.len()];
        for i in (0..all.len()).filter(|&i| runs(i)) {
            let a = norm(&x[i], &lw.attn_norm);
            q[i] = times(&a, &lw.wq);
            k[i] = times(&a, &lw.wk);
            v[i] = times(&a, &lw.wv);
            rotate(&mut q[i], all[i].1, hd, cfg.rope_base);
            rotate(&mut k[i], all[i].1, hd, cfg.rope_base);
        }
        let mut next = x.clone();
        for i in (0..all.len()).filter(|&i| runs(i)) {
            let sees: Vec<usize> = if all[i].2 {
                (0..=i).collect()
            } else {
                (0..=i.min(nc - 1)).collect()
            };
            let mut o = vec![0.0; d];
            for h in 0..nh {
                let r = h * hd..(h + 1) * hd;
                let s: Vec<f64> = sees
                    .iter()
                    .map(|&j| {
                        q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let p = softmax(&s);
                for (pj, &j) in p.iter().zip(&sees) {
                    for c in r.clone() {
                        o[c] += pj * v[j][c];
                    }
                }
            }
            let proj = times(&o, &lw.wo);
            let mid: Vec<f64> = x[i].iter().zip(&proj).map(|(a, b)| a + b).collect();
            let b = norm(&mid, &lw.mlp_norm);
            let g = times(&b, &lw.w_gate);
            let u = times(&b, &lw.w_up);
            let act: Vec<f64> = g.iter().zip(&u).map(|(g, u)| silu(*g) * u).collect();
            let down = times(&act, &lw.w_down);
            next[i] = mid.iter().zip(&down).map(|(a, b)| a + b).collect();
        }
        x = next;
    }
    let logits: Vec<Vec<f64>> = x
        .iter()
        .map(|h| {
            let f = norm(h, &w.final_norm);
            match &w.lm_head {
                Some(m) => times(&f, m),
                None => (0..cfg.vocab_size)
                    .map(|t| f.iter().zip(w.embedding.row(t)).map(|(a, b)| a * b).sum())
                    .collect(),
            }
        })
        .collect();
    let (c, dr) = logits.split_at(nc);
    (c.to_vec(), dr.to_vec())
}

/// Causal logits at every position of `tokens`.
pub fn full_logits(model: &Model, tokens: &[TokenId]) -> Vec<Vec<f64>> {
    let ctx: Vec<_> = tokens.iter().copied().zip(0..).collect();
    reference_pass(model, &ctx, &[], SkipSpec::EMPTY).0
}

/// Draft distributions for `gamma` rows after `context`, led by `pending`.
pub fn draft_dists(
    model: &Model,
    skip: SkipSpec,
    context: &[TokenId],
    pending: TokenId,
    gamma: usize,
) -> Vec<Vec<f64>> {
    let c = context.len();
    let ctx: Vec<_> = context.iter().copied().zip(0..).collect();
    let mask = model.config().mask_token_id;
    let draft: Vec<_> = (0..gamma)
        .map(|k| (if k == 0 { pending } else { mask }, c + k))
        .collect();
    reference_pass(model, &ctx, &draft, skip).1.iter().map(|z| softmax(z)).collect()
}

/// Cross-entropy of every decode-set position, in position order: each
/// masked run is drafted from the real token before it, with the unmasked
/// earlier positions as context.
pub fn loss_terms(model: &Model, skip: SkipSpec, seq: &MaskedSequence) -> Vec<(usize, f64)> {
    let n = seq.tokens.len();
    let mask = model.config().mask_token_id;
    let mut out = Vec::new();
    let mut start = 1;
    while start < n {
        if !seq.masked[start] {
            start += 1;
            continue;
        }
        let mut end = start;
        while end < n && seq.masked[end] {
            end += 1;
        }
        let lead = start - 1;
        let ctx: Vec<_> = (0..lead)
            .filter(|&p| !seq.masked[p])
            .map(|p| (seq.tokens[p], p))
            .collect();
        let draft: Vec<_> = (lead..end)
            .map(|p| (if p == lead { seq.tokens[p] } else { mask }, p))
            .collect();
        let logits = reference_pass(model, &ctx, &draft, skip).1;
        for (k, z) in logits.iter().enumerate() {
            let p = lead + k;
            if p + 1 < n {
                let target = seq.tokens[p + 1];
                out.push((p, -softmax(z)[target].ln()));
            }
        }
        start = end;
    }
    out.sort_by_key(|t| t.0);
    out
}

pub fn reference_loss(model: &Model, skip: SkipSpec, batch: &MaskedBatch) -> f64 {
    let terms: Vec<f64> = batch
        .sequences
        .iter()
        .flat_map(|s| loss_terms(model, skip, s))
        .map(|t| t.1)
        .collect();
    terms.iter().sum::<f64>() / terms.len() as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
