//! Row-based forward engine.
//!
//! A pass is a set of rows, each a token at a sequence position. Full rows
//! run every layer; draft rows skip the configured band and carry their
//! hidden state across it unchanged. Each row attends to every verified
//! cache entry plus the rows in its `visible` list. Visibility is the same
//! at every layer, and a draft row only ever sees full rows or draft rows
//! of its own group, so every visible row has keys wherever it is needed.
//!
//! All three inference modes and the training loss use this one routine,
//! which keeps their arithmetic identical row by row.

use super::{KvCache, Model, SkipSpec, TokenId};
use crate::error::{invalid, Result};
use crate::kernels::{
    attend, rms_norm_with_scale, silu, vec_mat, vec_mat_into, vec_mat_t, Real, RMS_EPS,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Row {
    pub token: TokenId,
    pub pos: usize,
    pub draft: bool,
    /// Rows (indices into the pass, ascending, including itself) whose keys
    /// this row may attend to.
    pub visible: Vec<usize>,
}

/// Per-row `(key, value)` for one layer; `None` where the row skipped it.
pub(crate) type LayerKv = Vec<Option<(Vec<Real>, Vec<Real>)>>;

pub(crate) struct RowPass {
    pub logits: Vec<Vec<Real>>,
    pub kv: Vec<LayerKv>,
}

/// Activations of one layer for its active rows, kept for backprop.
#[derive(Debug, Default)]
pub(crate) struct LayerTrace {
    pub active: Vec<usize>,
    pub x_in: Vec<Vec<Real>>,
    pub inv1: Vec<Real>,
    pub a: Vec<Vec<Real>>,
    pub q: Vec<Vec<Real>>,
    pub k: Vec<Vec<Real>>,
    pub v: Vec<Vec<Real>>,
    /// `[head][active row]` → (active key index, weight).
    pub attn: Vec<Vec<Vec<(usize, Real)>>>,
    pub o: Vec<Vec<Real>>,
    pub x_mid: Vec<Vec<Real>>,
    pub inv2: Vec<Real>,
    pub b: Vec<Vec<Real>>,
    pub gate: Vec<Vec<Real>>,
    pub up: Vec<Vec<Real>>,
    pub act: Vec<Vec<Real>>,
}

#[derive(Debug, Default)]
pub(crate) struct Trace {
    pub layers: Vec<LayerTrace>,
    pub final_in: Vec<Vec<Real>>,
    pub final_inv: Vec<Real>,
    pub final_out: Vec<Vec<Real>>,
}

/// Rotates each (even, odd) pair of every head by `pos·θ_i`; `inverse`
/// applies the transpose rotation.
pub(crate) fn rope(x: &mut [Real], pos: usize, head_dim: usize, base: Real, inverse: bool) {
    let half = head_dim / 2;
    for head in x.chunks_mut(head_dim) {
        for i in 0..half {
            let theta = pos as Real * base.powf(-((2 * i) as Real) / head_dim as Real);
            let (sin, cos) = theta.sin_cos();
            let sin = if inverse { -sin } else { sin };
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * cos - b * sin;
            head[2 * i + 1] = a * sin + b * cos;
        }
    }
}

impl Model {
    pub(crate) fn run_rows(
        &self,
        rows: &[Row],
        cache: Option<&KvCache>,
        skip: SkipSpec,
        mut trace: Option<&mut Trace>,
    ) -> Result<RowPass> {
        let cfg = &self.config;
        let w = &self.weights;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as Real).sqrt();
        for (i, r) in rows.iter().enumerate() {
            if r.pos >= cfg.max_seq_len {
                return invalid(format!("position {} exceeds max_seq_len", r.pos));
            }
            if r.visible.last() != Some(&i) || r.visible.windows(2).any(|p| p[0] >= p[1]) {
                return invalid(format!("row {i} has a malformed visibility list"));
            }
            if !r.draft && r.visible.iter().any(|&j| rows[j].draft) {
                return invalid(format!("full row {i} may not attend to draft rows"));
            }
        }

        let mut hidden: Vec<Vec<Real>> = rows
            .iter()
            .map(|r| w.embedding.row(r.token).to_vec())
            .collect();
        let mut kv_out = Vec::with_capacity(cfg.n_layers);

        for (li, lw) in w.layers.iter().enumerate() {
            let layer_skipped = skip.skips(li);
            let active: Vec<usize> = (0..rows.len())
                .filter(|&i| !(rows[i].draft && layer_skipped))
                .collect();
            let mut slot = vec![usize::MAX; rows.len()];
            for (ai, &ri) in active.iter().enumerate() {
                slot[ri] = ai;
            }

            let n = active.len();
            let mut inv1 = Vec::with_capacity(n);
            let mut a_rows = Vec::with_capacity(n);
            let mut q_rows = Vec::with_capacity(n);
            let mut k_rows = Vec::with_capacity(n);
            let mut v_rows = Vec::with_capacity(n);
            for &ri in &active {
                let (a, inv) = rms_norm_with_scale(&hidden[ri], &lw.attn_norm, RMS_EPS);
                let mut q = vec_mat(&a, &lw.wq);
                let mut k = vec_mat(&a, &lw.wk);
                let v = vec_mat(&a, &lw.wv);
                rope(&mut q, rows[ri].pos, hd, cfg.rope_base, false);
                rope(&mut k, rows[ri].pos, hd, cfg.rope_base, false);
                inv1.push(inv);
                a_rows.push(a);
                q_rows.push(q);
                k_rows.push(k);
                v_rows.push(v);
            }

            // visibility among active rows
            let mut vis = vec![vec![false; n]; n];
            for (ai, &ri) in active.iter().enumerate() {
                for &j in &rows[ri].visible {
                    if slot[j] == usize::MAX {
                        return invalid(format!(
                            "row {ri} sees row {j}, which does not run layer {}",
                            li + 1
                        ));
                    }
                    vis[ai][slot[j]] = true;
                }
            }

            let (ck, cv): (&[Vec<Real>], &[Vec<Real>]) = match cache {
                Some(c) => (c.verified_keys(li), c.verified_values(li)),
                None => (&[], &[]),
            };
            let c = ck.len();
            let mut o_rows = vec![vec![0.0; d]; n];
            let mut attn_trace = Vec::new();
            for h in 0..cfg.n_heads {
                let span = h * hd..(h + 1) * hd;
                let qs: Vec<&[Real]> = q_rows.iter().map(|q| &q[span.clone()]).collect();
                let ks: Vec<&[Real]> = ck
                    .iter()
                    .chain(&k_rows)
                    .map(|k| &k[span.clone()])
                    .collect();
                let vs: Vec<&[Real]> = cv
                    .iter()
                    .chain(&v_rows)
                    .map(|v| &v[span.clone()])
                    .collect();
                let res = attend(&qs, &ks, &vs, |qi, kj| kj < c || vis[qi][kj - c], scale)?;
                for (o, head_out) in o_rows.iter_mut().zip(&res.out) {
                    o[span.clone()].copy_from_slice(head_out);
                }
                if trace.is_some() {
                    attn_trace.push(res.weights);
                }
            }

            let mut x_mid_rows = Vec::with_capacity(n);
            let mut inv2 = Vec::with_capacity(n);
            let mut b_rows = Vec::with_capacity(n);
            let mut gate_rows = Vec::with_capacity(n);
            let mut up_rows = Vec::with_capacity(n);
            let mut act_rows = Vec::with_capacity(n);
            let mut x_in_rows = Vec::new();
            let mut tmp = vec![0.0; d];
            for (ai, &ri) in active.iter().enumerate() {
                if trace.is_some() {
                    x_in_rows.push(hidden[ri].clone());
                }
                vec_mat_into(&o_rows[ai], &lw.wo, &mut tmp);
                let x_mid: Vec<Real> = hidden[ri].iter().zip(&tmp).map(|(x, y)| x + y).collect();
                let (b, inv) = rms_norm_with_scale(&x_mid, &lw.mlp_norm, RMS_EPS);
                let gate = vec_mat(&b, &lw.w_gate);
                let up = vec_mat(&b, &lw.w_up);
                let act: Vec<Real> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect();
                vec_mat_into(&act, &lw.w_down, &mut tmp);
                hidden[ri] = x_mid.iter().zip(&tmp).map(|(x, y)| x + y).collect();
                if trace.is_some() {
                    x_mid_rows.push(x_mid);
                    inv2.push(inv);
                    b_rows.push(b);
                    gate_rows.push(gate);
                    up_rows.push(up);
                    act_rows.push(act);
                }
            }

            let mut layer_kv: LayerKv = vec![None; rows.len()];
            for (ai, &ri) in active.iter().enumerate() {
                layer_kv[ri] = Some((k_rows[ai].clone(), v_rows[ai].clone()));
            }
            kv_out.push(layer_kv);

            if let Some(t) = trace.as_deref_mut() {
                t.layers.push(LayerTrace {
                    active,
                    x_in: x_in_rows,
                    inv1,
                    a: a_rows,
                    q: q_rows,
                    k: k_rows,
                    v: v_rows,
                    attn: attn_trace,
                    o: o_rows,
                    x_mid: x_mid_rows,
                    inv2,
                    b: b_rows,
                    gate: gate_rows,
                    up: up_rows,
                    act: act_rows,
                });
            }
        }

        let mut logits = Vec::with_capacity(rows.len());
        for h in &hidden {
            let (f, inv) = rms_norm_with_scale(h, &w.final_norm, RMS_EPS);
            logits.push(match &w.lm_head {
                Some(head) => vec_mat(&f, head),
                None => vec_mat_t(&f, &w.embedding),
            });
            if let Some(t) = trace.as_deref_mut() {
                t.final_in.push(h.clone());
                t.final_inv.push(inv);
                t.final_out.push(f);
            }
        }
        Ok(RowPass {
            logits,
            kv: kv_out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rope_inverse_round_trips() {
        let orig: Vec<Real> = (0..8).map(|i| i as Real * 0.3 - 1.0).collect();
        let mut x = orig.clone();
        rope(&mut x, 17, 4, 10_000.0, false);
        assert_ne!(x, orig);
        rope(&mut x, 17, 4, 10_000.0, true);
        for (a, b) in x.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rope_at_zero_is_identity() {
        let orig: Vec<Real> = (0..8).map(|i| i as Real).collect();
        let mut x = orig.clone();
        rope(&mut x, 0, 4, 10_000.0, false);
        assert_eq!(x, orig);
    }
}
