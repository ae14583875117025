use super::mask::{MaskedBatch, MaskedSequence};
use crate::error::{invalid, Result};
use crate::exec::{map_indexed, Exec};
use crate::kernels::{
    add_assign, add_outer, dot, log_sum_exp, silu, silu_grad, softmax_unchecked, vec_mat,
    vec_mat_t, Real,
};
use crate::model::{rope, Model, Row, SkipSpec, Trace, TokenId, Weights};

/// Rows of one training sequence and the rows whose logits are trained.
///
/// Unmasked positions become full rows that see only earlier unmasked
/// positions. Each masked run becomes a draft group exactly like an
/// inference draft: the real token before the run leads it, followed by the
/// masks, and the group sees the unmasked positions before its lead plus
/// its own earlier rows.
pub(crate) struct RowGraph {
    pub rows: Vec<Row>,
    /// `(row, target token)` per decode-set position, in position order.
    pub targets: Vec<(usize, TokenId)>,
}

pub(crate) fn build_rows(seq: &MaskedSequence, mask_token_id: TokenId) -> RowGraph {
    let mut rows = Vec::new();
    let mut real: Vec<usize> = Vec::new();
    for (p, &m) in seq.masked.iter().enumerate() {
        if !m {
            real.push(rows.len());
            rows.push(Row {
                token: seq.input[p],
                pos: p,
                draft: false,
                visible: real.clone(),
            });
        }
    }
    let mut predicts = vec![usize::MAX; seq.input.len()];
    for run in seq.runs() {
        let lead = run.start - 1;
        let mut visible: Vec<usize> = real
            .iter()
            .copied()
            .filter(|&r| rows[r].pos < lead)
            .collect();
        for p in lead..run.end {
            visible.push(rows.len());
            predicts[p] = rows.len();
            rows.push(Row {
                token: if p == lead {
                    seq.input[lead]
                } else {
                    mask_token_id
                },
                pos: p,
                draft: true,
                visible: visible.clone(),
            });
        }
    }
    let targets = seq
        .decode_set
        .iter()
        .map(|&j| (predicts[j], seq.tokens[j + 1]))
        .collect();
    RowGraph { rows, targets }
}

fn check_batch(model: &Model, skip: SkipSpec, batch: &MaskedBatch) -> Result<()> {
    let cfg = model.config();
    skip.validate(cfg.n_layers)?;
    if batch.targets() == 0 {
        return invalid("batch has an empty decode set");
    }
    for s in &batch.sequences {
        if s.tokens.len() > cfg.max_seq_len {
            return invalid("training sequence exceeds max_seq_len");
        }
        if s.tokens.iter().any(|&t| t >= cfg.vocab_size) {
            return invalid("training token outside the vocabulary");
        }
    }
    Ok(())
}

/// Sum of cross-entropies over one sequence's decode set.
fn sequence_loss(model: &Model, skip: SkipSpec, seq: &MaskedSequence) -> Result<Real> {
    if seq.is_skipped() {
        return Ok(0.0);
    }
    let g = build_rows(seq, model.config().mask_token_id);
    let pass = model.run_rows(&g.rows, None, skip, None)?;
    Ok(g.targets
        .iter()
        .map(|&(r, t)| log_sum_exp(&pass.logits[r]) - pass.logits[r][t])
        .sum())
}

/// Mean next-token cross-entropy over every decode-set position of the
/// batch.
pub fn s3d_loss(model: &Model, skip: SkipSpec, batch: &MaskedBatch) -> Result<Real> {
    check_batch(model, skip, batch)?;
    let mut total = 0.0;
    for s in &batch.sequences {
        total += sequence_loss(model, skip, s)?;
    }
    Ok(total / batch.targets() as Real)
}

/// Loss and gradient of [`s3d_loss`]. Tensors of layers inside `skip` get
/// exactly-zero gradients.
pub fn s3d_gradients(
    model: &Model,
    skip: SkipSpec,
    batch: &MaskedBatch,
    exec: Exec,
) -> Result<(Real, Weights)> {
    check_batch(model, skip, batch)?;
    let parts = map_indexed(batch.sequences.len(), exec, |i| {
        sequence_gradients(model, skip, &batch.sequences[i])
    });
    let mut grads = model.weights().zeros_like();
    let mut total = 0.0;
    for part in parts {
        let (loss, g) = part?;
        total += loss;
        let Some(g) = g else { continue };
        for ((_, acc), (_, x)) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            add_assign(acc, x);
        }
    }
    let n = batch.targets() as Real;
    for (info, t) in grads.tensors_mut() {
        if info.layer.is_some_and(|l| skip.skips(l)) {
            t.fill(0.0);
        } else {
            t.iter_mut().for_each(|x| *x /= n);
        }
    }
    Ok((total / n, grads))
}

/// Summed loss and unnormalized gradient of one sequence.
fn sequence_gradients(
    model: &Model,
    skip: SkipSpec,
    seq: &MaskedSequence,
) -> Result<(Real, Option<Weights>)> {
    if seq.is_skipped() {
        return Ok((0.0, None));
    }
    let g = build_rows(seq, model.config().mask_token_id);
    let mut trace = Trace::default();
    let pass = model.run_rows(&g.rows, None, skip, Some(&mut trace))?;
    let v = model.config().vocab_size;
    let mut dlogits: Vec<Option<Vec<Real>>> = vec![None; g.rows.len()];
    let mut loss = 0.0;
    for &(r, t) in &g.targets {
        let z = &pass.logits[r];
        loss += log_sum_exp(z) - z[t];
        let mut dz = softmax_unchecked(z);
        dz[t] -= 1.0;
        match &mut dlogits[r] {
            Some(acc) => add_assign(acc, &dz),
            slot => *slot = Some(dz),
        }
    }
    debug_assert!(dlogits.iter().flatten().all(|d| d.len() == v));
    let mut grads = model.weights().zeros_like();
    backward(model, &g.rows, &trace, &dlogits, &mut grads);
    Ok((loss, Some(grads)))
}

/// Gradient of RMS normalization. Accumulates the gain gradient and
/// returns the input gradient.
fn rms_backward(x: &[Real], inv: Real, gain: &[Real], dy: &[Real], dgain: &mut [Real]) -> Vec<Real> {
    let n: Vec<Real> = x.iter().map(|v| v * inv).collect();
    let dn: Vec<Real> = dy.iter().zip(gain).map(|(d, g)| d * g).collect();
    for ((dg, d), ni) in dgain.iter_mut().zip(dy).zip(&n) {
        *dg += d * ni;
    }
    let m = dot(&dn, &n) / x.len() as Real;
    dn.iter().zip(&n).map(|(d, ni)| inv * (d - ni * m)).collect()
}

/// Reverse pass through a traced, cache-free `run_rows`.
fn backward(
    model: &Model,
    rows: &[Row],
    trace: &Trace,
    dlogits: &[Option<Vec<Real>>],
    grads: &mut Weights,
) {
    let cfg = model.config();
    let w = model.weights();
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as Real).sqrt();

    let mut dh = vec![vec![0.0; d]; rows.len()];
    for (r, dz) in dlogits.iter().enumerate() {
        let Some(dz) = dz else { continue };
        let f = &trace.final_out[r];
        let df = match (&w.lm_head, &mut grads.lm_head) {
            (Some(head), Some(gh)) => {
                add_outer(gh, f, dz);
                vec_mat_t(dz, head)
            }
            _ => {
                add_outer(&mut grads.embedding, dz, f);
                vec_mat(dz, &w.embedding)
            }
        };
        dh[r] = rms_backward(
            &trace.final_in[r],
            trace.final_inv[r],
            &w.final_norm,
            &df,
            &mut grads.final_norm,
        );
    }

    for (li, lt) in trace.layers.iter().enumerate().rev() {
        let lw = &w.layers[li];
        let gl = &mut grads.layers[li];
        let n = lt.active.len();

        let mut dx_mid = Vec::with_capacity(n);
        for (ai, &ri) in lt.active.iter().enumerate() {
            let dout = &dh[ri];
            add_outer(&mut gl.w_down, &lt.act[ai], dout);
            let d_act = vec_mat_t(dout, &lw.w_down);
            let mut d_gate = Vec::with_capacity(d_act.len());
            let mut d_up = Vec::with_capacity(d_act.len());
            for ((da, &g), &u) in d_act.iter().zip(&lt.gate[ai]).zip(&lt.up[ai]) {
                d_gate.push(da * u * silu_grad(g));
                d_up.push(da * silu(g));
            }
            add_outer(&mut gl.w_gate, &lt.b[ai], &d_gate);
            add_outer(&mut gl.w_up, &lt.b[ai], &d_up);
            let mut db = vec_mat_t(&d_gate, &lw.w_gate);
            add_assign(&mut db, &vec_mat_t(&d_up, &lw.w_up));
            let mut dxm = rms_backward(&lt.x_mid[ai], lt.inv2[ai], &lw.mlp_norm, &db, &mut gl.mlp_norm);
            add_assign(&mut dxm, dout);
            dx_mid.push(dxm);
        }

        let mut d_o = Vec::with_capacity(n);
        for ai in 0..n {
            add_outer(&mut gl.wo, &lt.o[ai], &dx_mid[ai]);
            d_o.push(vec_mat_t(&dx_mid[ai], &lw.wo));
        }

        let mut dq = vec![vec![0.0; d]; n];
        let mut dk = vec![vec![0.0; d]; n];
        let mut dv = vec![vec![0.0; d]; n];
        for (h, per_row) in lt.attn.iter().enumerate() {
            let span = h * hd..(h + 1) * hd;
            for (ai, weights) in per_row.iter().enumerate() {
                let go = &d_o[ai][span.clone()];
                let dw: Vec<Real> = weights
                    .iter()
                    .map(|&(j, _)| dot(go, &lt.v[j][span.clone()]))
                    .collect();
                let mean: Real = weights.iter().zip(&dw).map(|(&(_, p), g)| p * g).sum();
                for (&(j, p), g) in weights.iter().zip(&dw) {
                    for (x, y) in dv[j][span.clone()].iter_mut().zip(go) {
                        *x += p * y;
                    }
                    let ds = scale * p * (g - mean);
                    for (x, y) in dq[ai][span.clone()].iter_mut().zip(&lt.k[j][span.clone()]) {
                        *x += ds * y;
                    }
                    for (x, y) in dk[j][span.clone()].iter_mut().zip(&lt.q[ai][span.clone()]) {
                        *x += ds * y;
                    }
                }
            }
        }

        for (ai, &ri) in lt.active.iter().enumerate() {
            let pos = rows[ri].pos;
            rope(&mut dq[ai], pos, hd, cfg.rope_base, true);
            rope(&mut dk[ai], pos, hd, cfg.rope_base, true);
            let a = &lt.a[ai];
            add_outer(&mut gl.wq, a, &dq[ai]);
            add_outer(&mut gl.wk, a, &dk[ai]);
            add_outer(&mut gl.wv, a, &dv[ai]);
            let mut da = vec_mat_t(&dq[ai], &lw.wq);
            add_assign(&mut da, &vec_mat_t(&dk[ai], &lw.wk));
            add_assign(&mut da, &vec_mat_t(&dv[ai], &lw.wv));
            let mut dx = rms_backward(&lt.x_in[ai], lt.inv1[ai], &lw.attn_norm, &da, &mut gl.attn_norm);
            add_assign(&mut dx, &dx_mid[ai]);
            dh[ri] = dx;
        }
    }

    for (r, row) in rows.iter().enumerate() {
        add_assign(grads.embedding.row_mut(row.token), &dh[r]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn seq() -> MaskedSequence {
        let m = [false, false, true, true, false, true, false];
        MaskedSequence::from_mask(&[1, 2, 3, 4, 5, 6, 7], &m, 9).unwrap()
    }

    #[test]
    fn row_graph_layout() {
        let g = build_rows(&seq(), 9);
        // real rows for positions 0, 1, 4, 6; group (1, 2, 3); group (4, 5)
        let pos: Vec<usize> = g.rows.iter().map(|r| r.pos).collect();
        assert_eq!(pos, vec![0, 1, 4, 6, 1, 2, 3, 4, 5]);
        assert_eq!(g.rows[4].visible, vec![0, 4]);
        assert_eq!(g.rows[6].visible, vec![0, 4, 5, 6]);
        assert_eq!(g.rows[8].visible, vec![0, 1, 7, 8]);
        assert_eq!(g.rows[2].visible, vec![0, 1, 2]);
        assert_eq!(g.targets, vec![(4, 3), (5, 4), (6, 5), (7, 6), (8, 7)]);
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let cfg = ModelConfig::tiny(10, 2, 8);
        let mut w = Weights::zeros(&cfg);
        for l in &mut w.layers {
            l.attn_norm.fill(1.0);
            l.mlp_norm.fill(1.0);
        }
        let model = Model::new(cfg, w).unwrap();
        let batch = MaskedBatch {
            sequences: vec![seq()],
        };
        let loss = s3d_loss(&model, SkipSpec::EMPTY, &batch).unwrap();
        assert!((loss - (10.0 as Real).ln()).abs() < 1e-12);
        let empty = MaskedBatch::default();
        assert!(s3d_loss(&model, SkipSpec::EMPTY, &empty).is_err());
    }

    #[test]
    fn frozen_layers_get_zero_gradient() {
        let cfg = ModelConfig::tiny(10, 3, 8);
        let model = Model::init(cfg, 2).unwrap();
        let skip = SkipSpec::new(2, 3, 3).unwrap();
        let batch = MaskedBatch {
            sequences: vec![seq()],
        };
        let (_, g) = s3d_gradients(&model, skip, &batch, Exec::Sequential).unwrap();
        for (info, t) in g.tensors() {
            if info.layer == Some(1) {
                assert!(t.iter().all(|&x| x == 0.0), "{}", info.name);
            }
        }
        assert!(g.layers[0].wq.data().iter().any(|&x| x != 0.0));
    }
}
