use s3d::exec::Exec;
use s3d::kernels::finite_difference_gradient;
use s3d::model::{Model, ModelConfig, SkipSpec, Weights};
use s3d::train::{s3d_gradients, s3d_loss, sample_masks, MaskedBatch};

fn with_params(model: &Model, theta: &[f64]) -> Model {
    let mut w: Weights = model.weights().clone();
    let mut it = theta.iter();
    for (_, t) in w.tensors_mut() {
        for x in t.iter_mut() {
            *x = *it.next().unwrap();
        }
    }
    Model::new(model.config().clone(), w).unwrap()
}

fn flat(w: &Weights) -> Vec<f64> {
    w.tensors().into_iter().flat_map(|(_, t)| t.to_vec()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn batch(vocab: usize, mask: usize, seed: u64) -> MaskedBatch {
    let seqs: Vec<Vec<usize>> = (0..2)
        .map(|s| (0..10).map(|i| (i * 7 + s * 3 + seed as usize) % (vocab - 1)).collect())
        .collect();
    let mut b = sample_masks(&seqs, 0.35, mask, seed).unwrap();
    if b.targets() == 0 {
        b = sample_masks(&seqs, 0.6, mask, seed + 100).unwrap();
    }
    b
}

/// Max over tensors of ‖analytic − numeric‖ / ‖numeric‖ for trainable
/// tensors; asserts exact zeros for frozen ones.
fn check(cfg: ModelConfig, skip: SkipSpec, seed: u64) -> f64 {
    let model = Model::init(cfg.clone(), seed).unwrap();
    let b = batch(cfg.vocab_size, cfg.mask_token_id, seed);
    let (loss, grads) = s3d_gradients(&model, skip, &b, Exec::Sequential).unwrap();
    assert!((loss - s3d_loss(&model, skip, &b).unwrap()).abs() < 1e-12);
    let theta = flat(model.weights());
    let numeric = finite_difference_gradient(
        |t| s3d_loss(&with_params(&model, t), skip, &b).unwrap(),
        &theta,
        1e-5,
    )
    .unwrap();
    let mut offset = 0;
    let mut worst: f64 = 0.0;
    for (info, g) in grads.tensors() {
        let n = &numeric[offset..offset + g.len()];
        offset += g.len();
        if info.layer.is_some_and(|l| skip.skips(l)) {
            assert!(g.iter().all(|&x| x == 0.0), "{} not frozen", info.name);
            continue;
        }
        let diff: Vec<f64> = g.iter().zip(n).map(|(a, b)| a - b).collect();
        let scale = norm(n).max(1e-12);
        let rel = norm(&diff) / scale;
        assert!(rel <= 1e-4, "seed {seed} tensor {}: relative error {rel:e}", info.name);
        worst = worst.max(rel);
    }
    worst
}

fn small(tied: bool) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(32, 2, 16);
    cfg.max_seq_len = 16;
    cfg.init_std = 0.3;
    cfg.tie_embeddings = tied;
    cfg
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let skip = SkipSpec::new(2, 3, 2).unwrap();
    for seed in [1, 2, 3] {
        let worst = check(small(false), skip, seed);
        println!("seed {seed}: worst relative error {worst:.2e}");
    }
}

#[test]
fn gradients_without_skip_and_with_tied_head() {
    check(small(false), SkipSpec::EMPTY, 4);
    check(small(true), SkipSpec::new(1, 2, 2).unwrap(), 5);
}

#[test]
fn duplicated_batch_has_same_gradient() {
    let cfg = small(false);
    let model = Model::init(cfg.clone(), 8).unwrap();
    let skip = SkipSpec::new(2, 3, 2).unwrap();
    let b = batch(32, 31, 8);
    let mut doubled = b.clone();
    doubled.sequences.extend(b.sequences.clone());
    let (_, g1) = s3d_gradients(&model, skip, &b, Exec::Sequential).unwrap();
    let (_, g2) = s3d_gradients(&model, skip, &doubled, Exec::Parallel).unwrap();
    for (a, b) in flat(&g1).iter().zip(flat(&g2)) {
        assert!((a - b).abs() <= 1e-12);
    }
}
