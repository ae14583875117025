use std::collections::HashMap;

use s3d::exec::Exec;
use s3d::model::{load_model, save_model, Model, ModelConfig, Precision, SkipSpec};
use s3d::train::{
    adamw_step, gen_corpus, mask_sequence, s3d_gradients, sample_masks, train, AdamState, AdamW,
    SynthCorpus, TrainConfig, Trainer,
};

fn config() -> ModelConfig {
    let mut cfg = ModelConfig::tiny(32, 4, 16);
    cfg.max_seq_len = 32;
    cfg
}

#[test]
fn corpus_transitions_converge_to_the_table() {
    let corpus = SynthCorpus::new(16, 15, 4).unwrap();
    let stream = corpus.sample(400_000, 4);
    let mut counts: HashMap<(usize, usize), HashMap<usize, usize>> = HashMap::new();
    for w in stream.windows(3) {
        *counts.entry((w[0], w[1])).or_default().entry(w[2]).or_default() += 1;
    }
    let mut checked = 0;
    for ((a, b), next) in &counts {
        let n: usize = next.values().sum();
        if n < 2000 {
            continue;
        }
        let table = corpus.successors(*a, *b);
        let mut tv = 0.0;
        for t in 0..16 {
            let want = table.iter().find(|s| s.0 == t).map_or(0.0, |s| s.1);
            let got = *next.get(&t).unwrap_or(&0) as f64 / n as f64;
            tv += (want - got).abs() / 2.0;
        }
        assert!(tv < 0.05, "pair ({a}, {b}): total variation {tv}");
        checked += 1;
    }
    assert!(checked > 20);
    assert!(stream.iter().all(|&t| t != 15));
}

#[test]
fn mask_frequency_matches_rate() {
    let tokens: Vec<usize> = (0..1001).map(|i| i % 7).collect();
    let rate = 0.15;
    let mut masked = 0;
    let mut total = 0;
    for seed in 0..200 {
        let s = mask_sequence(&tokens, rate, 31, seed).unwrap();
        assert!(!s.masked[0]);
        masked += s.masked.iter().filter(|&&m| m).count();
        total += tokens.len() - 1;
    }
    let sd = (total as f64 * rate * (1.0 - rate)).sqrt();
    assert!((masked as f64 - total as f64 * rate).abs() < 4.0 * sd);
}

#[test]
fn frozen_layers_stay_bit_identical() {
    let cfg = config();
    let mut model = Model::init(cfg.clone(), 3).unwrap();
    let skip = SkipSpec::new(2, 4, 4).unwrap();
    let stream = gen_corpus(32, 31, 3, 4000).unwrap();
    let before = model.weights().clone();
    let mut weights = model.weights().clone();
    let mut state = AdamState::new(&weights);
    for step in 0..100 {
        let seqs: Vec<Vec<usize>> = (0..4)
            .map(|i| stream[(step * 4 + i) * 9..(step * 4 + i) * 9 + 16].to_vec())
            .collect();
        let batch = sample_masks(&seqs, 0.3, 31, step as u64).unwrap();
        if batch.targets() == 0 {
            continue;
        }
        let (_, g) = s3d_gradients(&model, skip, &batch, Exec::Parallel).unwrap();
        adamw_step(&mut weights, &g, &mut state, skip, 1e-2, &AdamW::default()).unwrap();
        model = Model::new(cfg.clone(), weights.clone()).unwrap();
    }
    let mut moved = 0;
    for ((info, a), (_, b)) in before.tensors().into_iter().zip(model.weights().tensors()) {
        if info.layer.is_some_and(|l| skip.skips(l)) {
            assert_eq!(a, b, "{} changed", info.name);
        } else if a != b {
            moved += 1;
        }
    }
    assert!(moved > 10);
}

#[test]
fn training_is_deterministic_and_exec_independent() {
    let model = Model::init(config(), 5).unwrap();
    let stream = gen_corpus(32, 31, 5, 5000).unwrap();
    let tc = TrainConfig {
        steps: 20,
        seq_len: 16,
        skip: SkipSpec::new(2, 3, 4).unwrap(),
        ..TrainConfig::default()
    };
    let a = train(model.clone(), &stream, tc.clone(), Exec::Sequential).unwrap();
    let b = train(model, &stream, tc, Exec::Parallel).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.model, b.model);
}

#[test]
fn checkpoint_files_resume_training() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::init(config(), 6).unwrap();
    let stream = gen_corpus(32, 31, 6, 5000).unwrap();
    let tc = TrainConfig {
        steps: 12,
        seq_len: 16,
        skip: SkipSpec::new(2, 4, 4).unwrap(),
        ..TrainConfig::default()
    };
    let straight = train(model.clone(), &stream, tc.clone(), Exec::Parallel).unwrap();
    let mut t = Trainer::new(model, TrainConfig { steps: 5, ..tc.clone() }).unwrap();
    t.run(&stream, Exec::Parallel, |_| Ok(())).unwrap();
    t.save_checkpoint(dir.path()).unwrap();
    let mut resumed = Trainer::load_checkpoint(dir.path(), Some(12)).unwrap();
    resumed.run(&stream, Exec::Parallel, |_| Ok(())).unwrap();
    assert_eq!(resumed.losses(), straight.losses.as_slice());
    assert_eq!(resumed.model(), &straight.model);
}

#[test]
fn weight_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::init(config(), 7).unwrap();
    let path = dir.path().join("m.s3dw");
    save_model(&path, &model, Precision::F64).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
    std::fs::write(&path, b"S3DW\x01").unwrap();
    assert!(load_model(&path).is_err());
}
