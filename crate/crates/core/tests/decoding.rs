mod common;

use common::{full_logits, softmax};
use proptest::prelude::*;
use s3d::model::SkipSpec;
use s3d::specdec::{
    baseline_decode, decode, BranchSpec, DecodeMode, DecodeOptions, DecodeStatus, StopCondition,
};

fn options(skip: SkipSpec, gamma: usize, branch: BranchSpec, n: usize) -> DecodeOptions {
    DecodeOptions {
        skip,
        gamma,
        branch,
        mode: DecodeMode::Greedy,
        stop: StopCondition::max_tokens(n),
        seed: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn greedy_decode_is_lossless(
        seed in 0u64..10_000,
        prompt in proptest::collection::vec(0usize..63, 1..10),
        skip_idx in 0usize..4,
        gamma in 1usize..6,
        b1 in 1usize..4,
        b2 in 1usize..3,
        std in prop_oneof![Just(0.02), Just(0.3)],
    ) {
        let m = common::model(64, 8, 32, seed, std);
        let skip = SkipSpec::symmetric_middle(8)[skip_idx];
        let branch = BranchSpec { branching: vec![b1, b2], max_nodes: 8 };
        let opts = options(skip, gamma, branch, 20);
        let out = decode(&m, &prompt, &opts).unwrap();
        let (base, status) =
            baseline_decode(&m, &prompt, DecodeMode::Greedy, opts.stop, 0).unwrap();
        prop_assert_eq!(&out.tokens, &base);
        prop_assert_eq!(out.status, status);
        prop_assert_eq!(out.record.emitted(), out.tokens.len());
    }

    #[test]
    fn every_iteration_emits_between_one_and_gamma_plus_one(
        seed in 0u64..10_000,
        gamma in 1usize..5,
    ) {
        let m = common::model(64, 4, 32, seed, 0.02);
        let skip = SkipSpec::new(2, 4, 4).unwrap();
        let out = decode(&m, &[1, 2, 3], &DecodeOptions::greedy_chain(skip, gamma, 30)).unwrap();
        for r in &out.record.iterations {
            prop_assert!(r.accepted <= r.drafted && r.emitted <= r.accepted + 1 && r.emitted >= 1);
        }
    }
}

#[test]
fn stop_conditions_agree_with_baseline() {
    let m = common::model(64, 4, 32, 3, 0.3);
    let skip = SkipSpec::new(2, 4, 4).unwrap();
    let prompt = [5, 6, 7];
    let (free, _) =
        baseline_decode(&m, &prompt, DecodeMode::Greedy, StopCondition::max_tokens(12), 0).unwrap();
    let end = free[6];
    let stop = StopCondition { max_new_tokens: 12, end_token: Some(end) };
    let mut opts = options(skip, 4, BranchSpec::default(), 12);
    opts.stop = stop;
    let out = decode(&m, &prompt, &opts).unwrap();
    let (base, status) = baseline_decode(&m, &prompt, DecodeMode::Greedy, stop, 0).unwrap();
    assert_eq!(out.tokens, base);
    assert_eq!(out.status, DecodeStatus::EndToken);
    assert_eq!(status, DecodeStatus::EndToken);
    assert_eq!(*out.tokens.last().unwrap(), end);

    let long = options(skip, 4, BranchSpec::default(), 1000);
    let out = decode(&m, &prompt, &long).unwrap();
    assert_eq!(out.status, DecodeStatus::ContextFull);
    assert_eq!(out.tokens.len() + prompt.len(), m.config().max_seq_len);
}

#[test]
fn telemetry_jsonl_counts_tokens() {
    let m = common::model(64, 4, 32, 8, 0.02);
    let out = decode(&m, &[1, 2], &DecodeOptions::greedy_chain(SkipSpec::EMPTY, 1, 11)).unwrap();
    let mut buf = Vec::new();
    out.record.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), out.record.iterations.len() + 1);
    let emitted: u64 = lines[..lines.len() - 1].iter().map(|l| l["emitted"].as_u64().unwrap()).sum();
    assert_eq!(emitted as usize, out.tokens.len());
    let summary = &lines.last().unwrap()["summary"];
    assert_eq!(summary["per_depth"][0]["rate"].as_f64(), Some(1.0));
}

/// Two-token continuations sampled by speculative decoding follow the
/// target model's own joint law.
#[test]
fn sampled_pairs_follow_the_target_law() {
    let mut cfg = s3d::ModelConfig::tiny(4, 2, 8);
    cfg.init_std = 0.8;
    cfg.max_seq_len = 16;
    let m = s3d::Model::init(cfg, 21).unwrap();
    let prompt = [1, 2];
    let first = softmax(full_logits(&m, &prompt).last().unwrap());
    let mut law = vec![0.0; 16];
    for a in 0..4 {
        let second = softmax(full_logits(&m, &[1, 2, a]).last().unwrap());
        for b in 0..4 {
            law[a * 4 + b] = first[a] * second[b];
        }
    }
    let trials = 40_000;
    let mut counts = vec![0usize; 16];
    for seed in 0..trials {
        let opts = DecodeOptions {
            skip: SkipSpec::new(2, 3, 2).unwrap(),
            gamma: 2,
            branch: BranchSpec::chain(2),
            mode: DecodeMode::Sampling,
            stop: StopCondition::max_tokens(2),
            seed,
        };
        let out = decode(&m, &prompt, &opts).unwrap();
        counts[out.tokens[0] * 4 + out.tokens[1]] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let p = law[i];
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        let dev = (c as f64 - trials as f64 * p).abs();
        assert!(dev <= 4.0 * sd + 1.0, "pair {i}: {c} vs expected {:.1}", trials as f64 * p);
    }
}

#[test]
fn rejects_invalid_requests() {
    let m = common::model(64, 4, 32, 1, 0.02);
    let ok = DecodeOptions::greedy_chain(SkipSpec::EMPTY, 2, 4);
    assert!(decode(&m, &[], &ok).is_err());
    assert!(decode(&m, &[64], &ok).is_err());
    let mut bad = ok.clone();
    bad.gamma = 0;
    assert!(decode(&m, &[1], &bad).is_err());
    let mut tree_sampling = options(SkipSpec::EMPTY, 2, BranchSpec::default(), 4);
    tree_sampling.mode = DecodeMode::Sampling;
    assert!(decode(&m, &[1], &tree_sampling).is_err());
}
