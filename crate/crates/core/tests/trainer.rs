use std::collections::BTreeMap;

use colo_core::corpus::{generate_corpus, CorpusConfig, Example, Lexicon, Split, Vocab};
use colo_core::model::{ModelConfig, ParameterSet};
use colo_core::tensor::Tensor;
use colo_core::trainer::{
    adam_update, clip_global_norm, epoch_order, global_norm, load_checkpoint, read_checkpoint, save_checkpoint, train, train_until, write_checkpoint,
    AdamState, StepRecord, TrainConfig, TrainData, TrainState, MAGIC,
};
use colo_core::ColoError;
use proptest::prelude::*;

fn single(name: &str, values: Vec<f32>) -> ParameterSet<f32> {
    let n = values.len();
    ParameterSet::from_map(BTreeMap::from([(name.to_string(), Tensor::new(vec![n], values).unwrap())]))
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = single("x", vec![1.5, -2.0, 0.25]);
    let mut st = AdamState::new(&p);
    for _ in 0..3 {
        adam_update(&mut p, &[vec![0.0; 3]], &mut st, 1e-2).unwrap();
    }
    assert_eq!(p.get("x").unwrap().data(), &[1.5, -2.0, 0.25]);
    assert_eq!(st.step, 3);
}

#[test]
fn first_step_moves_each_coordinate_by_about_the_learning_rate() {
    let g = vec![3.0f32, -0.5, 1e-3, -40.0];
    let mut p = single("x", vec![0.0; 4]);
    let mut st = AdamState::new(&p);
    let lr = 1e-3;
    adam_update(&mut p, std::slice::from_ref(&g), &mut st, lr).unwrap();
    for (x, gi) in p.get("x").unwrap().data().iter().zip(&g) {
        let gi = f64::from(*gi);
        let want = -lr * gi / (gi.abs() + 1e-8);
        assert!((f64::from(*x) - want).abs() < 1e-7, "{x} vs {want}");
    }
}

#[test]
fn adam_finds_the_minimum_of_a_quadratic() {
    // f(x, y) = (x - 1)^2 + 4 (y + 0.5)^2
    let mut p = single("xy", vec![0.0, 0.0]);
    let mut st = AdamState::new(&p);
    for _ in 0..200 {
        let v = p.get("xy").unwrap().data().to_vec();
        let grad = vec![2.0 * (v[0] - 1.0), 8.0 * (v[1] + 0.5)];
        adam_update(&mut p, &[grad], &mut st, 0.1).unwrap();
    }
    let v = p.get("xy").unwrap().data();
    assert!((v[0] - 1.0).abs() < 1e-3 && (v[1] + 0.5).abs() < 1e-3, "{v:?}");
}

#[test]
fn mismatched_gradients_are_rejected() {
    let mut p = single("x", vec![0.0; 2]);
    let mut st = AdamState::new(&p);
    assert!(matches!(adam_update(&mut p, &[vec![0.0; 3]], &mut st, 0.1), Err(ColoError::Dimension { .. })));
}

proptest! {
    #[test]
    fn clipping_bounds_the_global_norm(
        grads in prop::collection::vec(prop::collection::vec(-100.0f32..100.0, 1..20), 1..5),
        max in 0.01f64..10.0,
    ) {
        let mut g = grads.clone();
        let before = clip_global_norm(&mut g, max);
        prop_assert!((before - global_norm(&grads)).abs() < 1e-9);
        prop_assert!(global_norm(&g) <= max + 1e-6);
        if before <= max {
            prop_assert_eq!(g, grads);
        }
    }
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let a = epoch_order(3, 0, 50);
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(3, 0, 50));
    assert_ne!(a, epoch_order(3, 1, 50));
}

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        max_src_len: 48,
        max_tgt_len: 160,
        dropout_rate: 0.1,
        proj_hidden: 16,
    }
}

struct Fixture {
    lex: Lexicon,
    vocab: Vocab,
    examples: Vec<Example>,
}

impl Fixture {
    fn new() -> Self {
        let config = CorpusConfig { n_examples: 60, min_reference_len: 30, max_reference_len: 60, ..CorpusConfig::default() };
        let (lex, examples) = generate_corpus(&config).unwrap();
        let vocab = Vocab::build(&lex);
        Self { lex, vocab, examples }
    }

    fn data(&self) -> TrainData<'_> {
        let pick = |s| self.examples.iter().filter(|e| e.split == s).collect::<Vec<_>>();
        TrainData { lex: &self.lex, vocab: &self.vocab, train: pick(Split::Train), valid: pick(Split::Valid) }
    }
}

fn run(fx: &Fixture, tc: TrainConfig) -> (TrainState, Vec<StepRecord>) {
    let mut log = Vec::new();
    let st = train(tiny(fx.vocab.len()), tc, &fx.data(), &mut |r| {
        log.push(r.clone());
        Ok(())
    })
    .unwrap();
    (st, log)
}

fn short(seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 4, epochs: 1, max_steps: Some(6), seed, learning_rate: 2e-3, ..TrainConfig::default() }
}

#[test]
fn identical_configs_give_identical_runs() {
    let fx = Fixture::new();
    let (a, la) = run(&fx, short(1));
    let (b, lb) = run(&fx, short(1));
    assert_eq!(la, lb);
    assert_eq!(write_checkpoint(&a).unwrap(), write_checkpoint(&b).unwrap());
    let (_, lc) = run(&fx, short(2));
    assert_ne!(la, lc);
    assert_eq!(la.len(), 6);
    for (i, r) in la.iter().enumerate() {
        assert_eq!(r.step, i as u64);
        assert!((r.total - (r.lm + r.ce + r.cd)).abs() < 1e-5 * r.total.abs().max(1.0));
        assert!(r.ce >= 0.0 && r.cd >= 0.0);
    }
}

#[test]
fn lm_only_logs_zero_contrastive_terms() {
    let fx = Fixture::new();
    let (_, log) = run(&fx, TrainConfig { use_ce: false, use_cd: false, ..short(3) });
    assert!(log.iter().all(|r| r.ce == 0.0 && r.cd == 0.0 && r.total == r.lm));
}

#[test]
fn resuming_from_a_checkpoint_is_bitwise_identical() {
    let fx = Fixture::new();
    let data = fx.data();
    let tc = TrainConfig { eval_every: 4, eval_sample: 2, ..short(4) };
    let (full, full_log) = run(&fx, tc.clone());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut st = TrainState::new(tiny(fx.vocab.len()), tc).unwrap();
    let mut log = Vec::new();
    train_until(&mut st, &data, 3, &mut |r| {
        log.push(r.clone());
        Ok(())
    })
    .unwrap();
    save_checkpoint(&path, &st).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!(write_checkpoint(&resumed).unwrap(), write_checkpoint(&st).unwrap());
    train_until(&mut resumed, &data, u64::MAX, &mut |r| {
        log.push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(log, full_log);
    assert!(log.iter().any(|r| r.eval.is_some()));
    assert_eq!(write_checkpoint(&resumed).unwrap(), write_checkpoint(&full).unwrap());
}

#[test]
fn checkpoint_manifest_and_corruption() {
    let fx = Fixture::new();
    let st = TrainState::new(tiny(fx.vocab.len()), short(5)).unwrap();
    let bytes = write_checkpoint(&st).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
    let tensors = header["tensors"].as_array().unwrap();
    assert_eq!(tensors.len(), 3 * st.params.len());
    for t in tensors {
        let numel: u64 = t["shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).product();
        assert_eq!(t["length"].as_u64().unwrap(), numel * 4);
        assert_eq!(t["dtype"], "f32");
    }

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad), Err(ColoError::Checkpoint(_))));
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 99;
    assert!(matches!(read_checkpoint(&wrong_version), Err(ColoError::Checkpoint(_))));
    for cut in [3, 15, 16 + header_len / 2, bytes.len() - 1] {
        assert!(read_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(read_checkpoint(&longer).is_err());
}

#[test]
fn non_finite_parameters_abort_with_the_step() {
    let fx = Fixture::new();
    let data = fx.data();
    let mut st = TrainState::new(tiny(fx.vocab.len()), short(6)).unwrap();
    train_until(&mut st, &data, 2, &mut |_| Ok(())).unwrap();
    st.params.iter_mut().for_each(|(_, t)| t.data_mut().fill(f32::NAN));
    match train_until(&mut st, &data, 3, &mut |_| Ok(())) {
        Err(ColoError::NumericAbort { step, .. }) => assert_eq!(step, 2),
        other => panic!("expected a numeric abort, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for tc in [
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { gamma: -0.1, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { negatives: vec![], ..TrainConfig::default() },
    ] {
        assert!(matches!(tc.validate(), Err(ColoError::Config(_))));
    }
}

#[test]
fn overfitting_one_example_drives_its_loss_down() {
    let fx = Fixture::new();
    let one = vec![&fx.examples[0]];
    let data = TrainData { lex: &fx.lex, vocab: &fx.vocab, train: one.clone(), valid: one };
    let model = ModelConfig { dropout_rate: 0.0, ..tiny(fx.vocab.len()) };
    let tc = TrainConfig { use_ce: false, use_cd: false, batch_size: 1, epochs: 300, learning_rate: 5e-3, ..TrainConfig::default() };
    let mut last = f64::INFINITY;
    train(model, tc, &data, &mut |r| {
        last = r.lm;
        Ok(())
    })
    .unwrap();
    assert!(last < 0.05, "{last}");
}
