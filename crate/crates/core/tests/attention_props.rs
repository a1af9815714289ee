mod common;

use heatfuzz::attention::{
    accuracy, build_dataset, encode_input, extract_heatmap, finite_difference_check, train, DatasetOptions,
    EncodedSample, ModelParams, ModelShape, TrainConfig, PAD,
};
use heatfuzz::mutation::{apply_mutation, Mutation, MutatorId, TokenDictionary};
use heatfuzz::target::demo_target;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(rng: &mut ChaCha8Rng, n: usize) -> EncodedSample {
    let len = rng.gen_range(1..=n);
    let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
    let m = Mutation::new(MutatorId::ALL[rng.gen_range(0..7)], 0, rng.gen_range(0..2));
    encode_input(&bytes, &m, 4, rng.gen_range(0..2), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_is_a_distribution(gen in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(gen);
        let p = ModelParams::<f64>::init(ModelShape::new(12, 4, 6), &mut rng);
        let s = random_sample(&mut rng, 12);
        let (logits, alpha) = p.forward(&s);
        prop_assert!(logits.iter().all(|x| x.is_finite()));
        prop_assert!(alpha.iter().all(|&a| a >= 0.0));
        prop_assert!(alpha[s.valid_len..].iter().all(|&a| a == 0.0));
        let sum: f64 = alpha.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        for &a in &alpha {
            prop_assert!((a / sum - a).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_model_attends_uniformly() {
    let p = ModelParams::<f64>::zeros(ModelShape::new(10, 4, 4));
    let s = encode_input(&[1, 2, 3, 4], &Mutation::new(MutatorId::RandomByte, 0, 9), 0, 0, 10);
    let (_, alpha) = p.forward(&s);
    for (i, a) in alpha.iter().enumerate() {
        assert_eq!(*a, if i < 4 { 0.25 } else { 0.0 });
    }
}

#[test]
fn gradients_over_twenty_draws_and_two_epsilons() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = ModelParams::<f64>::init(ModelShape::new(8, 4, 4), &mut rng);
        let s = random_sample(&mut rng, 8);
        let e4 = finite_difference_check(&p, &s, 1e-4, 200, &mut ChaCha8Rng::seed_from_u64(1));
        let e5 = finite_difference_check(&p, &s, 1e-5, 200, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(e5 < 1e-4, "{e5}");
        assert!(e5 <= e4 || e4 < 1e-4, "{e4} -> {e5}");
    }
}

#[test]
fn zero_loss_point_is_stationary() {
    let shape = ModelShape::new(6, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = ModelParams::<f64>::init(shape, &mut rng);
    let (_, off, len, _) = shape.tensors().into_iter().find(|t| t.0 == "classifier").unwrap();
    p.data[off..off + len].iter_mut().for_each(|w| *w = 0.0);
    let (_, boff, _, _) = shape.tensors().into_iter().find(|t| t.0 == "classifier.bias").unwrap();
    p.data[boff] = -30.0;
    p.data[boff + 1] = 30.0;
    let s = encode_input(&[1, 2, 3], &Mutation::new(MutatorId::ByteFlip, 0, 0), 0, 1, 6);
    let (loss, grad) = p.loss_and_grad(&s);
    assert!(loss < 1e-20);
    let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "{norm}");
}

#[test]
fn separable_toy_set() {
    // Bytes come from small palettes so every token the holdout sees also
    // appears in training; a lookup embedding cannot score unseen bytes.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<EncodedSample> = (0..500)
        .map(|_| {
            let mut bytes: Vec<u8> = (0..6).map(|_| rng.gen_range(0..4u8) * 64).collect();
            bytes[0] = rng.gen_range(0..32u8) * 8 + 4;
            let label = (bytes[0] > 127) as u8;
            encode_input(&bytes, &Mutation::new(MutatorId::RandomByte, 0, bytes[0] as u32), 0, label, 6)
        })
        .collect();
    let (p, m) = train::<f64>(&data, 6, &TrainConfig { seed: 2, ..TrainConfig::default() }).unwrap();
    assert!(m.holdout_acc >= 0.95, "{}", m.holdout_acc);
    assert!(p.is_finite());
    assert_eq!(m.loss_curve.len(), 60);
}

#[test]
fn training_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<EncodedSample> = (0..64).map(|_| random_sample(&mut rng, 8)).collect();
    let cfg = TrainConfig { epochs: 5, seed: 9, ..TrainConfig::default() };
    let (a, ma) = train::<f64>(&data, 8, &cfg).unwrap();
    let (b, mb) = train::<f64>(&data, 8, &cfg).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(ma, mb);
    let (_, mf) = train::<f32>(&data, 8, &cfg).unwrap();
    assert!((mf.train_acc - ma.train_acc).abs() <= 0.25);
}

#[test]
fn motivating_labels_follow_the_branch_predicate() {
    let p = demo_target("motivating").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let w = common::motivating_warmup(&p, 1, 20_000, 3, dir.path());
    let l6 = p.id_of("L6").unwrap();
    let dict = TokenDictionary::empty();
    let mut checked = 0;
    for r in &w.records {
        let Some(m) = r.mutation() else { continue };
        let input = apply_mutation(&w.seeds[&r.parent_seed], &m, &dict).unwrap();
        assert_eq!(r.covered_blocks.contains(l6), common::reaches_l6(&input));
        assert_eq!(p.execute(&input, 100).visits(l6), r.covered_blocks.contains(l6));
        checked += 1;
    }
    assert!(checked > 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (ds, n) = build_dataset(&w.records, &w.seeds, l6, &dict, DatasetOptions::default(), &mut rng).unwrap();
    let pos = ds.iter().filter(|s| s.label == 1).count();
    assert_eq!(2 * pos, ds.len());
    for s in &ds {
        let bytes: Vec<u8> = s.x.iter().take_while(|&&t| t != PAD).map(|&t| t as u8).collect();
        assert_eq!(s.label == 1, common::reaches_l6(&bytes));
    }
    let params = ModelParams::<f64>::init(ModelShape::new(n, 4, 4), &mut rng);
    let h = extract_heatmap(&params, 0, MutatorId::ArithMinus, &ds[..50]).unwrap();
    assert!((h.sum() - 1.0).abs() < 1e-6);
    let one = extract_heatmap(&params, 0, MutatorId::ArithMinus, &ds[..1]).unwrap();
    assert_eq!(one.heat, params.forward(&ds[0]).1);
    assert!((0.0..=1.0).contains(&accuracy(&params, &ds)));
}
