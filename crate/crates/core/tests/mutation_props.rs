use heatfuzz::mutation::{
    apply_mutation, deterministic_schedule, havoc_step, random_mutation, schedule_len, Mutation, MutatorId,
    TokenDictionary,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dict() -> TokenDictionary {
    TokenDictionary::new(vec![b"\xff\xff".to_vec(), b"GIF8".to_vec(), b"x".to_vec()]).unwrap()
}

proptest! {
    #[test]
    fn length_and_locality(seed in prop::collection::vec(any::<u8>(), 1..32), gen in any::<u64>()) {
        let d = dict();
        let mut rng = ChaCha8Rng::seed_from_u64(gen);
        let m = random_mutation(seed.len(), &d, &mut rng);
        let out = apply_mutation(&seed, &m, &d).unwrap();
        prop_assert_eq!(out.len(), seed.len());
        let fp = m.position..m.position + m.footprint(&d);
        for i in 0..seed.len() {
            if !fp.contains(&i) {
                prop_assert_eq!(out[i], seed[i]);
            }
        }
    }

    #[test]
    fn involutions(seed in prop::collection::vec(any::<u8>(), 1..16), pos in any::<prop::sample::Index>(), bit in 0u32..8, delta in 1u32..=35) {
        let d = TokenDictionary::empty();
        let p = pos.index(seed.len());
        let twice = |m: Mutation| apply_mutation(&apply_mutation(&seed, &m, &d).unwrap(), &m, &d).unwrap();
        prop_assert_eq!(&twice(Mutation::new(MutatorId::ByteFlip, p, 0)), &seed);
        prop_assert_eq!(&twice(Mutation::new(MutatorId::BitFlip1, p, bit)), &seed);
        let up = apply_mutation(&seed, &Mutation::new(MutatorId::ArithPlus, p, delta), &d).unwrap();
        let back = apply_mutation(&up, &Mutation::new(MutatorId::ArithMinus, p, delta), &d).unwrap();
        prop_assert_eq!(&back, &seed);
    }

    #[test]
    fn schedule_is_total(seed in prop::collection::vec(any::<u8>(), 0..6)) {
        let d = dict();
        let all: Vec<Mutation> = deterministic_schedule(&seed, &d).collect();
        prop_assert_eq!(all.len(), schedule_len(seed.len(), &d));
        for m in &all {
            prop_assert_eq!(apply_mutation(&seed, m, &d).unwrap().len(), seed.len());
        }
        let again: Vec<Mutation> = deterministic_schedule(&seed, &d).collect();
        prop_assert_eq!(all, again);
    }

    #[test]
    fn havoc_preserves_length(seed in prop::collection::vec(any::<u8>(), 1..64), gen in any::<u64>()) {
        let (out, muts) = havoc_step(&seed, &mut ChaCha8Rng::seed_from_u64(gen), &dict());
        prop_assert_eq!(out.len(), seed.len());
        prop_assert!((1..=8).contains(&muts.len()));
    }
}

#[test]
fn documented_examples() {
    let d = TokenDictionary::empty();
    assert_eq!(apply_mutation(&[0, 5], &Mutation::new(MutatorId::ArithPlus, 0, 5), &d).unwrap(), vec![5, 5]);
    assert_eq!(apply_mutation(&[0], &Mutation::new(MutatorId::BitFlip1, 0, 0), &d).unwrap(), vec![1]);
    assert_eq!(apply_mutation(&[0xff], &Mutation::new(MutatorId::ArithPlus, 0, 1), &d).unwrap(), vec![0]);
    assert_eq!(deterministic_schedule(&[7], &d).count(), 344);
    assert_eq!(deterministic_schedule(&[], &d).count(), 0);
}

#[test]
fn seeded_havoc_is_reproducible_and_reaches_every_byte() {
    let d = TokenDictionary::empty();
    let seed = [0u8; 16];
    let a = havoc_step(&seed, &mut ChaCha8Rng::seed_from_u64(42), &d);
    let b = havoc_step(&seed, &mut ChaCha8Rng::seed_from_u64(42), &d);
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut hit = [false; 16];
    for _ in 0..10_000 {
        for m in havoc_step(&seed, &mut rng, &d).1 {
            hit[m.position] = true;
        }
    }
    assert!(hit.iter().all(|&h| h));
}

#[test]
fn dictionary_overflow_is_an_error() {
    let d = dict();
    assert!(apply_mutation(&[0; 3], &Mutation::new(MutatorId::DictionaryReplace, 0, 1), &d).is_err());
    assert!(apply_mutation(&[0; 3], &Mutation::new(MutatorId::ArithPlus, 0, 36), &d).is_err());
    assert!(apply_mutation(&[0; 3], &Mutation::new(MutatorId::RandomByte, 3, 0), &d).is_err());
}
