//! Randomized invariants. proptest picks the seed and shape; the `random`
//! module turns the seed into operators.

use nalgebra::DMatrix;
use proptest::prelude::*;
use qmeasure::dilation::minimal_dilation;
use qmeasure::instrument::{associated_povm, instrument_distance, luders_instrument};
use qmeasure::io::{InstrumentDoc, Manifest, Payload, PovmDoc};
use qmeasure::linalg::CMatrix;
use qmeasure::montecarlo::{run_chain_with, ChainSpec, Execution};
use qmeasure::povm::{refine, relabel};
use qmeasure::random;
use qmeasure::sequential::{compose_sequential, joint_povm, margin_first};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sum_effects(effects: impl Iterator<Item = CMatrix>, dim: usize) -> CMatrix {
    effects.fold(CMatrix::zeros(dim, dim), |acc, e| acc + e)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refine_then_relabel_is_identity(seed: u64, dim in 2usize..=5, outcomes in 1usize..=4) {
        let p = random::povm(&mut rng(seed), dim, outcomes);
        let refined = refine(&p, 1e-10).unwrap();
        prop_assert!(refined.normalization_residual() < 1e-10);
        prop_assert!(refined.biorthogonality_residual() < 1e-9);
        let back = relabel(&refined);
        for (a, b) in p.outcomes().iter().zip(back.outcomes()) {
            prop_assert_eq!(&a.label, &b.label);
            prop_assert!((&a.effect - &b.effect).norm() < 1e-10);
        }
    }

    #[test]
    fn instruments_are_total(seed: u64, dim in 1usize..=4, outcomes in 1usize..=4, rank in 1usize..=3) {
        let inst = random::instrument(&mut rng(seed), dim, outcomes, rank);
        let povm = associated_povm(&inst);
        let total = sum_effects(povm.outcomes().iter().map(|o| o.effect.clone()), dim);
        prop_assert!((total - DMatrix::identity(dim, dim)).norm() < 1e-10);
    }

    #[test]
    fn first_margin_ignores_second_stage(seed: u64, dim in 2usize..=4, n1 in 1usize..=3, n2 in 1usize..=3) {
        let mut r = rng(seed);
        let first = random::instrument(&mut r, dim, n1, 2);
        let second = random::instrument(&mut r, dim, n2, 2);
        let joint = compose_sequential(&first, &second).unwrap();
        let margin = margin_first(&joint);
        let direct = associated_povm(&first);
        for o in direct.outcomes() {
            prop_assert!((margin.effect(&o.label).unwrap() - &o.effect).norm() < 1e-10);
        }
        let total = sum_effects(joint_povm(&joint).outcomes().iter().map(|o| o.effect.clone()), dim);
        prop_assert!((total - DMatrix::identity(dim, dim)).norm() < 1e-10);
    }

    #[test]
    fn minimal_dilation_realizes_instrument(seed: u64, dim in 1usize..=3, outcomes in 1usize..=3, rank in 1usize..=2) {
        let inst = random::instrument(&mut rng(seed), dim, outcomes, rank);
        let model = minimal_dilation(&inst, None).unwrap();
        prop_assert_eq!(model.ancilla_dim(), inst.kraus_ranks().iter().sum::<usize>());
        prop_assert!(instrument_distance(&model.to_instrument(), &inst).unwrap() < 1e-10);
    }

    #[test]
    fn luders_of_random_pvm_reproduces_the_pvm(seed: u64, dim in 1usize..=5) {
        let mut r = rng(seed);
        let outcomes = 1 + (seed as usize % dim);
        let pvm = random::pvm(&mut r, dim, outcomes);
        let povm = associated_povm(&luders_instrument(&pvm));
        for (a, b) in pvm.povm().outcomes().iter().zip(povm.outcomes()) {
            prop_assert!((&a.effect - &b.effect).norm() < 1e-10);
        }
    }

    #[test]
    fn manifests_round_trip_exactly(seed: u64, dim in 1usize..=4, outcomes in 1usize..=3) {
        let mut r = rng(seed);
        let p = random::povm(&mut r, dim, outcomes);
        let text = Manifest::new(Payload::Povm(PovmDoc::from_povm(&p))).to_json();
        let parsed = Manifest::parse(&text).unwrap();
        prop_assert_eq!(parsed.to_json(), text);
        let Payload::Povm(doc) = parsed.payload else { panic!("kind changed") };
        prop_assert_eq!(doc.into_povm(1e-10).unwrap(), p);

        let inst = random::instrument(&mut r, dim, outcomes, 2);
        let text = Manifest::new(Payload::Instrument(InstrumentDoc::from_instrument(&inst))).to_json();
        let Payload::Instrument(doc) = Manifest::parse(&text).unwrap().payload else { panic!("kind changed") };
        // parsing reduces the Kraus lists, so only the maps agree
        prop_assert!(instrument_distance(&doc.into_instrument(1e-10).unwrap(), &inst).unwrap() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampling_depends_only_on_seed(seed: u64, trials in 1usize..400) {
        let mut r = rng(seed);
        let spec = ChainSpec::new(
            random::density(&mut r, 3),
            vec![random::instrument(&mut r, 3, 3, 2), random::instrument(&mut r, 3, 2, 1)],
            trials,
            seed,
        );
        let a = run_chain_with(&spec, Execution::Serial).unwrap();
        let b = run_chain_with(&spec, Execution::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }
}
