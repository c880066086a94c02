mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slap_core::model::{AbstractState, Atom, ObjectId, ObjectType};
use slap_core::shortcut::{containment_holds, match_substitution, project, Signature, Substitution};

#[test]
fn projection_ignores_unobserved_objects() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    assert!((0..1000).all(|_| common::projection_invariance_case(&mut rng)));
}

#[test]
fn substitutions_pass_exhaustive_reverification() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut found = 0;
    for i in 0..1000 {
        let (train, eval) = common::random_signature_pair(&mut rng);
        match common::substitution_case(&train, &eval) {
            Ok(hit) => found += hit as usize,
            Err(msg) => panic!("case {i}: {msg}"),
        }
    }
    assert!(found > 100, "only {found} cases had a substitution");
}

#[test]
fn identity_matches_itself_and_distractors_are_ignored() {
    let r = ObjectId::new("robot", ObjectType::Robot);
    let b = ObjectId::new("obstacle0", ObjectType::Block);
    let g = ObjectId::new("region", ObjectType::Region);
    let s_init = AbstractState::from_atoms(vec![Atom::new("Overlap", vec![b.clone(), g.clone()]), Atom::new("GripperEmpty", vec![r])]);
    let s_term = AbstractState::from_atoms(vec![Atom::new("Clear", vec![g])]);
    let sig = Signature::between(&s_init, &s_term);
    let sigma = match_substitution(&sig, &sig).unwrap();
    assert!(sigma.is_identity());
    let d = ObjectId::new("distractor0", ObjectType::Block);
    assert_eq!(sigma.map(&d), d);
}

fn atom_strategy() -> impl Strategy<Value = Atom> {
    let block = (0..3usize).prop_map(|i| ObjectId::new(&format!("b{i}"), ObjectType::Block));
    let robot = Just(ObjectId::new("robot", ObjectType::Robot));
    let region = Just(ObjectId::new("region", ObjectType::Region));
    let table = Just(ObjectId::new("table", ObjectType::Table));
    prop_oneof![
        robot.clone().prop_map(|r| Atom::new("GripperEmpty", vec![r])),
        (robot, block.clone()).prop_map(|(r, b)| Atom::new("Holding", vec![r, b])),
        (block.clone(), table).prop_map(|(b, t)| Atom::new("On", vec![b, t])),
        (block, region.clone()).prop_map(|(b, g)| Atom::new("Overlap", vec![b, g])),
        region.prop_map(|g| Atom::new("Clear", vec![g])),
    ]
}

proptest! {
    #[test]
    fn abstract_states_are_canonical(mut atoms in prop::collection::vec(atom_strategy(), 0..8)) {
        let a = AbstractState::from_atoms(atoms.clone());
        atoms.reverse();
        atoms.extend(atoms.clone());
        let b = AbstractState::from_atoms(atoms);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.atoms().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn signature_embeds_into_itself(init in prop::collection::vec(atom_strategy(), 0..6), term in prop::collection::vec(atom_strategy(), 0..6)) {
        let sig = Signature::between(&AbstractState::from_atoms(init), &AbstractState::from_atoms(term));
        let sigma = match_substitution(&sig, &sig);
        prop_assert!(sigma.is_some());
        prop_assert!(containment_holds(&sigma.unwrap(), &sig, &sig));
        prop_assert!(containment_holds(&Substitution::default(), &sig, &sig));
    }

    #[test]
    fn projection_is_unchanged_by_other_objects(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(common::projection_invariance_case(&mut rng));
    }

    #[test]
    fn projection_length_is_feature_sum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = common::symbolic_objects(3);
        let x = common::random_state(&objects, &mut rng);
        let p = project(&x, &objects[1..4]).unwrap();
        prop_assert_eq!(p.len(), 12);
    }

    #[test]
    fn returned_substitutions_are_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train, eval) = common::random_signature_pair(&mut rng);
        prop_assert!(common::substitution_case(&train, &eval).is_ok());
    }
}
