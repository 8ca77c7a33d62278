mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackformer::data::make_batches;
use stackformer::oracle::{build_shift_vocab, decorate, is_projective, oracle_actions, strip};
use stackformer::plan::{compute_plan, membership, verify_plan, HeadSpec, HeadTarget};
use stackformer::transition::{recover_graph, Action, ActionVocab, ParserState, TransitionConfig, ROOT};

use common::{random_actions, random_projective_tree, sentence, LABELS};

fn all_specs() -> Vec<HeadSpec> {
    vec![
        HeadSpec::new(HeadTarget::FullStack).with_positions(),
        HeadSpec::new(HeadTarget::FullBuffer),
        HeadSpec::new(HeadTarget::Top2Stack),
        HeadSpec::new(HeadTarget::Top2Buffer).with_positions(),
        HeadSpec::FREE,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oracle_recovers_projective_trees(seed in any::<u64>(), n in 1usize..=14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gold = random_projective_tree(&mut rng, n, &LABELS);
        prop_assert!(is_projective(&gold));
        let s = sentence(n);
        let actions = oracle_actions(&s, &gold).unwrap();
        prop_assert_eq!(actions.len(), 2 * n + 1);
        prop_assert_eq!(recover_graph(&s, &actions).unwrap(), gold);
    }

    #[test]
    fn decoration_is_invisible_after_strip(seed in any::<u64>(), n in 1usize..=12, k in 0usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gold = random_projective_tree(&mut rng, n, &LABELS);
        let s = sentence(n);
        let vocab = build_shift_vocab([&s], k);
        let plain = oracle_actions(&s, &gold).unwrap();
        let decorated = decorate(&plain, &s, &vocab).unwrap();
        let decorated_shifts = decorated.iter().filter(|a| a.decoration().is_some()).count();
        prop_assert_eq!(decorated_shifts, k.min(n));
        prop_assert_eq!(strip(&decorated), plain);
    }

    #[test]
    fn states_stay_well_formed(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = random_actions(&mut rng, n, TransitionConfig::all(), 40);
        let mut state = ParserState::new(n).unwrap();
        for a in &actions {
            state = state.apply(a).unwrap();
            prop_assert_eq!(state.stack()[0], ROOT);
            let on_stack: HashSet<_> = state.stack().iter().copied().collect();
            prop_assert_eq!(on_stack.len(), state.stack().len());
            prop_assert!(state.buffer().iter().all(|w| !on_stack.contains(w) && *w != ROOT));
            let arcs = state.arcs();
            let deps: HashSet<_> = arcs.iter().map(|a| a.1).collect();
            prop_assert_eq!(deps.len(), arcs.len());
        }
        prop_assert!(state.is_terminal());
    }

    #[test]
    fn valid_actions_are_exactly_the_applicable_ones(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = random_actions(&mut rng, n, TransitionConfig::all(), 30);
        let vocab = ActionVocab::from_actions(
            [Action::shift(), Action::Reduce, Action::Swap]
                .into_iter()
                .chain(LABELS.iter().flat_map(|l| [Action::LeftArc(l.to_string()), Action::RightArc(l.to_string())])),
        );
        for config in [TransitionConfig::arc_standard(), TransitionConfig::all()] {
            let mut state = ParserState::new(n).unwrap();
            for a in &actions {
                let valid = config.valid_actions(&state, &vocab);
                for id in 0..vocab.len() {
                    let action = vocab.action(id);
                    let applies = state.apply(action).is_ok()
                        && action.effect().is_none_or(|e| config.enables(e));
                    prop_assert_eq!(valid.contains(&id), applies, "{} in {:?}", action, state);
                }
                prop_assert!(!valid.is_empty());
                state = state.apply(a).unwrap();
            }
        }
    }

    #[test]
    fn plans_match_membership_and_verify(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = random_actions(&mut rng, n, TransitionConfig::all(), 30);
        let specs = all_specs();
        let plan = compute_plan(n, &actions, &specs).unwrap();
        prop_assert!(verify_plan(&plan, n, &actions, &specs).is_ok());
        let mut state = ParserState::new(n).unwrap();
        for (t, a) in actions.iter().enumerate() {
            for (h, spec) in specs.iter().enumerate() {
                match plan.mask(t, h) {
                    None => prop_assert!(!spec.is_specialized()),
                    Some(mask) => {
                        let members = membership(&state, spec.target);
                        prop_assert!(mask.permitted[n]);
                        prop_assert_eq!(mask.depth[n], None);
                        for w in 1..=n {
                            let depth = members.iter().position(|&m| m == w);
                            prop_assert_eq!(mask.permitted[w - 1], depth.is_some());
                            prop_assert_eq!(mask.depth[w - 1], depth);
                        }
                    }
                }
            }
            state = state.apply(a).unwrap();
        }
    }

    #[test]
    fn batches_cover_examples_within_budget(lens in proptest::collection::vec(1usize..30, 1..40), budget in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let examples: Vec<_> = lens
            .iter()
            .map(|&n| {
                let actions = random_actions(&mut rng, n, TransitionConfig::arc_standard(), 0);
                stackformer::model::Example {
                    word_ids: vec![3; n],
                    action_ids: vec![0; actions.len()],
                    plan: std::sync::Arc::new(compute_plan(n, &actions, &[]).unwrap()),
                    external: None,
                }
            })
            .collect();
        let batches = make_batches(&examples, budget);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.members.clone()).collect();
        seen.sort();
        prop_assert_eq!(seen, (0..examples.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(b.tokens() <= budget || b.members.len() == 1);
            for (r, &i) in b.members.iter().enumerate() {
                prop_assert_eq!(b.word_lens[r], examples[i].n_words());
                prop_assert!(b.word_ids.row(r).iter().skip(b.word_lens[r]).all(|&w| w == 0));
            }
        }
    }
}
