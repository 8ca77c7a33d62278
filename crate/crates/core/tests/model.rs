mod common;

use std::sync::Arc;

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackformer::model::{CrossPath, Example, Model};
use stackformer::plan::{compute_plan, step_masks, HeadSpec, HeadTarget};
use stackformer::transition::{ActionVocab, ParserState};

use common::{corpus, examples, small_config};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn stack_buffer() -> Vec<HeadSpec> {
    vec![
        HeadSpec::new(HeadTarget::FullStack).with_positions(),
        HeadSpec::new(HeadTarget::FullBuffer),
        HeadSpec::FREE,
        HeadSpec::FREE,
    ]
}

#[test]
fn encoder_rows_and_position_sensitivity() {
    let (_, words, actions) = corpus(20, 12, 3);
    let model: Model<f32> = Model::new(small_config(stack_buffer(), words.len(), actions.len()), &mut rng(1)).unwrap();
    let ids = [5, 9, 7, 11];
    let h = model.encode(&ids, None);
    assert_eq!(h.dim(), (5, 32));
    assert!(h.iter().all(|v| v.is_finite()));
    assert_eq!(h, model.encode(&ids, None));
    let swapped = model.encode(&[9, 5, 7, 11], None);
    assert_ne!(h.row(0), swapped.row(1));
}

#[test]
fn teacher_forced_rows_are_distributions() {
    let (tb, words, actions) = corpus(10, 14, 4);
    let specs = stack_buffer();
    let model: Model<f32> = Model::new(small_config(specs.clone(), words.len(), actions.len()), &mut rng(2)).unwrap();
    for ex in examples(&tb, &words, &actions, &specs) {
        let probs = model.distributions(&ex, CrossPath::Planned);
        assert_eq!(probs.dim(), (ex.action_ids.len(), actions.len()));
        for row in probs.rows() {
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
        }
    }
}

#[test]
fn step_distribution_ignores_future_actions() {
    let (tb, words, actions) = corpus(30, 12, 5);
    let specs = stack_buffer();
    let model: Model<f64> = Model::new(small_config(specs.clone(), words.len(), actions.len()), &mut rng(3)).unwrap();
    let ex = examples(&tb, &words, &actions, &specs)
        .into_iter()
        .find(|e| e.n_words() >= 5)
        .unwrap();
    let gold = actions.decode(&ex.action_ids);
    // keep the first k actions, then finish with SHIFTs and RIGHT-ARCs
    let k = 4;
    let mut state = ParserState::replay(ex.n_words(), &gold[..k]).unwrap();
    let mut alt = gold[..k].to_vec();
    let ra = actions
        .actions()
        .iter()
        .find(|a| matches!(a, stackformer::transition::Action::RightArc(_)))
        .unwrap()
        .clone();
    while !state.is_terminal() {
        let a = if state.buffer().is_empty() {
            ra.clone()
        } else {
            stackformer::transition::Action::shift()
        };
        state = state.apply(&a).unwrap();
        alt.push(a);
    }
    alt.push(stackformer::transition::Action::End);
    assert_ne!(alt, gold);
    let other = Example {
        action_ids: actions.encode(&alt).unwrap(),
        plan: Arc::new(compute_plan(ex.n_words(), &alt, &specs).unwrap()),
        ..ex.clone()
    };
    let p = model.distributions(&ex, CrossPath::Planned);
    let q = model.distributions(&other, CrossPath::Planned);
    // row t sees actions before t only, so rows up to the first difference agree
    let first = (0..alt.len()).find(|&i| alt[i] != gold[i]).unwrap();
    assert!(first >= k);
    for t in 0..=first {
        assert_eq!(p.row(t), q.row(t), "row {t}");
    }
    assert_ne!(p.row(first + 1), q.row(first + 1));
}

#[test]
fn incremental_decoding_matches_teacher_forcing() {
    let (tb, words, actions) = corpus(8, 12, 6);
    let specs = stack_buffer();
    let model: Model<f64> = Model::new(small_config(specs.clone(), words.len(), actions.len()), &mut rng(4)).unwrap();
    for ex in examples(&tb, &words, &actions, &specs) {
        let probs = model.distributions(&ex, CrossPath::Planned);
        let encoded = model.prepare(&ex.word_ids, None);
        let mut cache = model.empty_cache();
        let mut state = ParserState::new(ex.n_words()).unwrap();
        let mut input = actions.end_id();
        for (t, &a) in ex.action_ids.iter().enumerate() {
            let logp = model.step(&encoded, &mut cache, input, &step_masks(&state, &specs));
            for (j, &lp) in logp.iter().enumerate() {
                assert!((lp.exp() - probs[[t, j]]).abs() < 1e-12);
            }
            state = state.apply(actions.action(a)).unwrap();
            input = a;
        }
    }
}

#[test]
fn sentinel_only_mask_puts_all_weight_on_sentinel() {
    let (tb, words, actions) = corpus(5, 10, 7);
    let specs = vec![HeadSpec::new(HeadTarget::FullBuffer), HeadSpec::FREE];
    let model: Model<f64> = Model::new(small_config(specs.clone(), words.len(), actions.len()), &mut rng(5)).unwrap();
    let mut ex = examples(&tb, &words, &actions, &specs).remove(0);
    let mut plan = (*ex.plan).clone();
    for t in 0..plan.len() {
        let mask = plan.mask_mut(t, 0).unwrap();
        let sentinel = mask.sentinel();
        for (r, p) in mask.permitted.iter_mut().enumerate() {
            *p = r == sentinel;
        }
    }
    ex.plan = Arc::new(plan);
    for layer in model.cross_weights(&ex) {
        for row in layer[0].axis_iter(Axis(0)) {
            assert_eq!(row[row.len() - 1], 1.0);
            assert!(row.iter().take(row.len() - 1).all(|&w| w == 0.0));
        }
    }
}

#[test]
fn uniform_output_gives_log_vocab_loss() {
    let (tb, words, actions) = corpus(6, 10, 8);
    let specs = stack_buffer();
    for eps in [0.0, 0.01, 0.3] {
        let mut config = small_config(specs.clone(), words.len(), actions.len());
        config.label_smoothing = eps;
        let mut model: Model<f64> = Model::new(config, &mut rng(6)).unwrap();
        model.params.output.w.fill(0.0);
        model.params.output.b.fill(0.0);
        let exs = examples(&tb, &words, &actions, &specs);
        let refs: Vec<&Example> = exs.iter().collect();
        let loss = model.evaluate(&refs, CrossPath::Planned).mean();
        assert!((loss - (actions.len() as f64).ln()).abs() < 1e-12, "eps {eps}: {loss}");
    }
}

#[test]
fn smoothed_loss_mixes_gold_and_non_gold_cross_entropy() {
    let (tb, words, actions) = corpus(6, 10, 9);
    let specs = stack_buffer();
    let eps = 0.01;
    let model: Model<f64> = Model::new(small_config(specs.clone(), words.len(), actions.len()), &mut rng(7)).unwrap();
    let exs = examples(&tb, &words, &actions, &specs);
    let v = actions.len() as f64;
    let mut expected = 0.0;
    let mut tokens = 0;
    for ex in &exs {
        let probs = model.distributions(ex, CrossPath::Planned);
        for (row, &gold) in probs.rows().into_iter().zip(&ex.action_ids) {
            let gold_ce = -row[gold].ln();
            let others: f64 = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != gold)
                .map(|(_, p)| -p.ln())
                .sum();
            expected += (1.0 - eps) * gold_ce + eps * others / (v - 1.0);
            tokens += 1;
        }
    }
    let refs: Vec<&Example> = exs.iter().collect();
    let stats = model.evaluate(&refs, CrossPath::Planned);
    assert_eq!(stats.tokens, tokens);
    assert!((stats.mean() - expected / tokens as f64).abs() < 1e-10);
}

#[test]
fn depth_rows_never_reached_get_no_gradient() {
    let (tb, words, actions) = corpus(6, 10, 10);
    let specs = stack_buffer();
    let model: Model<f64> = Model::new(small_config(specs.clone(), words.len(), actions.len()), &mut rng(8)).unwrap();
    let exs = examples(&tb, &words, &actions, &specs);
    let refs: Vec<&Example> = exs.iter().collect();
    let (_, grad) = model.loss_and_grad::<ChaCha8Rng>(&refs, CrossPath::Planned, None);
    assert!(grad.buffer_depth.is_none(), "buffer head has no positions");
    let table = grad.stack_depth.unwrap();
    let deepest = exs.iter().map(|e| e.n_words()).max().unwrap();
    assert!(table.row(0).iter().any(|&g| g != 0.0));
    for r in deepest..table.nrows() {
        assert!(table.row(r).iter().all(|&g| g == 0.0), "row {r}");
    }
    // the plain path never reads the table
    let (_, grad) = model.loss_and_grad::<ChaCha8Rng>(&refs, CrossPath::Vanilla, None);
    assert!(grad.stack_depth.unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn row_excluded_everywhere_gets_no_gradient() {
    let (tb, words, actions) = corpus(10, 10, 11);
    let specs = vec![
        HeadSpec::new(HeadTarget::FullStack).with_positions(),
        HeadSpec::new(HeadTarget::FullBuffer).with_positions(),
    ];
    let model: Model<f64> = Model::new(small_config(specs.clone(), words.len(), actions.len()), &mut rng(9)).unwrap();
    let mut ex = examples(&tb, &words, &actions, &specs)
        .into_iter()
        .find(|e| e.n_words() >= 4)
        .unwrap();
    let hidden = 2;
    let mut plan = (*ex.plan).clone();
    for t in 0..plan.len() {
        for h in 0..specs.len() {
            plan.mask_mut(t, h).unwrap().permitted[hidden] = false;
        }
    }
    let full = model.encoder_output_grad(&ex, CrossPath::Planned);
    assert!(full.row(hidden).iter().any(|&g| g != 0.0));
    ex.plan = Arc::new(plan);
    let masked = model.encoder_output_grad(&ex, CrossPath::Planned);
    assert!(masked.row(hidden).iter().all(|&g| g == 0.0));
    assert!(masked.row(hidden + 1).iter().any(|&g| g != 0.0));
}

#[test]
fn free_only_config_matches_plain_path_bitwise() {
    let (tb, words, actions) = corpus(12, 12, 12);
    let specs = vec![HeadSpec::FREE; 4];
    let mut config = small_config(specs.clone(), words.len(), actions.len());
    config.dropout = 0.1;
    let model: Model<f32> = Model::new(config, &mut rng(10)).unwrap();
    let exs = examples(&tb, &words, &actions, &specs);
    let refs: Vec<&Example> = exs.iter().collect();
    let (a, ga) = model.loss_and_grad(&refs, CrossPath::Planned, Some(&mut rng(11)));
    let (b, gb) = model.loss_and_grad(&refs, CrossPath::Vanilla, Some(&mut rng(11)));
    assert_eq!(a.loss_sum.to_bits(), b.loss_sum.to_bits());
    assert_eq!(ga, gb);
}

#[test]
fn parameter_casts_round_trip() {
    let (_, words, actions) = corpus(4, 8, 13);
    let model: Model<f32> = Model::new(small_config(stack_buffer(), words.len(), actions.len()), &mut rng(12)).unwrap();
    let wide = model.params.cast::<f64>();
    assert_eq!(wide.cast::<f32>(), model.params);
    assert_eq!(wide.count(), model.params.count());
    let vocab = ActionVocab::from_actions(vec![]);
    assert_eq!(vocab.len(), 1);
}
