mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackformer::data::synth;
use stackformer::harness::{
    average, evaluate, train, Checkpoint, DecodeOptions, Parser, TrainConfig, TrainData, TrainSchedule,
};
use stackformer::model::{Model, ModelConfig};
use stackformer::oracle::ShiftVocab;
use stackformer::plan::variant_specs;
use stackformer::transition::{Action, Sentence, TransitionConfig};
use stackformer::Error;

use common::{corpus, small_config};

fn random_checkpoint(seed: u64) -> Checkpoint {
    let (_, words, actions) = corpus(30, 12, 21);
    let config = small_config(variant_specs('d', 4).unwrap(), words.len(), actions.len());
    Checkpoint {
        model: Model::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(),
        words,
        actions,
        shift_vocab: ShiftVocab::new(vec!["noun0".into()]),
        transitions: TransitionConfig::arc_standard(),
        updates: 7,
        epoch: 2,
        dev_las: Some(51.5),
        provenance: vec![],
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let c = random_checkpoint(1);
    c.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), c);
}

#[test]
fn checkpoint_rejects_other_versions_and_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    random_checkpoint(1).save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["version"] = 99.into();
    std::fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));

    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["tensors"][0]["shape"][0] = 1.into();
    std::fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
}

#[test]
fn averaging_requires_matching_checkpoints() {
    let a = random_checkpoint(1);
    let mut b = random_checkpoint(2);
    b.model.config.dropout = 0.3;
    assert!(matches!(average(&[a.clone(), b], &[]), Err(Error::Incompatible(_))));
    let mut c = random_checkpoint(3);
    c.shift_vocab = ShiftVocab::default();
    assert!(matches!(average(&[a.clone(), c], &[]), Err(Error::Incompatible(_))));
    assert!(matches!(average(&[], &[]), Err(Error::Incompatible(_))));
    let names = vec!["x".to_string(), "y".to_string()];
    let avg = average(&[a.clone(), random_checkpoint(4)], &names).unwrap();
    assert_eq!(avg.provenance, names);
}

#[test]
fn one_word_sentence_decodes_to_root_attachment() {
    let c = random_checkpoint(5);
    let parser = Parser::new(&c);
    let sentence = Sentence::new(["noun3"]).unwrap();
    for beam in [1, 4] {
        let d = parser
            .decode(&sentence, None, DecodeOptions { beam, len_norm: false })
            .unwrap();
        assert_eq!(d.actions.len(), 3);
        assert!(matches!(d.actions[0], Action::Shift(_)));
        assert!(matches!(d.actions[1], Action::RightArc(_)));
        assert_eq!(d.actions[2], Action::End);
        assert_eq!(d.graph.head(1), 0);
    }
}

#[test]
fn beam_never_scores_below_greedy() {
    let c = random_checkpoint(6);
    let parser = Parser::new(&c);
    let (tb, _, _) = corpus(15, 14, 22);
    for e in &tb {
        let greedy = parser.decode(&e.sentence, None, DecodeOptions::default()).unwrap();
        for len_norm in [false, true] {
            let beam = parser
                .decode(&e.sentence, None, DecodeOptions { beam: 5, len_norm })
                .unwrap();
            assert_eq!(beam.graph.len(), e.sentence.len());
            if !len_norm {
                assert!(beam.log_prob >= greedy.log_prob);
            }
        }
    }
}

#[test]
fn parse_keeps_ids_and_scores_gold_perfectly() {
    let c = random_checkpoint(7);
    let (tb, _, _) = corpus(5, 10, 23);
    let pred = Parser::new(&c)
        .parse_treebank(&tb, None, DecodeOptions::default())
        .unwrap();
    assert!(tb
        .iter()
        .zip(&pred)
        .all(|(g, p)| g.id == p.id && g.sentence == p.sentence));
    let s = evaluate(&tb, &tb, true).unwrap();
    assert_eq!((s.uas(), s.las()), (100.0, 100.0));
    let s = evaluate(&tb, &pred, false).unwrap();
    assert!(s.las() <= s.uas());
}

fn tiny_run(dir: Option<&std::path::Path>, seed: u64) -> stackformer::harness::TrainOutcome {
    let train_tb = synth::generate(&synth::SynthConfig {
        sentences: 24,
        seed: 31,
        max_words: 12,
    });
    let dev_tb = synth::generate(&synth::SynthConfig {
        sentences: 6,
        seed: 32,
        max_words: 12,
    });
    let mut model = ModelConfig::desk(variant_specs('c', 4).unwrap(), 0, 0);
    model.d_model = 32;
    model.ffn_dim = 64;
    let schedule = TrainSchedule {
        epochs: 5,
        warmup: 10,
        token_budget: 64,
        seed,
        ..TrainSchedule::desk()
    };
    let mut config = TrainConfig::new(model, schedule);
    config.shift_words = 5;
    config.keep_best = 2;
    let data = TrainData {
        train: &train_tb,
        dev: &dev_tb,
        train_external: None,
        dev_external: None,
    };
    train(&config, data, dir).unwrap()
}

#[test]
fn training_is_reproducible_and_keeps_best_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny_run(Some(dir.path()), 3);
    let b = tiny_run(None, 3);
    let bits = |o: &stackformer::harness::TrainOutcome| o.history.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.best.model, b.best.model);
    assert_ne!(bits(&a), bits(&tiny_run(None, 4)));
    assert!(a.history.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    assert!(a.history[4].loss < a.history[0].loss);

    let log = std::fs::read_to_string(dir.path().join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.lines().all(|l| l.split('\t').count() == 6));
    let kept: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("checkpoint_epoch"))
        .collect();
    assert_eq!(kept.len(), 2);
    let best = Checkpoint::load(a.best_path.as_ref().unwrap()).unwrap();
    assert_eq!(best, a.best);
    let best_las = a.history.iter().map(|r| r.las).fold(f64::MIN, f64::max);
    assert_eq!(best.dev_las, Some(best_las));
    assert_eq!(
        Checkpoint::load(&dir.path().join("checkpoint_last.json")).unwrap(),
        a.last
    );
}
