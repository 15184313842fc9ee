use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pia::alignment::GROUP_SIZE;
use pia::extractors::{Label, VisemeCrop, CROP_LEN, EMBEDDING_DIM};
use pia::harness::{ablation_config, evaluate, load_dataset, train, TrainConfig};
use pia::model::{read_checkpoint, write_checkpoint, GroupInput, ModelConfig, Network, Streams, VideoInput};
use pia::synthgen::{generate_dataset, DatasetOptions};

fn small() -> ModelConfig {
    ModelConfig {
        d: 16,
        heads: 2,
        channels: [2, 2, 4, 4],
        geometry_hidden: 8,
        identity_hidden: 8,
        head_hidden: 8,
        ..ModelConfig::default()
    }
}

fn video(rng: &mut ChaCha8Rng, n: usize) -> VideoInput {
    let groups = (0..n)
        .map(|_| {
            let crops: Vec<VisemeCrop> = (0..GROUP_SIZE)
                .map(|i| VisemeCrop::new(i, (0..CROP_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
                .collect();
            GroupInput {
                symbol: "o".into(),
                geometry: (0..GROUP_SIZE * 4).map(|_| rng.gen()).collect(),
                identity: (0..GROUP_SIZE * EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                visual: GroupInput::visual_from_crops(&crops).unwrap(),
            }
        })
        .collect();
    VideoInput {
        video_id: "x".into(),
        label: Label::Real,
        category: "real".into(),
        groups,
        mask: vec![true; n],
        consistency_embeddings: vec![],
        consistency_mask: vec![],
    }
}

#[test]
fn pooled_score_ignores_group_order_and_masked_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Network::<f64>::new(&small(), 4).unwrap();
    let v = video(&mut rng, 4);
    let base = net.score(&v).unwrap().probability;

    let mut reversed = v.clone();
    reversed.groups.reverse();
    assert!((net.score(&reversed).unwrap().probability - base).abs() < 1e-12);

    let mut padded = v.clone();
    padded.groups.push(video(&mut rng, 1).groups.remove(0));
    padded.mask.push(false);
    assert!((net.score(&padded).unwrap().probability - base).abs() < 1e-12);

    let mut all_masked = v;
    all_masked.mask = vec![false; 4];
    assert_eq!(net.score(&all_masked).unwrap_err().kind(), "EmptySequence");
}

#[test]
fn untrained_model_is_near_even_odds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Network::<f64>::new(&ModelConfig::default(), 0).unwrap();
    let p = net.score(&video(&mut rng, 3)).unwrap().probability;
    assert!((p - 0.5).abs() < 0.1, "{p}");
}

#[test]
fn removing_a_stream_removes_its_parameters() {
    let tc = TrainConfig::default();
    let full = Network::<f32>::new(&small(), 0).unwrap().trainable_parameter_count();
    for name in ["w/o_vi", "w/o_geom", "w/o_arc", "w/o_EB0"] {
        let (m, t) = ablation_config(name, &small(), &tc).unwrap();
        let n = Network::<f32>::new(&m, 0).unwrap().trainable_parameter_count();
        assert!(n < full, "{name}: {n} >= {full}");
        assert_eq!(t.lambda == 0.0, name == "w/o_arc");
    }
    let (m, _) = ablation_config("w_ph", &small(), &tc).unwrap();
    assert!(Network::<f32>::new(&m, 0).unwrap().trainable_parameter_count() > full);
    let none = ModelConfig {
        streams: Streams {
            geometry: false,
            viseme: false,
            identity: false,
        },
        ..small()
    };
    assert_eq!(Network::<f32>::new(&none, 0).unwrap_err().kind(), "InvalidConfig");
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let opts = DatasetOptions {
        vocab_runs: 4,
        ..DatasetOptions::default()
    };
    let paths = generate_dataset(10, 10, 3, dir.path(), &opts).unwrap();
    let data = load_dataset(&paths.train, false).unwrap();
    let (model, _) = ablation_config("w/o_vi", &ModelConfig::default(), &TrainConfig::default()).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 4,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let a = train(&model, &data, &tc).unwrap();
    let b = train(&model, &data, &tc).unwrap();
    assert_eq!(a.history, b.history);

    let steps_per_epoch = a.history.len() / tc.epochs;
    let mean = |s: &[pia::harness::StepLoss]| s.iter().map(|l| l.ce).sum::<f64>() / s.len() as f64;
    let first = mean(&a.history[..steps_per_epoch]);
    let last = mean(&a.history[a.history.len() - steps_per_epoch..]);
    assert!(last < first - 0.05, "cross-entropy {first:.3} -> {last:.3}");
    assert!(a.history.iter().all(|s| (s.total - (s.ce + tc.lambda * s.arcface)).abs() < 1e-9));

    let ckpt = dir.path().join("model.ckpt");
    write_checkpoint(&ckpt, &a.network).unwrap();
    let back = read_checkpoint::<f32>(&ckpt).unwrap();
    let test = load_dataset(&paths.test, false).unwrap();
    assert_eq!(evaluate(&back, &test).unwrap(), evaluate(&a.network, &test).unwrap());
}
