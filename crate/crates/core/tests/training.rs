use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxalign::data::{assemble_epoch, generate_synthetic, Dataset, SyntheticSpec};
use voxalign::training::{self, batch_gradients, batch_items, dims_for, Checkpoint, TrainConfig};
use voxalign::{Dtype, Error, Model};

fn dataset(dir: &std::path::Path) -> Dataset<f64> {
    let spec = SyntheticSpec {
        train_videos: 12,
        test_videos: 2,
        verbs: 4,
        nouns: 4,
        fillers: 3,
        slow_channels: 6,
        fast_channels: 5,
        t_slow: 2,
        t_fast: 4,
        height: 4,
        width: 4,
        seed: 21,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, dir).unwrap();
    Dataset::load(&dir.join("train")).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        embed_dim: 8,
        word_dim: 6,
        batch_size: 4,
        epochs: 6,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

fn first_batch_gradients(data: &Dataset<f64>, config: &TrainConfig) -> (Model<f64>, Vec<voxalign::Tensor<f64>>) {
    let model = Model::<f64>::init(dims_for(config, data).unwrap(), config.seed);
    let per_video: Vec<Vec<usize>> = data.videos.iter().map(|v| v.captions.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batches = assemble_epoch(&per_video, config.batch_size, &mut rng).unwrap();
    let items = batch_items(data, &batches[0], &data.negative_sampler(), &mut rng).unwrap();
    let (_, grads) = batch_gradients(&model, &items, &config.loss_config()).unwrap();
    (model, grads)
}

#[test]
fn zero_alignment_weights_leave_the_token_encoder_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let base = TrainConfig {
        lambda_m: 0.0,
        lambda_s: 0.0,
        ..small_config()
    };
    let (model, grads) = first_batch_gradients(&data, &base);
    for (name, g) in model.names().iter().zip(&grads) {
        let norm = g.norm();
        if name.starts_with("token.") {
            assert_eq!(norm, 0.0, "{name} received a gradient");
        } else {
            assert!(norm > 0.0, "{name} received no gradient");
        }
    }
    let (model, grads) = first_batch_gradients(&data, &small_config());
    for (name, g) in model.names().iter().zip(&grads) {
        assert!(g.norm() > 0.0, "{name} received no gradient under the full objective");
    }
}

#[test]
fn epoch_log_totals_combine_the_terms() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let config = TrainConfig {
        lambda_m: 0.5,
        lambda_s: 2.0,
        ..small_config()
    };
    let mut seen = Vec::new();
    let outcome = training::train_with(&data, &config, |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, (1..=config.epochs).collect::<Vec<_>>());
    assert_eq!(outcome.log.len(), config.epochs);
    for e in &outcome.log {
        let want = e.l_joint + 0.5 * e.l_mot + 2.0 * e.l_vis;
        assert!((e.l_total - want).abs() < 1e-12, "{e}");
    }
    let (first, last) = (outcome.log[0].l_total, outcome.log[config.epochs - 1].l_total);
    assert!(last < first, "loss went from {first} to {last}");
    let line = outcome.log[0].to_string();
    assert!(line.starts_with("epoch=1 l_joint="));
    assert!(line.contains(" l_mot=") && line.contains(" l_vis=") && line.contains(" l_total="));
}

#[test]
fn training_is_deterministic_and_seed_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let config = TrainConfig {
        epochs: 2,
        ..small_config()
    };
    let a = training::train(&data, &config).unwrap().checkpoint.to_bytes();
    let b = training::train(&data, &config).unwrap().checkpoint.to_bytes();
    assert_eq!(a, b);
    let other = TrainConfig { seed: 2, ..config };
    assert_ne!(a, training::train(&data, &other).unwrap().checkpoint.to_bytes());
}

#[test]
fn checkpoints_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let config = TrainConfig {
        epochs: 1,
        ..small_config()
    };
    let ck = training::train(&data, &config).unwrap().checkpoint;
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.model, ck.model);
    assert_eq!(back.config, ck.config);
    assert_eq!(back.vocab, data.vocab);
    assert_eq!(back.epoch, 1);

    let narrow = TrainConfig {
        dtype: Dtype::F32,
        ..config
    };
    let ck32 = training::train(&data, &narrow).unwrap().checkpoint;
    let bytes = ck32.to_bytes();
    assert!(bytes.len() < ck.to_bytes().len());
    let reloaded = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(reloaded.to_bytes(), bytes);
    for (a, b) in reloaded.model.params().iter().zip(ck32.model.params()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let tiny_batch = TrainConfig {
        batch_size: 1,
        ..small_config()
    };
    assert!(matches!(
        training::train(&data, &tiny_batch),
        Err(Error::InvalidConfig(_))
    ));
    let wrong_vocab = TrainConfig {
        vocab: data.vocab.len() + 1,
        ..small_config()
    };
    assert!(matches!(
        training::train(&data, &wrong_vocab),
        Err(Error::InvalidConfig(_))
    ));
    assert!(TrainConfig::parse("beta_train=0").is_err());
    assert!(TrainConfig::parse("embed_dim=4").is_err());
}
