use lobpredict_core::labeling::Label;
use lobpredict_core::nn::{
    argmax, read_model, softmax_cross_entropy, softmax_rows, train, write_model, ArchitectureSpec, LayerSpec,
    Model, NnError, Preset, PresetWidths, Tensor, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_widths() -> PresetWidths {
    PresetWidths {
        conv: 4,
        inception: 4,
        lstm: 6,
        dropout: 0.2,
    }
}

fn random_windows(n: usize, t: usize, w: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..t * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn presets_build_and_emit_probabilities() {
    for (preset, width) in [
        (Preset::DeeplobFull, 40),
        (Preset::Level1, 4),
        (Preset::Slim, 2),
        (Preset::Slim, 3),
    ] {
        let spec = ArchitectureSpec::preset(preset, 100, width, small_widths());
        let model = Model::build(spec, 3).unwrap();
        let windows = random_windows(3, 100, width, 1);
        let data = windows.concat();
        let probs = model.forward(&Tensor::new(vec![3, 100, width], data)).unwrap();
        for row in probs.data().chunks(3) {
            assert!(row.iter().all(|p| *p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn same_seed_same_parameters() {
    let spec = ArchitectureSpec::preset(Preset::Level1, 100, 4, small_widths());
    let a = Model::build(spec.clone(), 11).unwrap();
    let b = Model::build(spec.clone(), 11).unwrap();
    let c = Model::build(spec, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let w = random_windows(1, 100, 4, 2).remove(0);
    assert_eq!(a.predict(&w).unwrap(), b.predict(&w).unwrap());
}

#[test]
fn wrong_width_is_rejected() {
    let spec = ArchitectureSpec::preset(Preset::Level1, 100, 4, small_widths());
    let model = Model::build(spec, 0).unwrap();
    let err = model.forward(&Tensor::zeros(vec![2, 100, 3])).unwrap_err();
    assert!(matches!(err, NnError::ShapeMismatch { layer: 0, .. }));
}

#[test]
fn non_finite_input_reports_first_layer() {
    let spec = ArchitectureSpec::preset(Preset::Slim, 10, 2, small_widths());
    let model = Model::build(spec, 0).unwrap();
    let mut x = Tensor::zeros(vec![1, 10, 2]);
    x.data_mut()[3] = f64::NAN;
    assert!(matches!(
        model.forward(&x),
        Err(NnError::NonFiniteActivation { layer: 0 })
    ));
}

#[test]
fn eval_mode_ignores_dropout_rate() {
    let with = ArchitectureSpec::preset(Preset::Slim, 20, 2, small_widths());
    let without = ArchitectureSpec::preset(
        Preset::Slim,
        20,
        2,
        PresetWidths {
            dropout: 0.0,
            ..small_widths()
        },
    );
    let a = Model::build(with, 5).unwrap();
    let b = Model::build(without, 5).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    let w = random_windows(4, 20, 2, 9);
    let refs: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
    assert_eq!(a.predict_proba(&refs).unwrap(), b.predict_proba(&refs).unwrap());
}

#[test]
fn loss_fixtures() {
    let (loss, grad) = softmax_cross_entropy(&[0.0, 0.0, 0.0], &[Label::Stable]);
    assert!((loss - 3f64.ln()).abs() < 1e-15);
    assert!((grad[2] + 2.0 / 3.0).abs() < 1e-15);
    let (loss, _) = softmax_cross_entropy(&[800.0, 0.0, 0.0], &[Label::Up]);
    assert_eq!(loss, 0.0);
}

#[test]
fn argmax_fixtures() {
    assert_eq!(argmax(&[0.2, 0.5, 0.3]), Label::Down);
    let third = 1.0 / 3.0;
    assert_eq!(argmax(&[third, third, third]), Label::Up);
    assert_eq!(argmax(&[0.1, 0.45, 0.45]), Label::Down);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(logits in proptest::collection::vec(-30.0f64..30.0, 3..60)) {
        let n = logits.len() / 3 * 3;
        let probs = softmax_rows(&logits[..n], 3);
        for row in probs.chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
        }
    }
}

/// Column 0 carries one sign across the window; column 1 is noise.
fn separable(n: usize, seed: u64) -> Vec<(Vec<f64>, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    random_windows(n, 20, 2, seed)
        .into_iter()
        .map(|mut w| {
            let up = rng.gen_bool(0.5);
            for v in w.iter_mut().step_by(2) {
                *v = if up { v.abs() } else { -v.abs() };
            }
            (w, if up { Label::Up } else { Label::Down })
        })
        .collect()
}

#[test]
fn separable_toy_is_learned() {
    let data = separable(256, 4);
    let spec = ArchitectureSpec::preset(Preset::Slim, 20, 2, small_widths());
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 32,
        learning_rate: 5e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let trained = train(Model::build(spec, 1).unwrap(), &data, &cfg).unwrap();
    let refs: Vec<&[f64]> = data.iter().map(|(w, _)| w.as_slice()).collect();
    let preds = trained.model.predict_batch(&refs).unwrap();
    let acc = preds.iter().zip(&data).filter(|(p, (_, l))| *p == l).count() as f64 / data.len() as f64;
    assert!(acc >= 0.95, "train accuracy {acc}");
    assert!(trained.epoch_losses.last() < trained.epoch_losses.first());
}

#[test]
fn training_is_reproducible() {
    let data = separable(64, 8);
    let spec = ArchitectureSpec::preset(Preset::Slim, 20, 2, small_widths());
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(Model::build(spec.clone(), 2).unwrap(), &data, &cfg).unwrap();
    let b = train(Model::build(spec, 2).unwrap(), &data, &cfg).unwrap();
    assert_eq!(a.epoch_losses, b.epoch_losses);
    assert_eq!(a.model, b.model);
}

#[test]
fn invalid_configs_are_rejected() {
    let spec = ArchitectureSpec::preset(Preset::Slim, 20, 2, small_widths());
    let model = Model::build(spec, 0).unwrap();
    let data = separable(4, 1);
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(
            train(model.clone(), &data, &cfg),
            Err(NnError::InvalidConfig(_))
        ));
    }
    let empty: Vec<(Vec<f64>, Label)> = Vec::new();
    assert!(matches!(
        train(model, &empty, &TrainConfig::default()),
        Err(NnError::NoSamples)
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let spec = ArchitectureSpec::preset(Preset::Level1, 100, 4, small_widths());
    let mut model = Model::build(spec, 77).unwrap();
    model.parameters_mut()[0].data_mut()[0] = f64::MIN_POSITIVE;
    let mut buf = Vec::new();
    write_model(&mut buf, &model).unwrap();
    let back = read_model(buf.as_slice()).unwrap();
    assert_eq!(back, model);
    for (a, b) in back.parameters().iter().zip(model.parameters()) {
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    buf[0] = b'X';
    assert!(matches!(read_model(buf.as_slice()), Err(NnError::Checkpoint(_))));
}

#[test]
fn checkpoint_rejects_mismatched_tensors() {
    let spec = ArchitectureSpec {
        name: "small".into(),
        input_time: 3,
        input_width: 2,
        layers: vec![LayerSpec::Lstm { units: 2 }, LayerSpec::Dense { units: 3 }],
    };
    let model = Model::build(spec, 1).unwrap();
    let mut buf = Vec::new();
    write_model(&mut buf, &model).unwrap();
    // Truncation anywhere must fail cleanly.
    for cut in [5, 20, buf.len() - 1] {
        assert!(read_model(&buf[..cut]).is_err());
    }
}
