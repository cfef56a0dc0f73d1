mod common;

use spkver::corpus::FeatureMatrix;
use spkver::neuralnet::{predict, train, Activation, LabeledUtterance, MlpArchitecture, TrainConfig};

#[test]
fn gradients_match_central_differences() {
    for seed in 0..30 {
        let err = common::gradient_check(seed, 1e-5);
        assert!(err < 1e-4, "net {seed}: relative error {err}");
    }
}

/// Three well separated 2-D blobs, 8 utterances of 10 frames per class.
fn blobs(seed: u64) -> Vec<LabeledUtterance> {
    let mut r = common::rng(seed);
    let centres = [[3.0, 0.0], [-3.0, 1.0], [0.0, -3.0]];
    let mut out = Vec::new();
    for (class, c) in centres.iter().enumerate() {
        for _ in 0..8 {
            let rows: Vec<[f64; 2]> = (0..10)
                .map(|_| [c[0] + 0.5 * common::normal(&mut r), c[1] + 0.5 * common::normal(&mut r)])
                .collect();
            out.push(LabeledUtterance {
                inputs: FeatureMatrix::from_rows(&rows).unwrap(),
                class,
            });
        }
    }
    out
}

#[test]
fn training_separates_blobs_and_follows_the_schedule() {
    let data = blobs(1);
    let arch = MlpArchitecture {
        input_dim: 2,
        hidden_dims: vec![12, 12],
        output_dim: 3,
        activation: Activation::RectifiedLinear,
    };
    let config = TrainConfig {
        initial_lr: 0.01,
        max_epochs: 15,
        minibatch_size: 16,
        cv_fraction: 0.25,
        seed: 5,
        ..Default::default()
    };
    let (params, report) = train(&data, &arch, &config).unwrap();
    let mut lr = config.initial_lr;
    for e in &report.epochs {
        assert!(e.learning_rate == lr || e.learning_rate == lr / 2.0);
        lr = e.learning_rate;
        let k = (config.initial_lr / lr).log2();
        assert!((k - k.round()).abs() < 1e-12);
    }
    let mut correct = 0;
    let mut total = 0;
    for u in &data {
        let pred = predict(&params, &u.inputs.to_columns()).unwrap();
        correct += pred.iter().filter(|&&p| p == u.class).count();
        total += pred.len();
    }
    assert!(correct as f64 / total as f64 > 0.95, "{correct}/{total}");

    let (again, report2) = train(&data, &arch, &config).unwrap();
    assert_eq!(again, params);
    assert_eq!(report2, report);
}

#[test]
fn constant_inputs_halve_down_to_the_floor() {
    let data: Vec<LabeledUtterance> = (0..8)
        .map(|i| LabeledUtterance {
            inputs: FeatureMatrix::filled(5, 3, 1.0).unwrap(),
            class: i % 2,
        })
        .collect();
    let arch = MlpArchitecture {
        input_dim: 3,
        hidden_dims: vec![4],
        output_dim: 2,
        activation: Activation::HyperbolicTangent,
    };
    let config = TrainConfig {
        initial_lr: 0.008,
        lr_floor: 1e-4,
        max_epochs: 100,
        minibatch_size: 4,
        cv_fraction: 0.5,
        ..Default::default()
    };
    let (_, report) = train(&data, &arch, &config).unwrap();
    assert_eq!(report.stop, spkver::neuralnet::StopReason::LrFloor);
    let last = report.epochs.last().unwrap().learning_rate;
    assert!(last / 2.0 < config.lr_floor);
}
