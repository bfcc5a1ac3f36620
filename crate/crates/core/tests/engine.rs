mod common;

use bnfi::engine::{accuracy, initialize, toy_architecture, train, Dataset, Mode, Model, Split, SyntheticDatasetCfg, TrainCfg};
use bnfi::ir::Shape;

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..3 {
        let errors = common::gradient_relative_errors(&common::gradient_check_net(seed), 5, 1e-3, seed);
        assert_eq!(errors.len(), 10);
        for (t, e) in errors.iter().enumerate() {
            assert!(*e <= 1e-3, "seed {seed} tensor {t}: relative error {e}");
        }
    }
}

#[test]
fn residual_depthwise_and_kinked_gradients() {
    // small step keeps ReLU and max-pool perturbations on one side of their kinks
    let mut checked = 0;
    for seed in 0..40 {
        let net = common::random_net(seed);
        let awkward = net.nodes.iter().any(|n| n.as_conv().is_some_and(|c| c.weights.iter().any(|w| w.abs() > 1e30 || (*w != 0.0 && w.abs() < 1e-30))));
        if awkward {
            continue;
        }
        for (t, e) in common::gradient_relative_errors(&net, 4, 1e-4, seed).iter().enumerate() {
            assert!(*e <= 1e-3, "net {seed} tensor {t}: relative error {e}");
        }
        checked += 1;
        if checked == 8 {
            break;
        }
    }
    assert_eq!(checked, 8);
}

#[test]
fn train_mode_batch_norm_standardizes() {
    let net = common::gradient_check_net(7);
    let model = Model::from_ir(&net).unwrap();
    let x = common::random_batch(model.input_shape(), 16, 3);
    let xhat = model.probe_normalized(&x, Mode::Train, 1).unwrap();
    let per_channel = 6 * 6;
    for c in 0..3 {
        let vals: Vec<f64> = (0..16).flat_map(|n| {
            let start = (n * 3 + c) * per_channel;
            xhat[start..start + per_channel].to_vec()
        }).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() <= 1e-5, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() <= 1e-4, "channel {c} variance {var}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = SyntheticDatasetCfg { samples_per_class: 8, ..Default::default() }.generate(Split::Train);
    let net = initialize(&toy_architecture([3, 8, 8], [4, 6], 4), 1).unwrap();
    let cfg = TrainCfg { epochs: 2, learning_rate: 0.0, ..Default::default() };
    let out = train(&net, &data, &cfg).unwrap().net;
    let before = Model::from_ir(&net).unwrap();
    let after = Model::from_ir(&out).unwrap();
    assert_eq!(before.parameters(), after.parameters());
    // running statistics still move
    assert_ne!(net.nodes[1], out.nodes[1]);
}

#[test]
fn training_is_deterministic_and_learns() {
    let data_cfg = SyntheticDatasetCfg::default();
    let data = data_cfg.generate(Split::Train);
    let val = data_cfg.generate(Split::Validation);
    let net = initialize(&toy_architecture([3, 8, 8], [8, 16], 4), 2).unwrap();
    let cfg = TrainCfg { epochs: 12, seed: 2, ..Default::default() };
    let a = train(&net, &data, &cfg).unwrap();
    let b = train(&net, &data, &cfg).unwrap();
    assert_eq!(a.net, b.net);
    assert!(a.history.last().unwrap().loss < a.history[0].loss);
    assert!(accuracy(&a.net, &data).unwrap() >= 0.9);
    assert!(accuracy(&a.net, &val).unwrap() >= 0.7);
}

#[test]
fn dataset_shape_mismatch_is_rejected() {
    let data = Dataset::new(vec![1, 2, 2], 2, vec![0.0; 8], vec![0, 1]).unwrap();
    let net = initialize(&toy_architecture([3, 8, 8], [2, 2], 2), 0).unwrap();
    assert!(train(&net, &data, &TrainCfg::default()).is_err());
    assert_eq!(data.shape(), Some(Shape::Spatial { c: 1, h: 2, w: 2 }));
}
