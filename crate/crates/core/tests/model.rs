use cuboidcast::model::{Model, ModelConfig};
use cuboidcast::patterns::Template;
use cuboidcast::selfcheck::gradcheck_model_config;
use cuboidcast_tensor::{load_checkpoint, restore_params, save_checkpoint, Tape, Tensor};
use serde_json::json;

fn small() -> ModelConfig {
    gradcheck_model_config()
}

fn input(cfg: &ModelConfig, batch: usize, salt: usize) -> Tensor<f32> {
    Tensor::from_fn([batch, cfg.input_len, cfg.height, cfg.width, cfg.in_channels], |i| ((i * 31 + salt * 7) % 23) as f32 / 22.0)
}

#[test]
fn output_shape_across_configurations() {
    let base = small();
    let variants = [
        base.clone(),
        ModelConfig { globals: 0, ..base.clone() },
        ModelConfig { pattern: Template::VideoSwin { p: 2, m: 2 }, ..base.clone() },
        ModelConfig { pattern: Template::AxialSpaceDilate { m: 2 }, globals: 1, ..base.clone() },
        ModelConfig { input_len: 3, target_len: 1, ..base.clone() },
        ModelConfig { channels: vec![4], depth: vec![2], ..base.clone() },
        ModelConfig { height: 16, width: 8, ..base.clone() },
        ModelConfig { in_channels: 2, out_channels: 3, ..base.clone() },
    ];
    for cfg in variants {
        let m = Model::build(&cfg, 0).unwrap_or_else(|e| panic!("{cfg:?}: {e}"));
        let y = m.predict(&input(&cfg, 2, 0)).unwrap();
        assert_eq!(y.shape(), &[2, cfg.target_len, cfg.height, cfg.width, cfg.out_channels], "{cfg:?}");
        assert!(y.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn samples_do_not_leak_across_the_batch() {
    let cfg = small();
    let m = Model::build(&cfg, 1).unwrap();
    let params = m.params.cast::<f64>();
    let run = |x: Tensor<f64>| {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        m.forward(&p, tape.constant(x)).unwrap().value().as_ref().clone()
    };
    let (a, b) = (input(&cfg, 1, 0).cast::<f64>(), input(&cfg, 1, 5).cast::<f64>());
    let both = run(Tensor::stack_rows(&[&a, &b]).unwrap());
    let (ya, yb) = (run(a), run(b));
    let half = ya.data().len();
    for (x, y) in both.data()[..half].iter().zip(ya.data()).chain(both.data()[half..].iter().zip(yb.data())) {
        assert!((x - y).abs() < 1e-10, "{x} vs {y}");
    }
}

#[test]
fn construction_is_seeded() {
    let cfg = small();
    let (a, b, c) = (Model::build(&cfg, 4).unwrap(), Model::build(&cfg, 4).unwrap(), Model::build(&cfg, 5).unwrap());
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    let x = input(&cfg, 1, 0);
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
}

#[test]
fn every_parameter_reaches_the_output() {
    let cfg = small();
    let m = Model::build(&cfg, 2).unwrap();
    let tape = Tape::new();
    let p = m.params.bind(&tape, true);
    let y = m.forward(&p, tape.constant(input(&cfg, 2, 3))).unwrap();
    let loss = y.mse(tape.constant(Tensor::full(y.shape(), 0.25))).unwrap();
    let grads = p.grads(&tape.backward(loss).unwrap());
    let dead: Vec<&str> =
        m.params.ids().zip(&grads).filter(|(_, g)| g.data().iter().all(|&v| v == 0.0)).map(|(id, _)| m.params.name(id)).collect();
    assert!(dead.is_empty(), "no gradient reaches {dead:?}");
}

#[test]
fn globals_add_parameters() {
    let with = Model::build(&small(), 0).unwrap().count_params();
    let without = Model::build(&ModelConfig { globals: 0, ..small() }, 0).unwrap().count_params();
    assert!(with > without);
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let cfg = small();
    let m = Model::build(&cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &json!({ "seed": 7 }), &m.params).unwrap();
    let (header, tensors) = load_checkpoint(&path).unwrap();
    assert_eq!(tensors.iter().map(|t| t.data().len()).sum::<usize>(), m.count_params());
    let mut other = Model::build(&cfg, 8).unwrap();
    restore_params(&header, tensors, &mut other.params).unwrap();
    let x = input(&cfg, 1, 1);
    assert_eq!(m.predict(&x).unwrap(), other.predict(&x).unwrap());
}

#[test]
fn invalid_configurations_are_rejected() {
    let base = small();
    for bad in [
        ModelConfig { height: 10, ..base.clone() },
        ModelConfig { heads: 3, ..base.clone() },
        ModelConfig { depth: vec![1], ..base.clone() },
        ModelConfig { channels: vec![], depth: vec![], ..base.clone() },
        ModelConfig { norm_groups: 3, ..base.clone() },
        ModelConfig { input_len: 0, ..base.clone() },
        ModelConfig { init_downsample: 0, ..base.clone() },
    ] {
        assert!(matches!(Model::build(&bad, 0), Err(cuboidcast::Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn wrong_input_shape_is_a_dimension_error() {
    let cfg = small();
    let m = Model::build(&cfg, 0).unwrap();
    let x = Tensor::zeros([1, cfg.input_len + 1, cfg.height, cfg.width, 1]);
    assert!(matches!(m.predict(&x), Err(cuboidcast::Error::Tensor(_))));
}

#[test]
fn config_survives_json() {
    let cfg = ModelConfig::moving_mnist(8);
    let back: ModelConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let sparse: ModelConfig = serde_json::from_value(json!({
        "input_len": 10, "target_len": 10, "height": 64, "width": 64,
        "channels": [64, 128], "depth": [4, 4], "pattern": "axial", "init_downsample": 2
    }))
    .unwrap();
    assert_eq!(sparse, ModelConfig::moving_mnist(0));
}
