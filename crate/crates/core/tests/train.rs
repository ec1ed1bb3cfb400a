use cuboidcast::data::{gen_nbody_mnist, GenConfig, Glyphs, SequenceDataset};
use cuboidcast::model::{Model, ModelConfig};
use cuboidcast::selfcheck::gradcheck_model_config;
use cuboidcast::train::*;
use cuboidcast_tensor::{ParamStore, Tensor};

fn scalar_store(p: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("p", Tensor::new([1], vec![p]).unwrap());
    s
}

fn value(s: &ParamStore<f64>) -> f64 {
    s.get(s.ids().next().unwrap()).data()[0]
}

#[test]
fn adamw_first_steps_match_hand_computation() {
    let hp = AdamW::default();
    let lr = 1e-3;
    let mut s = scalar_store(1.0);
    let mut st = OptimState::new(&s);
    let g = [Tensor::new([1], vec![1.0]).unwrap()];
    adamw_step(&mut s, &g, &mut st, &hp, lr);
    // Bias correction makes both moment estimates exactly the gradient on step one.
    let want = 1.0 * (1.0 - lr * 1e-5) - lr * 1.0 / (1.0 + 1e-8);
    assert!((value(&s) - want).abs() < 1e-12, "{} vs {want}", value(&s));

    // Second step with gradient 2, moments tracked by hand.
    let (m, v) = (0.9 * 0.1 + 0.1 * 2.0, 0.999 * 0.001 + 0.001 * 4.0);
    let (mh, vh) = (m / (1.0 - 0.81), v / (1.0 - 0.999f64.powi(2)));
    let want2 = want * (1.0 - lr * 1e-5) - lr * mh / (vh.sqrt() + 1e-8);
    adamw_step(&mut s, &[Tensor::new([1], vec![2.0]).unwrap()], &mut st, &hp, lr);
    assert!((value(&s) - want2).abs() < 1e-12);
    assert_eq!(st.step, 2);
}

#[test]
fn zero_gradient_only_decays() {
    let hp = AdamW { weight_decay: 0.1, ..AdamW::default() };
    let mut s = scalar_store(2.5);
    let mut st = OptimState::new(&s);
    adamw_step(&mut s, &[Tensor::new([1], vec![0.0]).unwrap()], &mut st, &hp, 0.01);
    assert_eq!(value(&s), 2.5 * (1.0 - 0.01 * 0.1));
}

#[test]
fn adamw_minimises_a_convex_quadratic() {
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    let mut s = scalar_store(-4.0);
    let mut st = OptimState::new(&s);
    for step in 0..3000 {
        let g = 2.0 * (value(&s) - 3.0);
        adamw_step(&mut s, &[Tensor::new([1], vec![g]).unwrap()], &mut st, &hp, lr_schedule(step, 3000, 0.1, 0.05));
    }
    assert!((value(&s) - 3.0).abs() < 1e-3, "{}", value(&s));
}

#[test]
fn schedule_landmarks() {
    let (total, base) = (1000, 1e-3);
    assert_eq!(lr_schedule(0, total, 0.2, base), 0.0);
    assert!((lr_schedule(100, total, 0.2, base) - base / 2.0).abs() < 1e-18);
    assert!((lr_schedule(200, total, 0.2, base) - base).abs() < 1e-18);
    assert!((lr_schedule(600, total, 0.2, base) - base / 2.0).abs() < 1e-15);
    assert!(lr_schedule(total, total, 0.2, base).abs() < 1e-18);
    assert!(lr_schedule(2 * total, total, 0.2, base).abs() < 1e-18);
    assert_eq!(lr_schedule(5, 10, 0.0, base), 0.5 * base * (1.0 + (std::f64::consts::PI * 0.5).cos()));
}

#[test]
fn schedule_decays_monotonically_after_warmup() {
    let lrs: Vec<f64> = (200..=1000).map(|s| lr_schedule(s, 1000, 0.2, 1.0)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn clipping_rescales_the_global_norm() {
    let mut g = vec![Tensor::<f64>::new([1], vec![3.0]).unwrap(), Tensor::new([1], vec![4.0]).unwrap()];
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
    assert!((clip_grad_norm(&mut g, 10.0) - 1.0).abs() < 1e-15);
}

#[test]
fn early_stopping_waits_exactly_patience_epochs() {
    let mut es = EarlyStopping::new(20);
    for e in 1..=5 {
        assert!(es.observe(e, 10.0 - e as f64));
    }
    for e in 6..=24 {
        es.observe(e, 7.0);
        assert!(!es.should_stop(), "stopped early at {e}");
    }
    es.observe(25, 5.0);
    assert!(es.should_stop());
    assert_eq!((es.best_epoch, es.best), (5, 5.0));
}

fn dataset(n: usize, seed: u64) -> SequenceDataset {
    let cfg = GenConfig { input_len: 2, target_len: 2, ..GenConfig::nbody(8) };
    gen_nbody_mnist(&cfg, &Glyphs::procedural(), n, seed).unwrap()
}

fn quick(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { lr, epochs, batch_size: 4, micro_batch: 2, ..TrainConfig::default() }
}

fn model() -> Model {
    Model::build(&gradcheck_model_config(), 11).unwrap()
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let (tr, va) = (dataset(8, 1), dataset(4, 2));
    let mut m = model();
    let init = m.params.clone();
    let out = train(&mut m, &tr, &va, &quick(3, 0.0), |_| {}).unwrap();
    assert_eq!(m.params, init);
    let vals: Vec<f64> = out.history.iter().map(|r| r.val_loss).collect();
    assert!(vals.iter().all(|&v| v == vals[0]));
}

#[test]
fn stalled_validation_stops_after_patience() {
    let (tr, va) = (dataset(4, 1), dataset(4, 2));
    let mut m = model();
    let cfg = TrainConfig { patience: 2, ..quick(10, 0.0) };
    let out = train(&mut m, &tr, &va, &cfg, |_| {}).unwrap();
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.best_epoch, 1);
    assert!(out.stopped_early);
}

#[test]
fn training_is_deterministic() {
    let (tr, va) = (dataset(8, 1), dataset(4, 2));
    let run = || {
        let mut m = model();
        let out = train(&mut m, &tr, &va, &quick(2, 1e-3), |_| {}).unwrap();
        (m.params, out.history.iter().map(EpochRecord::deterministic).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn callback_sees_every_epoch_in_order() {
    let (tr, va) = (dataset(4, 1), dataset(4, 2));
    let mut m = model();
    let mut seen = Vec::new();
    let out = train(&mut m, &tr, &va, &quick(3, 1e-3), |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    assert_eq!(out.history.last().unwrap().step, 3);
}

#[test]
fn micro_batching_matches_whole_batch_gradient() {
    let (tr, va) = (dataset(8, 1), dataset(4, 2));
    let run = |micro| {
        let mut m = model();
        train(&mut m, &tr, &va, &TrainConfig { micro_batch: micro, ..quick(1, 1e-3) }, |_| {}).unwrap();
        m.params
    };
    let (a, b) = (run(1), run(4));
    for id in a.ids() {
        for (x, y) in a.get(id).data().iter().zip(b.get(id).data()) {
            assert!((x - y).abs() < 1e-5, "{} differs", a.name(id));
        }
    }
}

#[test]
fn loss_falls_on_a_fixed_batch() {
    let tr = dataset(4, 1);
    let mut m = model();
    let cfg = TrainConfig { warmup_frac: 0.0, clip_norm: None, ..quick(30, 3e-3) };
    let out = train(&mut m, &tr, &tr, &cfg, |_| {}).unwrap();
    let (first, last) = (out.history[0].train_loss, out.history.last().unwrap().train_loss);
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(out.best_val_mse <= out.history[0].val_mse);
}

#[test]
fn mismatched_data_is_rejected() {
    let mut m = Model::build(&ModelConfig { input_len: 3, ..gradcheck_model_config() }, 0).unwrap();
    let d = dataset(4, 1);
    assert!(train(&mut m, &d, &d, &quick(1, 1e-3), |_| {}).is_err());
    let mut m = model();
    assert!(train(&mut m, &d, &d, &TrainConfig { batch_size: 0, ..quick(1, 1e-3) }, |_| {}).is_err());
}

#[test]
fn persistence_repeats_the_last_observed_frame() {
    let x = Tensor::<f32>::from_fn([1, 3, 2, 2, 1], |i| i as f32);
    let p = persistence(&x, 2);
    assert_eq!(p.data(), &[8.0, 9.0, 10.0, 11.0, 8.0, 9.0, 10.0, 11.0]);
}
