//! Trains a very small model for a few epochs on 16x16 N-body data and
//! compares it with persistence.

use cuboidcast::data::{gen_nbody_mnist, GenConfig, Glyphs};
use cuboidcast::metrics::CsiConfig;
use cuboidcast::model::{Model, ModelConfig};
use cuboidcast::train::{evaluate, train, Forecaster, Metric, TrainConfig};

fn main() -> cuboidcast::Result<()> {
    let gen = GenConfig { input_len: 4, target_len: 4, ..GenConfig::nbody(16) };
    let glyphs = Glyphs::procedural();
    let train_set = gen_nbody_mnist(&gen, &glyphs, 64, 0)?;
    let val_set = gen_nbody_mnist(&gen, &glyphs, 16, 1)?;

    let cfg = ModelConfig {
        input_len: 4,
        target_len: 4,
        height: 16,
        width: 16,
        channels: vec![8, 16],
        depth: vec![1, 1],
        globals: 2,
        heads: 2,
        cnn_channels: Some(8),
        norm_groups: 2,
        ..ModelConfig::tiny(2)
    };
    let mut model = Model::build(&cfg, 0)?;
    let tc = TrainConfig { epochs: 5, batch_size: 8, micro_batch: 8, lr: 3e-3, ..TrainConfig::default() };
    let outcome = train(&mut model, &train_set, &val_set, &tc, |r| {
        println!("epoch {}  train {:.4}  val mse {:.2}", r.epoch, r.train_loss, r.val_mse);
    })?;
    model.params = outcome.best;

    let csi = CsiConfig::default();
    for f in [Forecaster::Model(&model), Forecaster::Persistence] {
        let r = evaluate(f, &val_set, &[Metric::Mse, Metric::Mae], 8, &csi)?;
        println!("{:<12} mse {:.2}  mae {:.2}", r.forecaster, r.mse.unwrap_or(f64::NAN), r.mae.unwrap_or(f64::NAN));
    }
    Ok(())
}
