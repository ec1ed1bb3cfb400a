//! Scores the persistence baseline on generated data with every metric,
//! including both CSI pooling modes.

use cuboidcast::data::{gen_nbody_mnist, GenConfig, Glyphs};
use cuboidcast::metrics::{csi_per_step, csi_pooled, mae, mse, ssim, CsiConfig};
use cuboidcast::train::persistence;

fn main() -> cuboidcast::Result<()> {
    let data = gen_nbody_mnist(&GenConfig::nbody(32), &Glyphs::procedural(), 16, 3)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = data.batch(&idx);
    let pred = persistence(&x, data.target_len());
    println!("mse  {:.3}", mse(&pred, &y)?);
    println!("mae  {:.3}", mae(&pred, &y)?);
    println!("ssim {:.4}", ssim(&pred, &y)?);
    let cfg = CsiConfig::default();
    let pooled = csi_pooled(&pred, &y, &cfg)?;
    let per_step = csi_per_step(&pred, &y, &cfg)?;
    for (i, tau) in cfg.thresholds.iter().enumerate() {
        println!("csi@{tau:<3} pooled {:.4}  per-step {:.4}", pooled.csi[i], per_step.csi[i]);
    }
    println!("csi-m pooled {:.4}, per-step {:.4}", pooled.csi_m, per_step.csi_m6);
    Ok(())
}
