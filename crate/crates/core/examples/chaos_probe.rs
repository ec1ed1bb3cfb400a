//! Kicks every velocity by 1% and compares how far trajectories drift
//! apart with and without gravity.

use cuboidcast::data::{chaos_ensemble, chaos_probe, GenConfig, Glyphs};

fn main() -> cuboidcast::Result<()> {
    let cfg = GenConfig::nbody(64);
    let glyphs = Glyphs::procedural();
    let run = chaos_probe(&cfg, &glyphs, 0.01, 0, 20)?;
    println!("step  nbody     free");
    for (i, (a, b)) in run.report.nbody.per_step.iter().zip(&run.report.free.per_step).enumerate() {
        println!("{:>4}  {a:<8.4}  {b:<8.4}", i + 1);
    }
    let seeds: Vec<u64> = (0..32).collect();
    let e = chaos_ensemble(&cfg, &glyphs, 0.01, &seeds, 20)?;
    println!("ratio of means over {} seeds: {:.2}", seeds.len(), e.ratio_of_means.unwrap_or(f64::NAN));
    Ok(())
}
