//! Sensitivity of trajectories to a small change in initial velocities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::{init_bodies, render_frame, sample_seed, GenConfig};
use super::glyphs::Glyphs;
use super::physics::{simulate_nbody, Body, PhysicsConfig};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// Mean distance between matching bodies after each step, physics units.
    pub per_step: Vec<f64>,
    pub final_position: f64,
    /// L2 distance between the last rendered frames, values in `[0, 1]`.
    pub final_pixel_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub velocity_delta: f64,
    pub steps: usize,
    pub seed: u64,
    pub nbody: Divergence,
    pub free: Divergence,
    /// `nbody.final_position / free.final_position`; absent when the latter is zero.
    pub ratio: Option<f64>,
}

/// Report plus rendered frames `[steps, size, size]` for the base and
/// perturbed runs of each dynamics: nbody, nbody', free, free'.
#[derive(Debug, Clone)]
pub struct ChaosRun {
    pub report: ChaosReport,
    pub frames: [Vec<u8>; 4],
}

/// Relative kick of size `delta * |v|` in a random direction per body.
pub fn perturb<R: Rng>(bodies: &[Body], delta: f64, rng: &mut R) -> Vec<Body> {
    bodies
        .iter()
        .map(|b| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = (b.vel[0].powi(2) + b.vel[1].powi(2)).sqrt();
            let mut p = *b;
            p.vel[0] += delta * speed * angle.cos();
            p.vel[1] += delta * speed * angle.sin();
            p
        })
        .collect()
}

fn run(cfg: &GenConfig, physics: &PhysicsConfig, scaled: &Glyphs, a: &[Body], b: &[Body], steps: usize) -> (Divergence, Vec<u8>, Vec<u8>) {
    let ta = simulate_nbody(a, physics, steps);
    let tb = simulate_nbody(b, physics, steps);
    let per_step: Vec<f64> = ta[1..]
        .iter()
        .zip(&tb[1..])
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| ((p.pos[0] - q.pos[0]).powi(2) + (p.pos[1] - q.pos[1]).powi(2)).sqrt()).sum::<f64>() / x.len() as f64)
        .collect();
    let px = cfg.size * cfg.size;
    let render = |traj: &[Vec<Body>]| {
        let mut out = vec![0u8; steps * px];
        for (state, frame) in traj[1..].iter().zip(out.chunks_exact_mut(px)) {
            render_frame(state, scaled, cfg.scale(), cfg.size, frame);
        }
        out
    };
    let (fa, fb) = (render(&ta), render(&tb));
    let last = steps.saturating_sub(1) * px;
    let final_pixel_l2 = if steps == 0 {
        0.0
    } else {
        fa[last..].iter().zip(&fb[last..]).map(|(&p, &q)| ((p as f64 - q as f64) / 255.0).powi(2)).sum::<f64>().sqrt()
    };
    let final_position = per_step.last().copied().unwrap_or(0.0);
    (Divergence { per_step, final_position, final_pixel_l2 }, fa, fb)
}

/// Runs the same perturbation under gravity and in free flight.
pub fn chaos_probe(cfg: &GenConfig, glyphs: &Glyphs, velocity_delta: f64, seed: u64, steps: usize) -> Result<ChaosRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, 0));
    let base = init_bodies(&cfg.physics, glyphs.len(), &mut rng)?;
    let kicked = perturb(&base, velocity_delta, &mut rng);
    let scaled = glyphs.resized(cfg.glyph_side());
    let free_physics = PhysicsConfig { g: 0.0, ..cfg.physics.clone() };
    let (nbody, n0, n1) = run(cfg, &cfg.physics, &scaled, &base, &kicked, steps);
    let (free, f0, f1) = run(cfg, &free_physics, &scaled, &base, &kicked, steps);
    let ratio = (free.final_position > 0.0).then(|| nbody.final_position / free.final_position);
    let report = ChaosReport { velocity_delta, steps, seed, nbody, free, ratio };
    Ok(ChaosRun { report, frames: [n0, n1, f0, f1] })
}

/// Probes over several independent seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosEnsemble {
    pub seeds: Vec<u64>,
    pub mean_nbody: f64,
    pub mean_free: f64,
    /// `mean_nbody / mean_free`; a single seed can land on a near miss or a
    /// wide pass, so this is the headline number.
    pub ratio_of_means: Option<f64>,
    pub median_ratio: Option<f64>,
}

pub fn chaos_ensemble(cfg: &GenConfig, glyphs: &Glyphs, velocity_delta: f64, seeds: &[u64], steps: usize) -> Result<ChaosEnsemble> {
    let reports = seeds
        .iter()
        .map(|&s| chaos_probe(cfg, glyphs, velocity_delta, s, steps).map(|r| r.report))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len().max(1) as f64;
    let mean_nbody = reports.iter().map(|r| r.nbody.final_position).sum::<f64>() / n;
    let mean_free = reports.iter().map(|r| r.free.final_position).sum::<f64>() / n;
    let mut ratios: Vec<f64> = reports.iter().filter_map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median_ratio = (!ratios.is_empty()).then(|| {
        let m = ratios.len() / 2;
        if ratios.len() % 2 == 1 {
            ratios[m]
        } else {
            (ratios[m - 1] + ratios[m]) / 2.0
        }
    });
    Ok(ChaosEnsemble {
        seeds: seeds.to_vec(),
        mean_nbody,
        mean_free,
        ratio_of_means: (mean_free > 0.0).then(|| mean_nbody / mean_free),
        median_ratio,
    })
}
