//! Seeded N-body and MovingMNIST-style sequence generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::container::{DatasetHeader, Dtype, SequenceDataset, MAGIC};
use super::glyphs::Glyphs;
use super::physics::{simulate_nbody, Body, PhysicsConfig};
use crate::error::{config, Result};

const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub input_len: usize,
    pub target_len: usize,
    /// Rendered frame side in pixels.
    pub size: usize,
    pub physics: PhysicsConfig,
}

impl GenConfig {
    pub fn nbody(size: usize) -> Self {
        Self { input_len: 10, target_len: 10, size, physics: PhysicsConfig::default() }
    }

    pub fn moving(size: usize) -> Self {
        Self { physics: PhysicsConfig::moving_mnist(), ..Self::nbody(size) }
    }

    pub fn frames(&self) -> usize {
        self.input_len + self.target_len
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        if self.input_len == 0 || self.target_len == 0 {
            return config("input and target lengths must be positive");
        }
        if self.glyph_side() == 0 {
            return config(format!("frame size {} is too small for the glyphs", self.size));
        }
        Ok(())
    }

    /// Pixels per physics unit.
    pub fn scale(&self) -> f64 {
        self.size as f64 / self.physics.frame
    }

    pub fn glyph_side(&self) -> usize {
        (self.physics.glyph * self.scale()).round() as usize
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index`: `splitmix64(master ^ splitmix64(index))`.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Draws masses, glyphs, separated positions and velocities.
pub fn init_bodies<R: Rng>(cfg: &PhysicsConfig, n_glyphs: usize, rng: &mut R) -> Result<Vec<Body>> {
    let hi = cfg.extent();
    let mut bodies: Vec<Body> = Vec::with_capacity(cfg.bodies);
    let mut attempts = 0;
    while bodies.len() < cfg.bodies {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return config(format!("cannot place {} bodies {} apart", cfg.bodies, cfg.min_separation));
        }
        let pos = [rng.random_range(0.0..=hi), rng.random_range(0.0..=hi)];
        let clear = bodies.iter().all(|b| ((b.pos[0] - pos[0]).powi(2) + (b.pos[1] - pos[1]).powi(2)).sqrt() >= cfg.min_separation);
        if !clear {
            continue;
        }
        let mass = rng.random_range(cfg.mass_range[0]..=cfg.mass_range[1]);
        let speed = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let glyph = rng.random_range(0..n_glyphs);
        bodies.push(Body { mass, pos, vel: [speed * angle.cos(), speed * angle.sin()], glyph });
    }
    Ok(bodies)
}

/// Nearest-pixel placement with max composition. `pos` is `[x, y]`.
pub fn render_frame(bodies: &[Body], glyphs: &Glyphs, scale: f64, size: usize, out: &mut [u8]) {
    out.fill(0);
    let g = glyphs.size as i64;
    for b in bodies {
        let x0 = (b.pos[0] * scale).round() as i64;
        let y0 = (b.pos[1] * scale).round() as i64;
        let img = &glyphs.images[b.glyph];
        for gy in 0..g {
            let y = y0 + gy;
            if y < 0 || y >= size as i64 {
                continue;
            }
            for gx in 0..g {
                let x = x0 + gx;
                if x < 0 || x >= size as i64 {
                    continue;
                }
                let o = y as usize * size + x as usize;
                out[o] = out[o].max(img[(gy * g + gx) as usize]);
            }
        }
    }
}

fn glyph_digest(glyphs: &Glyphs) -> String {
    let mut h = Sha256::new();
    h.update((glyphs.size as u64).to_le_bytes());
    for img in &glyphs.images {
        h.update(img);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One sample: initial bodies plus its rendered frames.
pub fn generate_sample(cfg: &GenConfig, glyphs: &Glyphs, scaled: &Glyphs, seed: u64) -> Result<(Vec<Body>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = init_bodies(&cfg.physics, glyphs.len(), &mut rng)?;
    let traj = simulate_nbody(&init, &cfg.physics, cfg.frames() - 1);
    let px = cfg.size * cfg.size;
    let mut frames = vec![0u8; cfg.frames() * px];
    for (state, out) in traj.iter().zip(frames.chunks_exact_mut(px)) {
        render_frame(state, scaled, cfg.scale(), cfg.size, out);
    }
    Ok((init, frames))
}

/// `n` sequences of digits under mutual gravity.
pub fn gen_nbody_mnist(cfg: &GenConfig, glyphs: &Glyphs, n: usize, seed: u64) -> Result<SequenceDataset> {
    cfg.validate()?;
    if glyphs.is_empty() {
        return config("no glyphs");
    }
    let scaled = glyphs.resized(cfg.glyph_side());
    let samples: Vec<Vec<u8>> = (0..n)
        .into_par_iter()
        .map(|i| generate_sample(cfg, glyphs, &scaled, sample_seed(seed, i as u64)).map(|s| s.1))
        .collect::<Result<_>>()?;
    let header = DatasetHeader {
        magic: MAGIC.into(),
        dtype: Dtype::U8,
        shape: [n, cfg.frames(), cfg.size, cfg.size, 1],
        input_len: cfg.input_len,
        seed,
        config: serde_json::json!({ "generator": cfg, "glyphs": { "count": glyphs.len(), "size": glyphs.size, "sha256_prefix": glyph_digest(glyphs) } }),
    };
    SequenceDataset::new(header, samples.concat())
}

/// Free flight of two digits; `gen_nbody_mnist` with gravity switched off.
pub fn gen_moving_mnist(cfg: &GenConfig, glyphs: &Glyphs, n: usize, seed: u64) -> Result<SequenceDataset> {
    let cfg = GenConfig { physics: PhysicsConfig { g: 0.0, bodies: 2, ..cfg.physics.clone() }, ..cfg.clone() };
    gen_nbody_mnist(&cfg, glyphs, n, seed)
}
