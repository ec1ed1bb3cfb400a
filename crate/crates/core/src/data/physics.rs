//! Softened Newtonian gravity integrated with velocity Verlet.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Velocity component flips when the glyph box touches a wall.
    Reflect,
    Open,
}

/// Dynamics of the digits. Lengths are in a 64-unit reference frame,
/// time in frames; rendering rescales to the requested resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub bodies: usize,
    pub g: f64,
    pub softening: f64,
    pub dt: f64,
    pub substeps: usize,
    pub boundary: Boundary,
    pub mass_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub min_separation: f64,
    pub frame: f64,
    pub glyph: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            bodies: 3,
            g: 96.0,
            softening: 3.0,
            dt: 0.001,
            substeps: 1000,
            boundary: Boundary::Reflect,
            mass_range: [1.0, 2.0],
            speed_range: [1.0, 3.0],
            min_separation: 12.0,
            frame: 64.0,
            glyph: 28.0,
        }
    }
}

impl PhysicsConfig {
    /// Two digits in free flight with wall bounces.
    pub fn moving_mnist() -> Self {
        Self { bodies: 2, g: 0.0, ..Self::default() }
    }

    /// Largest coordinate of a glyph's top-left corner.
    pub fn extent(&self) -> f64 {
        self.frame - self.glyph
    }

    pub fn validate(&self) -> Result<()> {
        if self.bodies == 0 {
            return config("at least one body is required");
        }
        if !(self.softening > 0.0) {
            return config(format!("softening must be positive, got {}", self.softening));
        }
        if self.substeps == 0 || (self.dt * self.substeps as f64 - 1.0).abs() > 1e-9 {
            return config(format!("dt * substeps must equal one frame, got {} * {}", self.dt, self.substeps));
        }
        if !(self.mass_range[0] > 0.0 && self.mass_range[0] <= self.mass_range[1]) {
            return config(format!("bad mass range {:?}", self.mass_range));
        }
        if !(self.speed_range[0] >= 0.0 && self.speed_range[0] <= self.speed_range[1]) {
            return config(format!("bad speed range {:?}", self.speed_range));
        }
        if !(self.extent() > 0.0) {
            return config(format!("glyph {} does not fit frame {}", self.glyph, self.frame));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub mass: f64,
    /// Top-left corner of the glyph box.
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub glyph: usize,
}

pub fn accelerations(bodies: &[Body], g: f64, softening: f64) -> Vec<[f64; 2]> {
    let mut acc = vec![[0.0; 2]; bodies.len()];
    if g == 0.0 {
        return acc;
    }
    let eps2 = softening * softening;
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let d = [bodies[j].pos[0] - bodies[i].pos[0], bodies[j].pos[1] - bodies[i].pos[1]];
            let r2 = d[0] * d[0] + d[1] * d[1] + eps2;
            let s = g / (r2 * r2.sqrt());
            for a in 0..2 {
                acc[i][a] += bodies[j].mass * s * d[a];
                acc[j][a] -= bodies[i].mass * s * d[a];
            }
        }
    }
    acc
}

fn reflect(b: &mut Body, hi: f64) {
    for a in 0..2 {
        // Loop in case a very fast body crosses the box more than once.
        loop {
            if b.pos[a] < 0.0 {
                b.pos[a] = -b.pos[a];
            } else if b.pos[a] > hi {
                b.pos[a] = 2.0 * hi - b.pos[a];
            } else {
                break;
            }
            b.vel[a] = -b.vel[a];
        }
    }
}

/// Advances one frame with `cfg.substeps` Verlet steps of `dt`.
pub fn advance_frame(bodies: &mut [Body], cfg: &PhysicsConfig) {
    let (dt, hi) = (cfg.dt, cfg.extent());
    let mut acc = accelerations(bodies, cfg.g, cfg.softening);
    for _ in 0..cfg.substeps {
        for (b, a) in bodies.iter_mut().zip(&acc) {
            for k in 0..2 {
                b.vel[k] += 0.5 * dt * a[k];
                b.pos[k] += dt * b.vel[k];
            }
            if cfg.boundary == Boundary::Reflect {
                reflect(b, hi);
            }
        }
        acc = accelerations(bodies, cfg.g, cfg.softening);
        for (b, a) in bodies.iter_mut().zip(&acc) {
            for k in 0..2 {
                b.vel[k] += 0.5 * dt * a[k];
            }
        }
    }
}

/// States at frames `0..=steps`, starting with `init`.
pub fn simulate_nbody(init: &[Body], cfg: &PhysicsConfig, steps: usize) -> Vec<Vec<Body>> {
    let mut state = init.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state.clone());
    for _ in 0..steps {
        advance_frame(&mut state, cfg);
        out.push(state.clone());
    }
    out
}

pub fn momentum(bodies: &[Body]) -> [f64; 2] {
    bodies.iter().fold([0.0; 2], |m, b| [m[0] + b.mass * b.vel[0], m[1] + b.mass * b.vel[1]])
}

pub fn center_of_mass(bodies: &[Body]) -> [f64; 2] {
    let total: f64 = bodies.iter().map(|b| b.mass).sum();
    let s = bodies.iter().fold([0.0; 2], |m, b| [m[0] + b.mass * b.pos[0], m[1] + b.mass * b.pos[1]]);
    [s[0] / total, s[1] / total]
}

/// Kinetic plus softened potential energy.
pub fn energy(bodies: &[Body], g: f64, softening: f64) -> f64 {
    let kinetic: f64 = bodies.iter().map(|b| 0.5 * b.mass * (b.vel[0].powi(2) + b.vel[1].powi(2))).sum();
    let mut potential = 0.0;
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let r2 = (bodies[j].pos[0] - bodies[i].pos[0]).powi(2) + (bodies[j].pos[1] - bodies[i].pos[1]).powi(2);
            potential -= g * bodies[i].mass * bodies[j].mass / (r2 + softening * softening).sqrt();
        }
    }
    kinetic + potential
}
