//! Forecast verification: pixel errors, SSIM, CSI and Nino3.4 skill.

use cuboidcast_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

fn check_pair(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<[usize; 5]> {
    let s = target.shape();
    if pred.shape() != s || s.len() != 5 {
        return Err(Error::Tensor(cuboidcast_tensor::TensorError::Dimension {
            op: "metric",
            detail: format!("expected matching [N, K, H, W, C] shapes, got {:?} and {s:?}", pred.shape()),
        }));
    }
    Ok([s[0], s[1], s[2], s[3], s[4]])
}

/// Per-frame pixel sum of squared error, averaged over frames and samples.
pub fn mse(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    let [n, k, ..] = check_pair(pred, target)?;
    let sse: f64 = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p as f64 - t as f64).powi(2)).sum();
    Ok(sse / (n * k) as f64)
}

/// Per-frame pixel sum of absolute error, averaged over frames and samples.
pub fn mae(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    let [n, k, ..] = check_pair(pred, target)?;
    let sae: f64 = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p as f64 - t as f64).abs()).sum();
    Ok(sae / (n * k) as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter with no padding: `[h, w] -> [h - 10, w - 10]`.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one single-channel frame pair with dynamic range 1.
pub fn ssim_frame(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return config(format!("SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let win = gaussian_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &win);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &win);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &win);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM averaged over frames and samples of `[N, K, H, W, 1]` tensors.
pub fn ssim(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    let [n, k, h, w, c] = check_pair(pred, target)?;
    if c != 1 {
        return config(format!("SSIM expects one channel, got {c}"));
    }
    let frame = h * w;
    let mut total = 0.0;
    for (p, t) in pred.data().chunks_exact(frame).zip(target.data().chunks_exact(frame)) {
        let p: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        total += ssim_frame(&p, &t, h, w)?;
    }
    Ok(total / (n * k) as f64)
}

pub const DEFAULT_THRESHOLDS: [f64; 6] = [16.0, 74.0, 133.0, 160.0, 181.0, 219.0];
/// Thresholds averaged by CSI-M3.
pub const M3_THRESHOLDS: [f64; 3] = [133.0, 74.0, 16.0];
// Absorbs f32 round-off when data stored as bytes are rescaled back to 0-255.
const RESCALE_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiConfig {
    /// On the 0-255 scale, strictly increasing.
    pub thresholds: Vec<f64>,
}

impl Default for CsiConfig {
    fn default() -> Self {
        Self { thresholds: DEFAULT_THRESHOLDS.to_vec() }
    }
}

impl CsiConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        if t.is_empty() || t.iter().any(|&v| !(v > 0.0 && v <= 255.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return config(format!("thresholds must be strictly increasing within (0, 255], got {t:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub hits: u64,
    pub misses: u64,
    pub false_alarms: u64,
}

impl Contingency {
    /// `hits / (hits + misses + false alarms)`, 0 when nothing exceeds.
    pub fn csi(&self) -> f64 {
        let d = self.hits + self.misses + self.false_alarms;
        if d == 0 {
            0.0
        } else {
            self.hits as f64 / d as f64
        }
    }
}

/// Accumulates counts for values already on the 0-255 scale.
pub fn count_exceedance(pred: &[f64], truth: &[f64], tau: f64, acc: &mut Contingency) {
    for (&p, &t) in pred.iter().zip(truth) {
        let (pe, te) = (p + RESCALE_SLACK >= tau, t + RESCALE_SLACK >= tau);
        acc.hits += (pe && te) as u64;
        acc.misses += (!pe && te) as u64;
        acc.false_alarms += (pe && !te) as u64;
    }
}

fn rescaled(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64 * 255.0).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn m3(thresholds: &[f64], scores: &[f64]) -> Option<f64> {
    let picked: Option<Vec<f64>> = M3_THRESHOLDS.iter().map(|m| thresholds.iter().position(|t| t == m).map(|i| scores[i])).collect();
    picked.map(|v| mean(&v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiPooled {
    pub thresholds: Vec<f64>,
    pub counts: Vec<Contingency>,
    pub csi: Vec<f64>,
    pub csi_m: f64,
}

/// Counts pooled over every sample, step and pixel.
pub fn csi_pooled(pred: &Tensor<f32>, target: &Tensor<f32>, cfg: &CsiConfig) -> Result<CsiPooled> {
    cfg.validate()?;
    let mut acc = CsiAccumulator::new(&cfg.thresholds, target.shape().get(1).copied().unwrap_or(0));
    acc.add(pred, target)?;
    Ok(acc.pooled())
}

/// [`csi_pooled`] on flat 0-255 values.
pub fn csi_pooled_values(pred: &[f64], truth: &[f64], thresholds: &[f64]) -> CsiPooled {
    let mut acc = CsiAccumulator::new(thresholds, 1);
    acc.add_values(pred, truth, [1, 1, pred.len()]);
    acc.pooled()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiPerStep {
    pub thresholds: Vec<f64>,
    /// `[step][threshold]`.
    pub per_step: Vec<Vec<f64>>,
    /// Mean over steps, per threshold.
    pub csi: Vec<f64>,
    /// Absent unless 16, 74 and 133 are all configured.
    pub csi_m3: Option<f64>,
    pub csi_m6: f64,
}

/// Counts pooled within each step, scores averaged over steps.
pub fn csi_per_step(pred: &Tensor<f32>, target: &Tensor<f32>, cfg: &CsiConfig) -> Result<CsiPerStep> {
    cfg.validate()?;
    let mut acc = CsiAccumulator::new(&cfg.thresholds, target.shape().get(1).copied().unwrap_or(0));
    acc.add(pred, target)?;
    Ok(acc.per_step())
}

/// [`csi_per_step`] on flat 0-255 values laid out as `[N, K, pixels]`.
pub fn csi_per_step_values(pred: &[f64], truth: &[f64], dims: [usize; 3], thresholds: &[f64]) -> CsiPerStep {
    let mut acc = CsiAccumulator::new(thresholds, dims[1]);
    acc.add_values(pred, truth, dims);
    acc.per_step()
}

/// Contingency counts gathered batch by batch, per step and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiAccumulator {
    thresholds: Vec<f64>,
    /// `[step][threshold]`.
    counts: Vec<Vec<Contingency>>,
}

impl CsiAccumulator {
    pub fn new(thresholds: &[f64], steps: usize) -> Self {
        Self { thresholds: thresholds.to_vec(), counts: vec![vec![Contingency::default(); thresholds.len()]; steps] }
    }

    pub fn add(&mut self, pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<()> {
        let [n, k, h, w, c] = check_pair(pred, target)?;
        if k != self.counts.len() {
            return config(format!("accumulator holds {} steps, batch has {k}", self.counts.len()));
        }
        self.add_values(&rescaled(pred), &rescaled(target), [n, k, h * w * c]);
        Ok(())
    }

    /// Flat 0-255 values laid out as `[N, K, pixels]`.
    pub fn add_values(&mut self, pred: &[f64], truth: &[f64], [n, k, px]: [usize; 3]) {
        assert_eq!(k, self.counts.len(), "step count");
        for s in 0..n {
            for (step, row) in self.counts.iter_mut().enumerate() {
                let o = (s * k + step) * px;
                for (c, &tau) in row.iter_mut().zip(&self.thresholds) {
                    count_exceedance(&pred[o..o + px], &truth[o..o + px], tau, c);
                }
            }
        }
    }

    pub fn merge(&mut self, other: &CsiAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                x.hits += y.hits;
                x.misses += y.misses;
                x.false_alarms += y.false_alarms;
            }
        }
    }

    pub fn pooled(&self) -> CsiPooled {
        let counts: Vec<Contingency> = (0..self.thresholds.len())
            .map(|j| {
                self.counts.iter().fold(Contingency::default(), |a, r| Contingency {
                    hits: a.hits + r[j].hits,
                    misses: a.misses + r[j].misses,
                    false_alarms: a.false_alarms + r[j].false_alarms,
                })
            })
            .collect();
        let csi: Vec<f64> = counts.iter().map(Contingency::csi).collect();
        CsiPooled { thresholds: self.thresholds.clone(), counts, csi_m: mean(&csi), csi }
    }

    pub fn per_step(&self) -> CsiPerStep {
        let per_step: Vec<Vec<f64>> = self.counts.iter().map(|r| r.iter().map(Contingency::csi).collect()).collect();
        let k = per_step.len() as f64;
        let csi: Vec<f64> = (0..self.thresholds.len()).map(|j| per_step.iter().map(|r| r[j]).sum::<f64>() / k).collect();
        CsiPerStep { thresholds: self.thresholds.clone(), csi_m3: m3(&self.thresholds, &csi), csi_m6: mean(&csi), per_step, csi }
    }
}

/// Lead weights `a_k = b_k ln k`, `k = 1..=horizon`.
pub fn nino_weights(horizon: usize) -> Vec<f64> {
    (1..=horizon)
        .map(|k| {
            let b = match k {
                ..=4 => 1.5,
                5..=11 => 2.0,
                _ => 3.0,
            };
            b * (k as f64).ln()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NinoSkill {
    /// Pearson correlation per lead.
    pub c: Vec<f64>,
    pub c_m: f64,
    pub c_wm: f64,
    /// Leads where a series had zero variance and `C_k` was set to 0.
    pub degenerate_leads: Vec<usize>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Correlation skill of `N x K` index forecasts. Moving averages are the caller's job.
pub fn nino_corr_skill(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<NinoSkill> {
    if pred.len() < 2 || pred.len() != truth.len() {
        return config(format!("need at least two matching samples, got {} and {}", pred.len(), truth.len()));
    }
    let k = pred[0].len();
    if k == 0 || pred.iter().chain(truth).any(|r| r.len() != k) {
        return config("every sample needs the same positive number of leads");
    }
    let mut degenerate_leads = Vec::new();
    let c: Vec<f64> = (0..k)
        .map(|lead| {
            let x: Vec<f64> = pred.iter().map(|r| r[lead]).collect();
            let y: Vec<f64> = truth.iter().map(|r| r[lead]).collect();
            pearson(&x, &y).unwrap_or_else(|| {
                degenerate_leads.push(lead + 1);
                0.0
            })
        })
        .collect();
    let weights = nino_weights(k);
    let c_wm = c.iter().zip(&weights).map(|(c, a)| c * a).sum::<f64>() / k as f64;
    Ok(NinoSkill { c_m: mean(&c), c_wm, c, degenerate_leads })
}
