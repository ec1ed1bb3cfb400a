use cuboidcast_tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, CsiAccumulator, CsiConfig, CsiPerStep, CsiPooled};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Mae,
    Ssim,
    Csi,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(Metric::Mse),
            "mae" => Ok(Metric::Mae),
            "ssim" => Ok(Metric::Ssim),
            "csi" => Ok(Metric::Csi),
            other => Err(Error::Usage(format!("unknown metric {other:?}, expected mse, mae, ssim or csi"))),
        }
    }
}

pub const ALL_METRICS: [Metric; 4] = [Metric::Mse, Metric::Mae, Metric::Ssim, Metric::Csi];

/// Repeats the last observed frame for every lead time.
pub fn persistence(x: &Tensor<f32>, target_len: usize) -> Tensor<f32> {
    let s = x.shape();
    let (b, t, frame) = (s[0], s[1], s[2..].iter().product::<usize>());
    let mut out = Vec::with_capacity(b * target_len * frame);
    for i in 0..b {
        let last = &x.data()[((i + 1) * t - 1) * frame..(i + 1) * t * frame];
        for _ in 0..target_len {
            out.extend_from_slice(last);
        }
    }
    let mut shape = s.to_vec();
    shape[1] = target_len;
    Tensor::new(shape, out).expect("sizes agree")
}

#[derive(Clone, Copy)]
pub enum Forecaster<'a> {
    Model(&'a Model),
    Persistence,
}

impl Forecaster<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Forecaster::Model(_) => "model",
            Forecaster::Persistence => "persistence",
        }
    }

    pub fn predict(&self, x: &Tensor<f32>, target_len: usize) -> Result<Tensor<f32>> {
        match self {
            Forecaster::Model(m) => m.predict(x),
            Forecaster::Persistence => Ok(persistence(x, target_len)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub forecaster: String,
    pub samples: usize,
    /// Plain per-element squared error, the training objective.
    pub loss: f64,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub ssim: Option<f64>,
    pub csi_pooled: Option<CsiPooled>,
    pub csi_per_step: Option<CsiPerStep>,
}

struct Partial {
    sse: f64,
    sae: f64,
    ssim_sum: f64,
    frames: usize,
    elements: usize,
    csi: Option<CsiAccumulator>,
}

/// Deterministic evaluation; batches may run in parallel but are reduced in order.
pub fn evaluate(forecaster: Forecaster<'_>, data: &SequenceDataset, metrics: &[Metric], batch: usize, csi: &CsiConfig) -> Result<EvalReport> {
    if metrics.contains(&Metric::Csi) {
        csi.validate()?;
    }
    let k = data.target_len();
    let chunks: Vec<Vec<usize>> = (0..data.len()).collect::<Vec<_>>().chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    let partials: Vec<Partial> = chunks
        .par_iter()
        .map(|idx| {
            let (x, y) = data.batch(idx);
            let pred = forecaster.predict(&x, k)?;
            let frames = idx.len() * k;
            let mut p = Partial {
                sse: metrics::mse(&pred, &y)? * frames as f64,
                sae: metrics::mae(&pred, &y)? * frames as f64,
                ssim_sum: 0.0,
                frames,
                elements: y.len(),
                csi: None,
            };
            if metrics.contains(&Metric::Ssim) {
                p.ssim_sum = metrics::ssim(&pred, &y)? * frames as f64;
            }
            if metrics.contains(&Metric::Csi) {
                let mut acc = CsiAccumulator::new(&csi.thresholds, k);
                acc.add(&pred, &y)?;
                p.csi = Some(acc);
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;

    let (mut sse, mut sae, mut ssim_sum, mut frames, mut elements) = (0.0, 0.0, 0.0, 0, 0);
    let mut acc = CsiAccumulator::new(&csi.thresholds, k);
    for p in &partials {
        sse += p.sse;
        sae += p.sae;
        ssim_sum += p.ssim_sum;
        frames += p.frames;
        elements += p.elements;
        if let Some(c) = &p.csi {
            acc.merge(c);
        }
    }
    let frames_f = frames.max(1) as f64;
    let has = |m| metrics.contains(&m);
    Ok(EvalReport {
        forecaster: forecaster.name().into(),
        samples: data.len(),
        loss: sse / elements.max(1) as f64,
        mse: has(Metric::Mse).then_some(sse / frames_f),
        mae: has(Metric::Mae).then_some(sae / frames_f),
        ssim: has(Metric::Ssim).then_some(ssim_sum / frames_f),
        csi_pooled: has(Metric::Csi).then(|| acc.pooled()),
        csi_per_step: has(Metric::Csi).then(|| acc.per_step()),
    })
}
