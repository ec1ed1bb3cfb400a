//! Numeric self-verification battery behind the `selfcheck` command.

use std::time::Instant;

use cuboidcast_tensor::{counted, gather, Bound, GradCheck, GradCheckReport, OpCounts, ParamStore, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cuboid::{cuboid_attention, CuboidSpec, Decomposition, Init, SelfBlock, Strategy};
use crate::error::Result;
use crate::metrics::{csi_per_step_values, csi_pooled_values, DEFAULT_THRESHOLDS};
use crate::model::{Model, ModelConfig};
use crate::patterns::{cost_model, enumerate_search_space, BlockDims, PatternConfig, Template};

pub const DENSE_TOLERANCE: f64 = 1e-10;
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelfcheckOptions {
    pub fast: bool,
    /// Test hook: corrupts every index map in the bijection suite.
    pub corrupt_index_map: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckReport {
    pub fast: bool,
    pub suites: Vec<SuiteResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect()
    }
}

/// Checks `merge(decompose(x)) == x` and the partition property for every
/// combination of extents, block sizes, shifts and both strategies.
/// Returns the number of cases or a description of the first failure.
pub fn bijection_sweep(extents: &[usize], blocks: &[usize], shifts: &[usize], corrupt: bool) -> std::result::Result<usize, String> {
    let mut cases = 0;
    for &t in extents {
        for &h in extents {
            for &w in extents {
                let dims = [t, h, w];
                let x = Tensor::<f32>::from_fn([t, h, w, 2], |i| i as f32);
                for &bt in blocks {
                    for &bh in blocks {
                        for &bw in blocks {
                            for shift in shifts.iter().flat_map(|&a| shifts.iter().flat_map(move |&b| shifts.iter().map(move |&c| [a, b, c]))) {
                                for strategy in [Strategy::Local, Strategy::Dilated] {
                                    let spec = CuboidSpec { size: [bt, bh, bw], strategy, shift };
                                    let mut dec = Decomposition::new(dims, spec).map_err(|e| format!("{spec} on {dims:?}: {e}"))?;
                                    if corrupt {
                                        dec.corrupt();
                                    }
                                    let back = dec.decompose(&x).and_then(|c| dec.merge(&c)).map_err(|e| format!("{spec} on {dims:?}: {e}"))?;
                                    if !dec.is_partition() || back.data() != x.data() {
                                        return Err(format!("merge(decompose(x)) != x for cuboid {spec} on {dims:?}"));
                                    }
                                    cases += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cases)
}

fn seeded(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Plain multi-head self-attention over all tokens, written with loops.
/// `x: [N, C]`, `w_qkv: [C, 3C]`, `w_proj: [C, C]`, `b_proj: [C]`.
pub fn dense_attention_oracle(x: &[f64], n: usize, c: usize, heads: usize, w_qkv: &[f64], w_proj: &[f64], b_proj: &[f64]) -> Vec<f64> {
    let d = c / heads;
    let mut qkv = vec![0.0; n * 3 * c];
    for i in 0..n {
        for o in 0..3 * c {
            qkv[i * 3 * c + o] = (0..c).map(|j| x[i * c + j] * w_qkv[j * 3 * c + o]).sum();
        }
    }
    let mut att = vec![0.0; n * c];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|e| qkv[i * 3 * c + h * d + e] * qkv[j * 3 * c + c + h * d + e]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for e in 0..d {
                att[i * c + h * d + e] = (0..n).map(|j| exps[j] / z * qkv[j * 3 * c + 2 * c + h * d + e]).sum();
            }
        }
    }
    (0..n * c).map(|r| b_proj[r % c] + (0..c).map(|j| att[r / c * c + j] * w_proj[j * c + r % c]).sum::<f64>()).collect()
}

/// Max abs difference between whole-tensor cuboid attention and the dense oracle.
pub fn dense_equivalence(dims: [usize; 3], c: usize, heads: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    let attn = Init { store: &mut store, rng: &mut rng }.attn("a", c);
    let mut params = store.cast::<f64>();
    for id in params.ids().collect::<Vec<_>>() {
        // Larger weights than the init scale give a non-trivial softmax.
        let shape = params.get(id).shape().to_vec();
        params.set(id, seeded(&shape, &mut rng))?;
    }
    let x = seeded(&[1, dims[0], dims[1], dims[2], c], &mut rng);
    let tape = Tape::<f64>::new();
    let p = params.bind(&tape, false);
    let (y, _) = cuboid_attention(&p, &attn, None, heads, &CuboidSpec::local(dims), tape.constant(x.clone()), None)?;
    let n = dims.iter().product();
    let want = dense_attention_oracle(
        x.data(),
        n,
        c,
        heads,
        params.get(attn.qkv.w).data(),
        params.get(attn.proj.w).data(),
        params.get(attn.proj.b.expect("proj has bias")).data(),
    );
    Ok(y.value().data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn tensor_err(e: crate::Error) -> TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => TensorError::Usage(other.to_string()),
    }
}

fn weighted_sum<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, rng: &mut ChaCha8Rng) -> std::result::Result<Var<'t, f64>, TensorError> {
    let w = seeded(&y.shape(), rng);
    Ok(y.mul(tape.constant(w))?.sum())
}

/// Finite-difference check of one self block with global vectors.
pub fn block_grad_check(samples: Option<usize>) -> Result<f64> {
    let (dims, c, pg) = ([2, 3, 2], 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f32>::new();
    let specs = Template::Axial.build(dims)?;
    let block = SelfBlock::build(&mut Init { store: &mut store, rng: &mut rng }, "b", &specs, c, 2, 2, Some(1));
    let mut inputs = vec![seeded(&[1, dims[0], dims[1], dims[2], c], &mut rng), seeded(&[1, pg, c], &mut rng)];
    let params = store.cast::<f64>();
    inputs.extend(params.ids().map(|id| nudged(params.get(id))));
    let check = GradCheck { samples, seed: 5, ..GradCheck::default() };
    Ok(check.run(&inputs, |tape, vars| {
        let p = Bound::from_vars(vars[2..].to_vec());
        let (x, g) = block.forward(&p, vars[0], Some(vars[1])).map_err(tensor_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let lx = weighted_sum(tape, x, &mut rng)?;
        let lg = weighted_sum(tape, g.expect("globals requested"), &mut rng)?;
        Ok(lx.add(lg)?)
    })?)
}

/// Two-level model small enough for finite differences.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        input_len: 2,
        target_len: 2,
        height: 8,
        width: 8,
        channels: vec![4, 8],
        depth: vec![1, 1],
        globals: 2,
        heads: 2,
        cnn_channels: Some(4),
        norm_groups: 2,
        ..ModelConfig::tiny(2)
    }
}

fn nudged(t: &Tensor<f64>) -> Tensor<f64> {
    // Deterministic offsets so no parameter sits at an exact symmetric point.
    Tensor::from_fn(t.shape().to_vec(), |i| t.data()[i] + 0.1 * (((i * 7 + 3) % 11) as f64 / 11.0 - 0.5))
}

/// Finite-difference check of the whole model with an MSE-to-zero loss.
/// Coordinates whose stencil crosses a LeakyReLU kink are skipped and counted.
pub fn model_grad_check(samples: Option<usize>) -> Result<GradCheckReport> {
    model_grad_check_step(samples, GradCheck::default().step)
}

/// [`model_grad_check`] with an explicit finite-difference step.
pub fn model_grad_check_step(samples: Option<usize>, step: f64) -> Result<GradCheckReport> {
    let cfg = gradcheck_model_config();
    let model = Model::build(&cfg, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut inputs = vec![Tensor::from_fn([1, cfg.input_len, cfg.height, cfg.width, 1], |_| rng.random_range(0.0..1.0))];
    let params = model.params.cast::<f64>();
    inputs.extend(params.ids().map(|id| nudged(params.get(id))));
    let y_shape = [1, cfg.target_len, cfg.height, cfg.width, 1];
    let check = GradCheck { samples, seed: 6, step };
    Ok(check.report(&inputs, |tape, vars| {
        let p = Bound::from_vars(vars[1..].to_vec());
        let y = model.forward(&p, vars[0]).map_err(tensor_err)?;
        Ok(y.mse(tape.constant(Tensor::zeros(y_shape)))?)
    })?)
}

/// Exhaustive comparison of both CSI modes with an intersection-over-union
/// oracle over every prediction/truth assignment of `values` to
/// `steps x pixels` cells. Returns the number of assignments checked.
pub fn csi_enumeration(steps: usize, pixels: usize, values: &[f64]) -> std::result::Result<u64, String> {
    let cells = steps * pixels;
    let base = values.len() as u64;
    let total = base.pow(2 * cells as u32);
    (0..total).into_par_iter().try_for_each_init(
        || (vec![0.0; cells], vec![0.0; cells]),
        |(pred, truth), code| csi_case(code, base, values, steps, pixels, pred, truth),
    )?;
    Ok(total)
}

fn csi_case(code: u64, base: u64, values: &[f64], steps: usize, pixels: usize, pred: &mut [f64], truth: &mut [f64]) -> std::result::Result<(), String> {
    let cells = steps * pixels;
    let thresholds = &DEFAULT_THRESHOLDS;
    let mut c = code;
    for v in pred.iter_mut().chain(truth.iter_mut()) {
        *v = values[(c % base) as usize];
        c /= base;
    }
    let iou = |range: std::ops::Range<usize>, tau: f64| {
        let (mut inter, mut union) = (0u32, 0u32);
        for i in range {
            let (a, b) = (pred[i] >= tau, truth[i] >= tau);
            inter += (a && b) as u32;
            union += (a || b) as u32;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    };
    let pooled = csi_pooled_values(pred, truth, thresholds);
    let per = csi_per_step_values(pred, truth, [1, steps, pixels], thresholds);
    for (j, &tau) in thresholds.iter().enumerate() {
        let want_pooled = iou(0..cells, tau);
        let want_step: f64 = (0..steps).map(|s| iou(s * pixels..(s + 1) * pixels, tau)).sum::<f64>() / steps as f64;
        if pooled.csi[j] != want_pooled || (per.csi[j] - want_step).abs() > 1e-15 {
            return Err(format!("CSI mismatch at threshold {tau} for pred {pred:?} truth {truth:?}"));
        }
    }
    let mean = pooled.csi.iter().sum::<f64>() / thresholds.len() as f64;
    if pooled.csi_m != mean || per.csi_m6 != per.csi.iter().sum::<f64>() / thresholds.len() as f64 {
        return Err("CSI-M is not the mean of the per-threshold scores".into());
    }
    Ok(())
}

/// Kernel counters observed while running one block forward.
pub fn measured_counts(cfg: &PatternConfig, dims: [usize; 3], b: &BlockDims) -> OpCounts {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let glob = (b.globals > 0).then_some(b.global_ffn_ratio);
    let block = SelfBlock::build(&mut Init { store: &mut store, rng: &mut rng }, "b", &cfg.stages, b.channels, b.heads, b.ffn_ratio, glob);
    let g_param = (b.globals > 0).then(|| store.zeros("g", &[b.globals, b.channels]));
    let tape = Tape::<f32>::new();
    let p = store.bind(&tape, false);
    let x = tape.constant(Tensor::from_fn([1, dims[0], dims[1], dims[2], b.channels], |i| (i % 7) as f32 * 0.1));
    let g = g_param.map(|id| gather(&[p.var(id)], (0..b.globals as u32).collect::<Vec<_>>().into(), &[1, b.globals, b.channels]).expect("valid rows"));
    counted(|| block.forward(&p, x, g).expect("valid block")).1
}

/// Analytic versus counted work for every search-space pattern on `shapes`.
pub fn cost_exactness(shapes: &[[usize; 3]], channels: usize) -> std::result::Result<usize, String> {
    let mut checked = 0;
    for &dims in shapes {
        for e in enumerate_search_space() {
            let Ok(cfg) = PatternConfig::build(&e.template, dims, e.globals) else { continue };
            let b = BlockDims::new(channels, e.globals.min(3));
            let want = cost_model(&cfg, dims, &b).counts;
            let got = measured_counts(&cfg, dims, &b);
            if want != got {
                return Err(format!("{} on {dims:?}: model {want:?}, kernels {got:?}", e.label()));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn suite(name: &str, f: impl FnOnce() -> std::result::Result<String, String>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    SuiteResult { name: name.into(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn bound(name: &str, value: Result<f64>, tol: f64) -> std::result::Result<String, String> {
    match value {
        Ok(v) if v < tol => Ok(format!("{name} {v:.3e} < {tol:.0e}")),
        Ok(v) => Err(format!("{name} {v:.3e} >= {tol:.0e}")),
        Err(e) => Err(e.to_string()),
    }
}

pub fn run_selfcheck(opts: SelfcheckOptions) -> SelfcheckReport {
    let fast = opts.fast;
    let suites = vec![
        suite("bijection", || {
            let (ext, blocks, shifts): (&[usize], &[usize], &[usize]) =
                if fast { (&[1, 2, 5], &[1, 2, 4], &[0, 2]) } else { (&[1, 2, 3, 4, 5, 6], &[1, 2, 3, 4], &[0, 1, 2]) };
            bijection_sweep(ext, blocks, shifts, opts.corrupt_index_map).map(|n| format!("{n} decompositions round-trip exactly"))
        }),
        suite("dense-equivalence", || bound("max abs diff", dense_equivalence([3, 4, 4], 8, 2, 1), DENSE_TOLERANCE)),
        suite("grad-block", || bound("max relative error", block_grad_check(fast.then_some(4)), GRAD_TOLERANCE)),
        suite("grad-model", || {
            let r = model_grad_check(Some(if fast { 1 } else { 3 })).map_err(|e| e.to_string())?;
            if r.skipped * 4 > r.probed + r.skipped {
                return Err(format!("{} of {} probes straddle a kink", r.skipped, r.probed + r.skipped));
            }
            bound("max relative error", Ok(r.max_relative_error), GRAD_TOLERANCE)
                .map(|m| format!("{m} ({} probes, {} skipped at kinks)", r.probed, r.skipped))
        }),
        suite("csi-oracle", || {
            let (steps, px) = if fast { (2, 2) } else { (2, 3) };
            csi_enumeration(steps, px, &[0.0, 80.0, 200.0]).map(|n| format!("{n} prediction/truth pairs match"))
        }),
        suite("cost-model", || {
            let shapes: &[[usize; 3]] = if fast { &[[3, 5, 4]] } else { &[[3, 5, 4], [2, 8, 8], [5, 3, 7], [4, 4, 4]] };
            cost_exactness(shapes, 8).map(|n| format!("{n} pattern/shape pairs match exactly"))
        }),
    ];
    SelfcheckReport { fast, suites }
}
