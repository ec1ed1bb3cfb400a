use std::sync::Arc;

use cuboidcast_tensor::ops::{nearest_upsample_index, patch_merge_index};
use cuboidcast_tensor::{conv2d_3x3, counted, gather, OpCounts, Bound, Element, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::cuboid::{CrossStage, CuboidSpec, Init, LinearP, NormP, SelfBlock};
use crate::error::{Error, Result};
use crate::patterns::Template;

const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone)]
struct ConvP {
    w: ParamId,
    b: ParamId,
}

impl ConvP {
    fn build<R: rand::Rng>(init: &mut Init<'_, R>, name: &str, cin: usize, cout: usize) -> Self {
        let w = init.store.trunc_normal(format!("{name}.w"), &[3, 3, cin, cout], crate::cuboid::INIT_STD, init.rng);
        let b = init.store.zeros(format!("{name}.b"), &[cout]);
        Self { w, b }
    }

    fn apply<'t, E: Element>(&self, p: &Bound<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        Ok(conv2d_3x3(x, p.var(self.w), Some(p.var(self.b)))?)
    }
}

/// Learned positional embedding, factorized as `e_t + e_h + e_w`.
#[derive(Debug, Clone)]
struct PosEmbed {
    t: ParamId,
    h: ParamId,
    w: ParamId,
    dims: [usize; 3],
}

impl PosEmbed {
    fn build<R: rand::Rng>(init: &mut Init<'_, R>, name: &str, dims: [usize; 3], c: usize) -> Self {
        let mut axis = |a: &str, n: usize| init.store.trunc_normal(format!("{name}.{a}"), &[n, c], crate::cuboid::INIT_STD, init.rng);
        Self { t: axis("t", dims[0]), h: axis("h", dims[1]), w: axis("w", dims[2]), dims }
    }

    /// `[T*H*W, C]` table.
    fn table<'t, E: Element>(&self, p: &Bound<'t, E>) -> Result<Var<'t, E>> {
        let [t, h, w] = self.dims;
        let c = p.var(self.t).shape()[1];
        let n = t * h * w;
        let idx = |f: &dyn Fn(usize) -> usize| -> Arc<[u32]> { (0..n).map(|i| f(i) as u32).collect() };
        let et = gather(&[p.var(self.t)], idx(&|i| i / (h * w)), &[n, c])?;
        let eh = gather(&[p.var(self.h)], idx(&|i| (i / w) % h), &[n, c])?;
        let ew = gather(&[p.var(self.w)], idx(&|i| i % w), &[n, c])?;
        Ok(et.add(eh)?.add(ew)?)
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    blocks: Vec<SelfBlock>,
    globals: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct Downsample {
    norm: NormP,
    linear: LinearP,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    blocks: Vec<(SelfBlock, CrossStage)>,
}

/// Hierarchical cuboid-attention encoder-decoder.
#[derive(Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore<f32>,
    stem_conv: ConvP,
    stem_gn: NormP,
    stem_norm: NormP,
    stem_linear: LinearP,
    enc_pos: PosEmbed,
    encoder: Vec<EncoderLevel>,
    downs: Vec<Downsample>,
    dec_pos: PosEmbed,
    decoder: Vec<DecoderLevel>,
    ups: Vec<ConvP>,
    head_conv: ConvP,
    head_gn: NormP,
    head_linear: LinearP,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("cfg", &self.cfg).field("params", &self.params.count()).finish()
    }
}

fn reshape_err(e: cuboidcast_tensor::TensorError) -> Error {
    Error::Tensor(e)
}

impl Model {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let (cnn, c0, f) = (cfg.cnn_width(), cfg.channels[0], cfg.init_downsample);
        let stem_conv = ConvP::build(&mut init, "stem.conv", cfg.in_channels, cnn);
        let stem_gn = init.norm("stem.gn", cnn);
        let stem_norm = init.norm("stem.norm", f * f * cnn);
        let stem_linear = init.linear("stem.linear", f * f * cnn, c0, true);
        let (h0, w0) = cfg.level_hw(0);
        let enc_pos = PosEmbed::build(&mut init, "enc.pos", [cfg.input_len, h0, w0], c0);

        let glob = (cfg.globals > 0).then_some(cfg.global_ffn_ratio);
        let mut encoder = Vec::new();
        let mut downs = Vec::new();
        for m in 0..cfg.levels() {
            let (h, w) = cfg.level_hw(m);
            let c = cfg.channels[m];
            let specs = cfg.pattern.build([cfg.input_len, h, w])?;
            let blocks = (0..cfg.depth[m])
                .map(|d| {
                    let name = format!("enc{m}.block{d}");
                    if d + 1 == cfg.depth[m] {
                        SelfBlock::build_terminal(&mut init, &name, &specs, c, cfg.heads, cfg.ffn_ratio, glob)
                    } else {
                        SelfBlock::build(&mut init, &name, &specs, c, cfg.heads, cfg.ffn_ratio, glob)
                    }
                })
                .collect();
            let globals = glob.map(|_| init.store.trunc_normal(format!("enc{m}.globals"), &[cfg.globals, c], crate::cuboid::INIT_STD, init.rng));
            encoder.push(EncoderLevel { blocks, globals });
            if m + 1 < cfg.levels() {
                downs.push(Downsample {
                    norm: init.norm(&format!("down{m}.norm"), 4 * c),
                    linear: init.linear(&format!("down{m}.linear"), 4 * c, cfg.channels[m + 1], true),
                });
            }
        }

        let top = cfg.levels() - 1;
        let (ht, wt) = cfg.level_hw(top);
        let dec_pos = PosEmbed::build(&mut init, "dec.pos", [cfg.target_len, ht, wt], cfg.channels[top]);
        let mut decoder = Vec::new();
        let mut ups = Vec::new();
        for m in 0..cfg.levels() {
            let (h, w) = cfg.level_hw(m);
            let c = cfg.channels[m];
            let specs = Template::Axial.build([cfg.target_len, h, w])?;
            let blocks = (0..cfg.depth[m])
                .map(|d| {
                    let name = format!("dec{m}.block{d}");
                    let block = SelfBlock::build(&mut init, &name, &specs, c, cfg.heads, cfg.ffn_ratio, None);
                    let cross = CrossStage::build(&mut init, &format!("{name}.cross"), CuboidSpec::local([cfg.input_len, 1, 1]), c, cfg.heads, cfg.ffn_ratio);
                    (block, cross)
                })
                .collect();
            decoder.push(DecoderLevel { blocks });
            if m > 0 {
                ups.push(ConvP::build(&mut init, &format!("up{m}.conv"), c, cfg.channels[m - 1]));
            }
        }
        let head_conv = ConvP::build(&mut init, "head.conv", c0, cnn);
        let head_gn = init.norm("head.gn", cnn);
        let head_linear = init.linear("head.linear", cnn, cfg.out_channels, true);

        Ok(Self {
            cfg: cfg.clone(),
            params: store,
            stem_conv,
            stem_gn,
            stem_norm,
            stem_linear,
            enc_pos,
            encoder,
            downs,
            dec_pos,
            decoder,
            ups,
            head_conv,
            head_gn,
            head_linear,
        })
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    fn check_input<E: Element>(&self, x: &Var<'_, E>) -> Result<usize> {
        let c = &self.cfg;
        let s = x.shape();
        let want = [c.input_len, c.height, c.width, c.in_channels];
        if s.len() != 5 || s[1..] != want {
            return Err(Error::Tensor(cuboidcast_tensor::TensorError::Dimension {
                op: "model_input",
                detail: format!("expected [B, {}, {}, {}, {}], got {s:?}", want[0], want[1], want[2], want[3]),
            }));
        }
        Ok(s[0])
    }

    /// Merges `f x f` patches of `[N, H, W, C]`.
    fn patch_merge<'t, E: Element>(x: Var<'t, E>, f: usize) -> Result<Var<'t, E>> {
        let s = x.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let rows = x.reshape([n * h * w, c])?;
        Ok(gather(&[rows], patch_merge_index(n, h, w, f).into(), &[n, h / f, w / f, f * f * c])?)
    }

    fn upsample<'t, E: Element>(x: Var<'t, E>, f: usize) -> Result<Var<'t, E>> {
        let s = x.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let rows = x.reshape([n * h * w, c])?;
        Ok(gather(&[rows], nearest_upsample_index(n, h, w, f).into(), &[n, h * f, w * f, c])?)
    }

    fn tile_globals<'t, E: Element>(p: &Bound<'t, E>, id: ParamId, batch: usize) -> Result<Var<'t, E>> {
        let g = p.var(id);
        let s = g.shape();
        let idx: Arc<[u32]> = (0..batch * s[0]).map(|i| (i % s[0]) as u32).collect();
        Ok(gather(&[g], idx, &[batch, s[0], s[1]])?)
    }

    /// Encoder memories, finest level first, each `[B, T, H_m, W_m, C_m]`.
    pub fn encode<'t, E: Element>(&self, p: &Bound<'t, E>, x: Var<'t, E>) -> Result<Vec<Var<'t, E>>> {
        let c = &self.cfg;
        let batch = self.check_input(&x)?;
        let (t, f) = (c.input_len, c.init_downsample);
        let frames = x.reshape([batch * t, c.height, c.width, c.in_channels])?;
        let y = self.stem_conv.apply(p, frames)?;
        let y = self.stem_gn.group(p, y, c.norm_groups)?.leaky_relu(E::of(LEAKY_SLOPE));
        let y = if f > 1 { Self::patch_merge(y, f)? } else { y };
        let y = self.stem_linear.apply(p, self.stem_norm.layer(p, y)?)?;
        let (h0, w0) = c.level_hw(0);
        let pos = self.enc_pos.table(p)?.reshape([t, h0, w0, c.channels[0]])?;
        let mut x = y.reshape([batch, t, h0, w0, c.channels[0]])?.add_broadcast(pos)?;

        let mut memories = Vec::with_capacity(c.levels());
        for (m, level) in self.encoder.iter().enumerate() {
            let mut g = match level.globals {
                Some(id) => Some(Self::tile_globals(p, id, batch)?),
                None => None,
            };
            for block in &level.blocks {
                (x, g) = block.forward(p, x, g)?;
            }
            memories.push(x);
            if let Some(down) = self.downs.get(m) {
                let (h, w) = c.level_hw(m);
                let merged = Self::patch_merge(x.reshape([batch * t, h, w, c.channels[m]])?, 2)?;
                let y = down.linear.apply(p, down.norm.layer(p, merged)?)?;
                x = y.reshape([batch, t, h / 2, w / 2, c.channels[m + 1]]).map_err(reshape_err)?;
            }
        }
        Ok(memories)
    }

    /// Non-autoregressive decoding from the learned seed, coarse to fine.
    pub fn decode<'t, E: Element>(&self, p: &Bound<'t, E>, memories: &[Var<'t, E>]) -> Result<Var<'t, E>> {
        let c = &self.cfg;
        if memories.len() != c.levels() {
            return Err(Error::Usage(format!("{} memories for {} levels", memories.len(), c.levels())));
        }
        let batch = memories[0].shape()[0];
        let (k, top) = (c.target_len, c.levels() - 1);
        let (ht, wt) = c.level_hw(top);
        let seed = self.dec_pos.table(p)?;
        let n = k * ht * wt;
        let idx: Arc<[u32]> = (0..batch * n).map(|i| (i % n) as u32).collect();
        let mut x = gather(&[seed], idx, &[batch, k, ht, wt, c.channels[top]])?;
        for m in (0..c.levels()).rev() {
            for (block, cross) in &self.decoder[m].blocks {
                x = block.forward(p, x, None)?.0;
                x = cross.forward(p, x, memories[m])?;
            }
            if m > 0 {
                let (h, w) = c.level_hw(m);
                let up = Self::upsample(x.reshape([batch * k, h, w, c.channels[m]])?, 2)?;
                let y = self.ups[m - 1].apply(p, up)?;
                x = y.reshape([batch, k, 2 * h, 2 * w, c.channels[m - 1]])?;
            }
        }
        let (h0, w0) = c.level_hw(0);
        let mut y = x.reshape([batch * k, h0, w0, c.channels[0]])?;
        if c.init_downsample > 1 {
            y = Self::upsample(y, c.init_downsample)?;
        }
        let y = self.head_conv.apply(p, y)?;
        let y = self.head_gn.group(p, y, c.norm_groups)?.leaky_relu(E::of(LEAKY_SLOPE));
        let y = self.head_linear.apply(p, y)?;
        Ok(y.reshape([batch, k, c.height, c.width, c.out_channels])?)
    }

    pub fn forward<'t, E: Element>(&self, p: &Bound<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let memories = self.encode(p, x)?;
        self.decode(p, &memories)
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let y = self.forward(&p, tape.constant(x.clone()))?;
        tape.check_finite()?;
        Ok(y.value().as_ref().clone())
    }

    /// Instrumented operation counts of one forward pass on a single sample.
    pub fn forward_cost(&self) -> Result<OpCounts> {
        let c = &self.cfg;
        let x = Tensor::zeros([1, c.input_len, c.height, c.width, c.in_channels]);
        let (y, counts) = counted(|| self.predict(&x));
        y?;
        Ok(counts)
    }
}
