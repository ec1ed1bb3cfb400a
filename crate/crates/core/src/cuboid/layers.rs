use std::sync::Arc;

use cuboidcast_tensor::{attention, gather, AttentionMask, Bound, Element, ParamId, ParamStore, Var};
use rand::Rng;

use super::decompose::Decomposition;
use super::spec::CuboidSpec;
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

/// Parameter allocation with the shared initialization policy.
pub struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore<f32>,
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> LinearP {
        let w = self.store.trunc_normal(format!("{name}.w"), &[fan_in, fan_out], INIT_STD, self.rng);
        let b = bias.then(|| self.store.zeros(format!("{name}.b"), &[fan_out]));
        LinearP { w, b }
    }

    pub fn norm(&mut self, name: &str, c: usize) -> NormP {
        NormP { gamma: self.store.ones(format!("{name}.gamma"), &[c]), beta: self.store.zeros(format!("{name}.beta"), &[c]) }
    }

    pub fn ffn(&mut self, name: &str, c: usize, hidden: usize) -> FfnP {
        FfnP {
            norm: self.norm(&format!("{name}.norm"), c),
            up: self.linear(&format!("{name}.up"), c, hidden, true),
            down: self.linear(&format!("{name}.down"), hidden, c, true),
        }
    }

    pub fn attn(&mut self, name: &str, c: usize) -> AttnP {
        AttnP { qkv: self.linear(&format!("{name}.qkv"), c, 3 * c, false), proj: self.linear(&format!("{name}.proj"), c, c, true) }
    }
}

#[derive(Debug, Clone)]
pub struct LinearP {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl LinearP {
    pub fn apply<'t, E: Element>(&self, p: &Bound<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        Ok(x.linear(p.var(self.w), self.b.map(|b| p.var(b)))?)
    }
}

#[derive(Debug, Clone)]
pub struct NormP {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormP {
    pub fn layer<'t, E: Element>(&self, p: &Bound<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        Ok(x.layer_norm(p.var(self.gamma), p.var(self.beta))?)
    }

    pub fn group<'t, E: Element>(&self, p: &Bound<'t, E>, x: Var<'t, E>, groups: usize) -> Result<Var<'t, E>> {
        Ok(x.group_norm(groups, p.var(self.gamma), p.var(self.beta))?)
    }
}

/// Pre-norm residual feed-forward: `y + down(gelu(up(norm(y))))`.
#[derive(Debug, Clone)]
pub struct FfnP {
    pub norm: NormP,
    pub up: LinearP,
    pub down: LinearP,
}

impl FfnP {
    pub fn apply<'t, E: Element>(&self, p: &Bound<'t, E>, y: Var<'t, E>) -> Result<Var<'t, E>> {
        let h = self.up.apply(p, self.norm.layer(p, y)?)?.gelu();
        Ok(y.add(self.down.apply(p, h)?)?)
    }
}

/// Fused query/key/value projection plus output projection.
#[derive(Debug, Clone)]
pub struct AttnP {
    pub qkv: LinearP,
    pub proj: LinearP,
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

fn split5<E: Element>(x: &Var<'_, E>) -> Result<(usize, [usize; 3], usize)> {
    let s = x.shape();
    if s.len() != 5 {
        return Err(Error::Tensor(cuboidcast_tensor::TensorError::Dimension {
            op: "cuboid_attention",
            detail: format!("expected [B, T, H, W, C], got {s:?}"),
        }));
    }
    Ok((s[0], [s[1], s[2], s[3]], s[4]))
}

/// Decompose, attend and merge over normalized tokens `xn: [B, T, H, W, C]`.
/// With global vectors `gn: [B, P, C]` the cuboids also attend to them, and
/// the second return value is the global update: the vectors attending to
/// themselves and every token. Key/value projections of the tokens are
/// shared between both directions; the globals are projected by `global`.
/// Without `global.proj` the update is skipped and only the first output is live.
pub fn cuboid_attention<'t, E: Element>(
    p: &Bound<'t, E>,
    attn: &AttnP,
    global: Option<GlobalAttn<'_>>,
    heads: usize,
    spec: &CuboidSpec,
    xn: Var<'t, E>,
    gn: Option<Var<'t, E>>,
) -> Result<(Var<'t, E>, Option<Var<'t, E>>)> {
    let (batch, dims, c) = split5(&xn)?;
    if heads == 0 || c % heads != 0 {
        return Err(config_err(format!("{heads} heads do not divide {c} channels")));
    }
    let dec = Decomposition::new(dims, spec.clamped(dims))?;
    let (tokens, n, l) = (dec.tokens(), dec.n_cuboids(), dec.cuboid_len());
    let qkv_x = attn.qkv.apply(p, xn)?.reshape([batch * tokens * 3, c])?;

    let globals = match (gn, global) {
        (Some(g), Some(ga)) => {
            let gs = g.shape();
            if gs.len() != 3 || gs[0] != batch || gs[2] != c {
                return Err(config_err(format!("global vectors {gs:?} do not match tokens [{batch}, _, {c}]")));
            }
            Some((gs[1], ga.proj, ga.qkv.apply(p, g)?.reshape([batch * gs[1] * 3, c])?))
        }
        (None, _) => None,
        (Some(_), None) => return Err(config_err("global vectors given without global parameters".into())),
    };
    let n_glob = globals.as_ref().map_or(0, |g| g.0);

    let q = gather(&[qkv_x], dec.gather_index(batch, 3, 0), &[batch * n, l, c])?;
    let slot_valid: Vec<bool> = dec.slot_valid().collect();
    let kv_index = |offset: usize| -> Arc<[u32]> {
        let local = dec.gather_index(batch, 3, offset);
        let base = batch * tokens * 3;
        let mut idx = Vec::with_capacity(batch * n * (l + n_glob));
        for b in 0..batch {
            for cub in 0..n {
                let at = (b * n + cub) * l;
                idx.extend_from_slice(&local[at..at + l]);
                idx.extend((0..n_glob).map(|j| (base + (b * n_glob + j) * 3 + offset) as u32));
            }
        }
        idx.into()
    };
    let k_valid: Arc<[bool]> = (0..batch * n)
        .flat_map(|bc| {
            let cub = bc % n;
            slot_valid[cub * l..(cub + 1) * l].iter().copied().chain(std::iter::repeat_n(true, n_glob))
        })
        .collect();
    let mut srcs = vec![qkv_x];
    if let Some((_, _, qkv_g)) = &globals {
        srcs.push(*qkv_g);
    }
    let k = gather(&srcs, kv_index(1), &[batch * n, l + n_glob, c])?;
    let v = gather(&srcs, kv_index(2), &[batch * n, l + n_glob, c])?;
    let mask = AttentionMask { q_valid: Some(dec.query_mask(batch)), k_valid: Some(k_valid) };
    let out = attention(q, k, v, heads, mask)?.reshape([batch * n * l, c])?;
    let merged = gather(&[out], dec.merge_index(batch), &[batch, dims[0], dims[1], dims[2], c])?;
    let x_out = attn.proj.apply(p, merged)?;

    let g_out = match globals {
        None | Some((_, None, _)) => None,
        Some((pg, Some(proj), qkv_g)) => {
            let rows = |offset: usize| -> Arc<[u32]> {
                let base = batch * pg * 3;
                (0..batch)
                    .flat_map(|b| {
                        (0..pg)
                            .map(move |j| ((b * pg + j) * 3 + offset) as u32)
                            .chain((0..tokens).map(move |t| (base + (b * tokens + t) * 3 + offset) as u32))
                    })
                    .collect()
            };
            let gq_idx: Arc<[u32]> = (0..batch * pg).map(|r| (r * 3) as u32).collect();
            let gq = gather(&[qkv_g], gq_idx, &[batch, pg, c])?;
            let gk = gather(&[qkv_g, qkv_x], rows(1), &[batch, pg + tokens, c])?;
            let gv = gather(&[qkv_g, qkv_x], rows(2), &[batch, pg + tokens, c])?;
            let go = attention(gq, gk, gv, heads, AttentionMask::default())?;
            Some(proj.apply(p, go)?)
        }
    };
    Ok((x_out, g_out))
}

/// Projections of the global vectors inside [`cuboid_attention`].
#[derive(Debug, Clone, Copy)]
pub struct GlobalAttn<'a> {
    pub qkv: &'a LinearP,
    pub proj: Option<&'a LinearP>,
}

/// Global-vector branch of one stage.
#[derive(Debug, Clone)]
pub struct GlobalStage {
    pub norm: NormP,
    pub qkv: LinearP,
    /// Absent on a terminal stage, whose updated globals would go unused.
    pub update: Option<GlobalUpdate>,
}

#[derive(Debug, Clone)]
pub struct GlobalUpdate {
    pub proj: LinearP,
    pub ffn: FfnP,
}

impl GlobalStage {
    fn attn(&self) -> GlobalAttn<'_> {
        GlobalAttn { qkv: &self.qkv, proj: self.update.as_ref().map(|u| &u.proj) }
    }
}

/// One pattern stage: `X <- FFN(X + CubAttn(LN X, LN G))` and, with globals,
/// `G <- FFN_g(G + Attn_g(LN G, LN X))`, both from the stage inputs. A
/// terminal stage reads the globals but returns none.
#[derive(Debug, Clone)]
pub struct SelfStage {
    pub spec: CuboidSpec,
    pub heads: usize,
    pub norm: NormP,
    pub attn: AttnP,
    pub ffn: FfnP,
    pub global: Option<GlobalStage>,
}

impl SelfStage {
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        spec: CuboidSpec,
        c: usize,
        heads: usize,
        ffn_ratio: usize,
        global_ffn_ratio: Option<usize>,
        terminal: bool,
    ) -> Self {
        Self {
            spec,
            heads,
            norm: init.norm(&format!("{name}.norm"), c),
            attn: init.attn(&format!("{name}.attn"), c),
            ffn: init.ffn(&format!("{name}.ffn"), c, ffn_ratio * c),
            global: global_ffn_ratio.map(|r| GlobalStage {
                norm: init.norm(&format!("{name}.global.norm"), c),
                qkv: init.linear(&format!("{name}.global.attn.qkv"), c, 3 * c, false),
                update: (!terminal).then(|| GlobalUpdate {
                    proj: init.linear(&format!("{name}.global.attn.proj"), c, c, true),
                    ffn: init.ffn(&format!("{name}.global.ffn"), c, r * c),
                }),
            }),
        }
    }

    pub fn forward<'t, E: Element>(
        &self,
        p: &Bound<'t, E>,
        x: Var<'t, E>,
        g: Option<Var<'t, E>>,
    ) -> Result<(Var<'t, E>, Option<Var<'t, E>>)> {
        let xn = self.norm.layer(p, x)?;
        match (&self.global, g) {
            (Some(gs), Some(g)) => {
                let gn = gs.norm.layer(p, g)?;
                let (dx, dg) = cuboid_attention(p, &self.attn, Some(gs.attn()), self.heads, &self.spec, xn, Some(gn))?;
                let x = self.ffn.apply(p, x.add(dx)?)?;
                let g = match (&gs.update, dg) {
                    (Some(u), Some(dg)) => Some(u.ffn.apply(p, g.add(dg)?)?),
                    _ => None,
                };
                Ok((x, g))
            }
            (None, None) => {
                let (dx, _) = cuboid_attention(p, &self.attn, None, self.heads, &self.spec, xn, None)?;
                Ok((self.ffn.apply(p, x.add(dx)?)?, None))
            }
            (Some(_), None) => Err(config_err("stage expects global vectors".into())),
            (None, Some(_)) => Err(config_err("stage has no global parameters".into())),
        }
    }
}

/// A pattern's stages applied in order.
#[derive(Debug, Clone)]
pub struct SelfBlock {
    pub stages: Vec<SelfStage>,
}

impl SelfBlock {
    /// One stage per spec; `global_ffn_ratio` enables the global branch.
    pub fn build<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        specs: &[CuboidSpec],
        c: usize,
        heads: usize,
        ffn_ratio: usize,
        global_ffn_ratio: Option<usize>,
    ) -> Self {
        Self::build_stages(init, name, specs, c, heads, ffn_ratio, global_ffn_ratio, false)
    }

    /// Like [`SelfBlock::build`], but the last stage does not update the
    /// globals, for a block whose global output has no consumer.
    pub fn build_terminal<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        specs: &[CuboidSpec],
        c: usize,
        heads: usize,
        ffn_ratio: usize,
        global_ffn_ratio: Option<usize>,
    ) -> Self {
        Self::build_stages(init, name, specs, c, heads, ffn_ratio, global_ffn_ratio, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_stages<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        specs: &[CuboidSpec],
        c: usize,
        heads: usize,
        ffn_ratio: usize,
        global_ffn_ratio: Option<usize>,
        terminal: bool,
    ) -> Self {
        let last = specs.len().saturating_sub(1);
        let stages = specs
            .iter()
            .enumerate()
            .map(|(i, s)| SelfStage::build(init, &format!("{name}.stage{i}"), *s, c, heads, ffn_ratio, global_ffn_ratio, terminal && i == last))
            .collect();
        Self { stages }
    }

    pub fn forward<'t, E: Element>(
        &self,
        p: &Bound<'t, E>,
        mut x: Var<'t, E>,
        mut g: Option<Var<'t, E>>,
    ) -> Result<(Var<'t, E>, Option<Var<'t, E>>)> {
        for stage in &self.stages {
            (x, g) = stage.forward(p, x, g)?;
        }
        Ok((x, g))
    }
}

/// Decoder-to-memory attention: every decoder cuboid spanning all target
/// steps attends to the memory cuboid spanning all observed steps at the
/// same spatial cell. Queries come from the decoder only; keys and values
/// from the memory only.
#[derive(Debug, Clone)]
pub struct CrossStage {
    pub spec: CuboidSpec,
    pub heads: usize,
    pub norm_q: NormP,
    pub norm_mem: NormP,
    pub q: LinearP,
    pub kv: LinearP,
    pub proj: LinearP,
    pub ffn: FfnP,
}

impl CrossStage {
    pub fn build<R: Rng>(init: &mut Init<'_, R>, name: &str, spec: CuboidSpec, c: usize, heads: usize, ffn_ratio: usize) -> Self {
        Self {
            spec,
            heads,
            norm_q: init.norm(&format!("{name}.norm_q"), c),
            norm_mem: init.norm(&format!("{name}.norm_mem"), c),
            q: init.linear(&format!("{name}.q"), c, c, false),
            kv: init.linear(&format!("{name}.kv"), c, 2 * c, false),
            proj: init.linear(&format!("{name}.proj"), c, c, true),
            ffn: init.ffn(&format!("{name}.ffn"), c, ffn_ratio * c),
        }
    }

    /// Cross attention output before the residual and FFN.
    pub fn attend<'t, E: Element>(&self, p: &Bound<'t, E>, qn: Var<'t, E>, mn: Var<'t, E>) -> Result<Var<'t, E>> {
        let (batch, qd, c) = split5(&qn)?;
        let (mb, md, mc) = split5(&mn)?;
        if mb != batch || mc != c || md[1..] != qd[1..] {
            return Err(Error::Tensor(cuboidcast_tensor::TensorError::Dimension {
                op: "cuboid_cross",
                detail: format!("decoder {:?} vs memory {:?}", qn.shape(), mn.shape()),
            }));
        }
        if self.heads == 0 || c % self.heads != 0 {
            return Err(config_err(format!("{} heads do not divide {c} channels", self.heads)));
        }
        let side = |dims: [usize; 3]| {
            let mut s = self.spec;
            s.size[0] = dims[0];
            Decomposition::new(dims, s.clamped(dims))
        };
        let (dq, dm) = (side(qd)?, side(md)?);
        let (n, lq, lm) = (dq.n_cuboids(), dq.cuboid_len(), dm.cuboid_len());
        let q = self.q.apply(p, qn)?.reshape([batch * dq.tokens(), c])?;
        let kv = self.kv.apply(p, mn)?.reshape([batch * dm.tokens() * 2, c])?;
        let qc = gather(&[q], dq.gather_index(batch, 1, 0), &[batch * n, lq, c])?;
        let kc = gather(&[kv], dm.gather_index(batch, 2, 0), &[batch * n, lm, c])?;
        let vc = gather(&[kv], dm.gather_index(batch, 2, 1), &[batch * n, lm, c])?;
        let mask = AttentionMask { q_valid: Some(dq.query_mask(batch)), k_valid: Some(dm.query_mask(batch)) };
        let out = attention(qc, kc, vc, self.heads, mask)?.reshape([batch * n * lq, c])?;
        let merged = gather(&[out], dq.merge_index(batch), &[batch, qd[0], qd[1], qd[2], c])?;
        self.proj.apply(p, merged)
    }

    pub fn forward<'t, E: Element>(&self, p: &Bound<'t, E>, x: Var<'t, E>, mem: Var<'t, E>) -> Result<Var<'t, E>> {
        let dx = self.attend(p, self.norm_q.layer(p, x)?, self.norm_mem.layer(p, mem)?)?;
        self.ffn.apply(p, x.add(dx)?)
    }
}
