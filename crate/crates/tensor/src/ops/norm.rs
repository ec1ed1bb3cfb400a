use super::{Ctx, Op};
use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Normalization flavours used by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Over the trailing channel axis.
    Layer,
    /// Over channel groups of a `[N, .., C]` tensor, per leading index.
    Group(usize),
}

impl<'t, E: Element> Var<'t, E> {
    pub fn norm(self, kind: NormKind, gamma: Var<'t, E>, beta: Var<'t, E>) -> Result<Var<'t, E>> {
        match kind {
            NormKind::Layer => self.layer_norm(gamma, beta),
            NormKind::Group(g) => self.group_norm(g, gamma, beta),
        }
    }

    pub fn layer_norm(self, gamma: Var<'t, E>, beta: Var<'t, E>) -> Result<Var<'t, E>> {
        self.same_tape(&gamma);
        let x = self.value();
        let c = x.last_dim();
        check_affine("layer_norm", c, &gamma, &beta)?;
        let (gv, bv) = (gamma.value(), beta.value());
        let mut out = vec![E::zero(); x.len()];
        let mut stats = Vec::with_capacity(x.len() / c.max(1));
        for (row, dst) in x.data().chunks(c).zip(out.chunks_mut(c)) {
            let (mean, rstd) = moments(row.iter().copied(), c);
            for (j, (&v, d)) in row.iter().zip(dst.iter_mut()).enumerate() {
                *d = (v - mean) * rstd * gv.data()[j] + bv.data()[j];
            }
            stats.push((mean, rstd));
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.tape.push(t, Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, stats }))
    }

    pub fn group_norm(self, groups: usize, gamma: Var<'t, E>, beta: Var<'t, E>) -> Result<Var<'t, E>> {
        self.same_tape(&gamma);
        let x = self.value();
        let c = x.last_dim();
        if x.rank() < 2 || groups == 0 || c % groups != 0 {
            return dim_err("group_norm", format!("{groups} groups for shape {:?}", x.shape()));
        }
        check_affine("group_norm", c, &gamma, &beta)?;
        let (gv, bv) = (gamma.value(), beta.value());
        let (n, per) = (x.shape()[0], x.len() / x.shape()[0].max(1));
        let cg = c / groups;
        let count = per / c * cg;
        let mut out = vec![E::zero(); x.len()];
        let mut stats = Vec::with_capacity(n * groups);
        for s in 0..n {
            let sample = &x.data()[s * per..(s + 1) * per];
            let dst = &mut out[s * per..(s + 1) * per];
            for gi in 0..groups {
                let members = || sample.chunks(c).flat_map(move |px| px[gi * cg..(gi + 1) * cg].iter().copied());
                let (mean, rstd) = moments(members(), count);
                for (px, d) in sample.chunks(c).zip(dst.chunks_mut(c)) {
                    for j in gi * cg..(gi + 1) * cg {
                        d[j] = (px[j] - mean) * rstd * gv.data()[j] + bv.data()[j];
                    }
                }
                stats.push((mean, rstd));
            }
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.tape.push(t, Op::GroupNorm { x: self.id, gamma: gamma.id, beta: beta.id, groups, stats }))
    }
}

fn check_affine<E: Element>(op: &'static str, c: usize, gamma: &Var<'_, E>, beta: &Var<'_, E>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return dim_err(op, format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()));
    }
    Ok(())
}

fn moments<E: Element>(vals: impl Iterator<Item = E> + Clone, n: usize) -> (E, E) {
    let nf = E::of(n as f64);
    let mean = vals.clone().fold(E::zero(), |a, v| a + v) / nf;
    let var = vals.fold(E::zero(), |a, v| a + (v - mean) * (v - mean)) / nf;
    (mean, E::one() / (var + E::of(NORM_EPS)).sqrt())
}

/// Accumulates affine gradients and writes the input gradient for one
/// normalization group whose flat indices are produced by `idx`.
#[allow(clippy::too_many_arguments)]
fn group_backward<E: Element, I: Iterator<Item = usize>>(
    idx: impl Fn() -> I,
    x: &[E],
    g: &[E],
    gamma: &[E],
    c: usize,
    (mean, rstd): (E, E),
    gx: &mut [E],
    gg: &mut [E],
    gb: &mut [E],
) {
    let (mut s1, mut s2, mut n) = (E::zero(), E::zero(), 0usize);
    for i in idx() {
        let xhat = (x[i] - mean) * rstd;
        let ch = i % c;
        gg[ch] = gg[ch] + g[i] * xhat;
        gb[ch] = gb[ch] + g[i];
        let dxhat = g[i] * gamma[ch];
        s1 = s1 + dxhat;
        s2 = s2 + dxhat * xhat;
        n += 1;
    }
    let nf = E::of(n as f64);
    let (m1, m2) = (s1 / nf, s2 / nf);
    for i in idx() {
        let xhat = (x[i] - mean) * rstd;
        let dxhat = g[i] * gamma[i % c];
        gx[i] = rstd * (dxhat - m1 - xhat * m2);
    }
}

pub(super) fn layer_norm_backward<E: Element>(
    ctx: Ctx<'_, E>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    stats: &[(E, E)],
    g: &Tensor<E>,
) {
    let c = ctx.val(x).last_dim();
    finish(ctx, x, gamma, beta, |r| r * c..(r + 1) * c, stats, g);
}

pub(super) fn group_norm_backward<E: Element>(
    ctx: Ctx<'_, E>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    groups: usize,
    stats: &[(E, E)],
    g: &Tensor<E>,
) {
    let xv = ctx.val(x);
    let c = xv.last_dim();
    let per = xv.len() / xv.shape()[0].max(1);
    let cg = c / groups;
    let set = move |k: usize| {
        let (s, gi) = (k / groups, k % groups);
        (0..per / c).flat_map(move |p| (gi * cg..(gi + 1) * cg).map(move |j| s * per + p * c + j))
    };
    finish(ctx, x, gamma, beta, set, stats, g);
}

fn finish<E: Element, I: Iterator<Item = usize>>(
    mut ctx: Ctx<'_, E>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    set: impl Fn(usize) -> I,
    stats: &[(E, E)],
    g: &Tensor<E>,
) {
    let (xv, gv) = (ctx.val(x), ctx.val(gamma));
    let c = xv.last_dim();
    let mut gx = vec![E::zero(); xv.len()];
    let mut gg = vec![E::zero(); c];
    let mut gb = vec![E::zero(); c];
    for (k, &st) in stats.iter().enumerate() {
        group_backward(|| set(k), xv.data(), g.data(), gv.data(), c, st, &mut gx, &mut gg, &mut gb);
    }
    if ctx.needs(x) {
        ctx.add_data(x, gx);
    }
    ctx.add_data(gamma, gg);
    ctx.add_data(beta, gb);
}
