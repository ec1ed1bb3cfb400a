use std::sync::Arc;

use super::softmax::softmax_in_place;
use super::{Ctx, Op};
use crate::counter::{record, SOFTMAX_FLOPS_PER_ELEMENT};
use crate::element::{gemm, Element, MatRef};
use crate::error::{dim_err, Result};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

/// Per-row validity for queries and keys; `None` means all valid. Flags are
/// indexed by flat row (batch-major).
#[derive(Debug, Clone, Default)]
pub struct AttentionMask {
    pub q_valid: Option<Arc<[bool]>>,
    pub k_valid: Option<Arc<[bool]>>,
}

impl AttentionMask {
    fn rows(flags: &Option<Arc<[bool]>>, batch: usize, n: usize) -> Vec<usize> {
        match flags {
            Some(f) => (0..n).filter(|&i| f[batch * n + i]).collect(),
            None => (0..n).collect(),
        }
    }
}

struct Dims {
    batch: usize,
    nq: usize,
    nk: usize,
    c: usize,
    dh: usize,
}

fn dims<E: Element>(q: &Tensor<E>, k: &Tensor<E>, v: &Tensor<E>, heads: usize, mask: &AttentionMask) -> Result<Dims> {
    let ok = q.rank() == 3
        && k.shape() == v.shape()
        && k.rank() == 3
        && q.shape()[0] == k.shape()[0]
        && q.shape()[2] == k.shape()[2]
        && heads > 0
        && q.shape()[2] % heads == 0;
    if !ok {
        return dim_err("attention", format!("q {:?}, k {:?}, v {:?}, {heads} heads", q.shape(), k.shape(), v.shape()));
    }
    let (batch, nq, nk, c) = (q.shape()[0], q.shape()[1], k.shape()[1], q.shape()[2]);
    let bad = |f: &Option<Arc<[bool]>>, n: usize| f.as_ref().is_some_and(|f| f.len() != batch * n);
    if bad(&mask.q_valid, nq) || bad(&mask.k_valid, nk) {
        return dim_err("attention", "mask length does not match rows".to_string());
    }
    Ok(Dims { batch, nq, nk, c, dh: c / heads })
}

/// Copies head `h` of the selected rows into a dense `[rows, dh]` buffer.
fn pack<E: Element>(src: &[E], base: usize, rows: &[usize], c: usize, h: usize, dh: usize, out: &mut Vec<E>) {
    out.clear();
    for &r in rows {
        let at = (base + r) * c + h * dh;
        out.extend_from_slice(&src[at..at + dh]);
    }
}

fn unpack_add<E: Element>(dst: &mut [E], base: usize, rows: &[usize], c: usize, h: usize, dh: usize, buf: &[E]) {
    for (i, &r) in rows.iter().enumerate() {
        let at = (base + r) * c + h * dh;
        for (a, &v) in dst[at..at + dh].iter_mut().zip(&buf[i * dh..(i + 1) * dh]) {
            *a = *a + v;
        }
    }
}

/// Multi-head scaled dot-product attention over `[B, N, C]` tensors. Invalid
/// query rows produce zeros; invalid keys are excluded from every softmax.
pub fn attention<'t, E: Element>(
    q: Var<'t, E>,
    k: Var<'t, E>,
    v: Var<'t, E>,
    heads: usize,
    mask: AttentionMask,
) -> Result<Var<'t, E>> {
    q.same_tape(&k);
    q.same_tape(&v);
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    let d = dims(&qv, &kv, &vv, heads, &mask)?;
    let scale = E::of(1.0 / (d.dh as f64).sqrt());
    let mut out = vec![E::zero(); qv.len()];
    let mut probs = Vec::new();
    let (mut qb, mut kb, mut vb) = (Vec::new(), Vec::new(), Vec::new());
    let mut ob = Vec::new();
    let mut pairs = 0u64;
    for b in 0..d.batch {
        let qr = AttentionMask::rows(&mask.q_valid, b, d.nq);
        let kr = AttentionMask::rows(&mask.k_valid, b, d.nk);
        let (mq, mk) = (qr.len(), kr.len());
        if mq == 0 || mk == 0 {
            continue;
        }
        pairs += (mq * mk) as u64;
        for h in 0..heads {
            pack(qv.data(), b * d.nq, &qr, d.c, h, d.dh, &mut qb);
            pack(kv.data(), b * d.nk, &kr, d.c, h, d.dh, &mut kb);
            pack(vv.data(), b * d.nk, &kr, d.c, h, d.dh, &mut vb);
            let start = probs.len();
            probs.resize(start + mq * mk, E::zero());
            let s = &mut probs[start..];
            gemm(MatRef::new(&qb, mq, d.dh), MatRef::t(&kb, mk, d.dh), E::zero(), s);
            for row in s.chunks_mut(mk) {
                row.iter_mut().for_each(|x| *x = *x * scale);
                softmax_in_place(row);
            }
            ob.clear();
            ob.resize(mq * d.dh, E::zero());
            gemm(MatRef::new(s, mq, mk), MatRef::new(&vb, mk, d.dh), E::zero(), &mut ob);
            unpack_add(&mut out, b * d.nq, &qr, d.c, h, d.dh, &ob);
        }
    }
    record(|c| {
        c.score_macs += pairs * d.c as u64;
        c.value_macs += pairs * d.c as u64;
        c.softmax_flops += pairs * heads as u64 * SOFTMAX_FLOPS_PER_ELEMENT;
    });
    let t = Tensor::new(qv.shape().to_vec(), out)?;
    Ok(q.tape.push(t, Op::Attention { q: q.id, k: k.id, v: v.id, heads, mask, probs }))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward<E: Element>(
    mut ctx: Ctx<'_, E>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    mask: &AttentionMask,
    probs: &[E],
    g: &Tensor<E>,
) {
    let (qv, kv, vv) = (ctx.val(q), ctx.val(k), ctx.val(v));
    let d = dims(qv, kv, vv, heads, mask).expect("validated in forward");
    let scale = E::of(1.0 / (d.dh as f64).sqrt());
    let mut gq = vec![E::zero(); qv.len()];
    let mut gk = vec![E::zero(); kv.len()];
    let mut gv = vec![E::zero(); vv.len()];
    let (mut qb, mut kb, mut vb, mut gb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut dp, mut buf) = (Vec::new(), Vec::new());
    let mut at = 0;
    for b in 0..d.batch {
        let qr = AttentionMask::rows(&mask.q_valid, b, d.nq);
        let kr = AttentionMask::rows(&mask.k_valid, b, d.nk);
        let (mq, mk) = (qr.len(), kr.len());
        if mq == 0 || mk == 0 {
            continue;
        }
        for h in 0..heads {
            let p = &probs[at..at + mq * mk];
            at += mq * mk;
            pack(g.data(), b * d.nq, &qr, d.c, h, d.dh, &mut gb);
            pack(kv.data(), b * d.nk, &kr, d.c, h, d.dh, &mut kb);
            pack(vv.data(), b * d.nk, &kr, d.c, h, d.dh, &mut vb);
            pack(qv.data(), b * d.nq, &qr, d.c, h, d.dh, &mut qb);
            // dV = P^T dO
            buf.clear();
            buf.resize(mk * d.dh, E::zero());
            gemm(MatRef::t(p, mq, mk), MatRef::new(&gb, mq, d.dh), E::zero(), &mut buf);
            unpack_add(&mut gv, b * d.nk, &kr, d.c, h, d.dh, &buf);
            // dS = P * (dO V^T - rowdot) * scale
            dp.clear();
            dp.resize(mq * mk, E::zero());
            gemm(MatRef::new(&gb, mq, d.dh), MatRef::t(&vb, mk, d.dh), E::zero(), &mut dp);
            for (drow, prow) in dp.chunks_mut(mk).zip(p.chunks(mk)) {
                let dot = drow.iter().zip(prow).fold(E::zero(), |a, (&x, &y)| a + x * y);
                for (x, &y) in drow.iter_mut().zip(prow) {
                    *x = y * (*x - dot) * scale;
                }
            }
            buf.clear();
            buf.resize(mq * d.dh, E::zero());
            gemm(MatRef::new(&dp, mq, mk), MatRef::new(&kb, mk, d.dh), E::zero(), &mut buf);
            unpack_add(&mut gq, b * d.nq, &qr, d.c, h, d.dh, &buf);
            buf.clear();
            buf.resize(mk * d.dh, E::zero());
            gemm(MatRef::t(&dp, mq, mk), MatRef::new(&qb, mq, d.dh), E::zero(), &mut buf);
            unpack_add(&mut gk, b * d.nk, &kr, d.c, h, d.dh, &buf);
        }
    }
    for (id, grad) in [(q, gq), (k, gk), (v, gv)] {
        if ctx.needs(id) {
            ctx.add_data(id, grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{counted, Tape};

    /// Direct single-head reference with explicit masks.
    fn naive(q: &[f64], k: &[f64], v: &[f64], nq: usize, nk: usize, c: usize, kvalid: &[bool]) -> Vec<f64> {
        let mut out = vec![0.0; nq * c];
        for i in 0..nq {
            let s: Vec<f64> = (0..nk)
                .map(|j| {
                    if !kvalid[j] {
                        return f64::NEG_INFINITY;
                    }
                    (0..c).map(|t| q[i * c + t] * k[j * c + t]).sum::<f64>() / (c as f64).sqrt()
                })
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..nk {
                for t in 0..c {
                    out[i * c + t] += e[j] / z * v[j * c + t];
                }
            }
        }
        out
    }

    #[test]
    fn single_head_matches_reference_with_key_mask() {
        let (nq, nk, c) = (3, 4, 4);
        let q: Vec<f64> = (0..nq * c).map(|i| ((i * 31) % 7) as f64 / 7.0 - 0.4).collect();
        let k: Vec<f64> = (0..nk * c).map(|i| ((i * 17) % 5) as f64 / 5.0 - 0.3).collect();
        let v: Vec<f64> = (0..nk * c).map(|i| i as f64 / 10.0).collect();
        let kvalid = [true, false, true, true];
        let tape = Tape::<f64>::new();
        let mk = |d: &Vec<f64>, n| tape.constant(Tensor::new([1, n, c], d.clone()).unwrap());
        let mask = AttentionMask { q_valid: None, k_valid: Some(kvalid.to_vec().into()) };
        let (y, counts) = counted(|| attention(mk(&q, nq), mk(&k, nk), mk(&v, nk), 1, mask).unwrap());
        for (a, b) in y.value().data().iter().zip(naive(&q, &k, &v, nq, nk, c, &kvalid)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(counts.score_macs, (3 * 3 * c) as u64);
    }

    #[test]
    fn masked_query_rows_are_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([1, 2, 2], |i| i as f64 + 1.0));
        let mask = AttentionMask { q_valid: Some(vec![false, true].into()), k_valid: None };
        let y = attention(x, x, x, 2, mask).unwrap().value();
        assert_eq!(&y.data()[..2], &[0.0, 0.0]);
        assert!(y.data()[2] != 0.0);
    }

    #[test]
    fn heads_must_divide_channels() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 2, 6]));
        assert!(attention(x, x, x, 4, AttentionMask::default()).is_err());
    }
}
