use std::sync::Arc;

use super::{Ctx, Op};
use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

/// Index value producing a zero row.
pub const NONE: u32 = u32::MAX;

/// Row gather over the concatenation of `srcs`, each viewed as rows of its
/// trailing dimension. Entry `i` of `index` selects the output row `i`; rows
/// are numbered across sources in order, and [`NONE`] yields zeros.
/// `shape` is the output shape and must hold `index.len()` rows.
pub fn gather<'t, E: Element>(srcs: &[Var<'t, E>], index: Arc<[u32]>, shape: &[usize]) -> Result<Var<'t, E>> {
    let Some(first) = srcs.first() else {
        return dim_err("gather", "no sources".to_string());
    };
    let vals: Vec<_> = srcs.iter().map(|s| {
        first.same_tape(s);
        s.value()
    }).collect();
    let row = vals[0].last_dim();
    if vals.iter().any(|v| v.last_dim() != row || v.rank() == 0) {
        return dim_err("gather", "sources differ in row width".to_string());
    }
    if shape.iter().product::<usize>() != index.len() * row {
        return dim_err("gather", format!("{} rows of {row} into {shape:?}", index.len()));
    }
    let offsets = row_offsets(&vals, row);
    let total = *offsets.last().unwrap();
    let mut out = vec![E::zero(); index.len() * row];
    for (dst, &i) in out.chunks_mut(row.max(1)).zip(index.iter()) {
        if i == NONE {
            continue;
        }
        let i = i as usize;
        if i >= total {
            return dim_err("gather", format!("row {i} out of {total}"));
        }
        let s = offsets.partition_point(|&o| o <= i) - 1;
        let local = i - offsets[s];
        dst.copy_from_slice(&vals[s].data()[local * row..(local + 1) * row]);
    }
    let t = Tensor::new(shape.to_vec(), out)?;
    let ids = srcs.iter().map(|s| s.id).collect();
    Ok(first.tape.push(t, Op::Gather { srcs: ids, row, index }))
}

fn row_offsets<E: Element, T: std::ops::Deref<Target = Tensor<E>>>(vals: &[T], row: usize) -> Vec<usize> {
    let mut offsets = vec![0];
    for v in vals {
        offsets.push(offsets.last().unwrap() + v.len() / row.max(1));
    }
    offsets
}

pub(super) fn gather_backward<E: Element>(
    mut ctx: Ctx<'_, E>,
    srcs: &[NodeId],
    row: usize,
    index: &[u32],
    g: &Tensor<E>,
) {
    let vals: Vec<&Tensor<E>> = srcs.iter().map(|&s| ctx.val(s)).collect();
    let offsets = row_offsets(&vals, row);
    let mut bufs: Vec<Vec<E>> = vals.iter().map(|v| vec![E::zero(); v.len()]).collect();
    for (src, &i) in g.data().chunks(row.max(1)).zip(index) {
        if i == NONE {
            continue;
        }
        let i = i as usize;
        let s = offsets.partition_point(|&o| o <= i) - 1;
        let local = i - offsets[s];
        for (a, &v) in bufs[s][local * row..(local + 1) * row].iter_mut().zip(src) {
            *a = *a + v;
        }
    }
    for (&id, buf) in srcs.iter().zip(bufs) {
        if ctx.needs(id) {
            ctx.add_data(id, buf);
        }
    }
}

/// Rows of `[N, H, W, C]` arranged as `[N, H/f, W/f, f*f*C]` with channel order
/// (dy, dx, c).
pub fn patch_merge_index(n: usize, h: usize, w: usize, f: usize) -> Vec<u32> {
    let (ho, wo) = (h / f, w / f);
    let mut idx = Vec::with_capacity(n * h * w);
    for b in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                for dy in 0..f {
                    for dx in 0..f {
                        idx.push((((b * h) + y * f + dy) * w + x * f + dx) as u32);
                    }
                }
            }
        }
    }
    idx
}

/// Inverse of [`patch_merge_index`]: rows of width `C` taken from a merged
/// `[N, h, w, f*f*C]` tensor to rebuild `[N, h*f, w*f, C]`.
pub fn patch_unmerge_index(n: usize, h: usize, w: usize, f: usize) -> Vec<u32> {
    let (ho, wo) = (h * f, w * f);
    let mut idx = Vec::with_capacity(n * ho * wo);
    for b in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                let cell = (b * h + y / f) * w + x / f;
                idx.push((cell * f * f + (y % f) * f + x % f) as u32);
            }
        }
    }
    idx
}

/// Nearest-neighbour upsampling of `[N, H, W, C]` by `f`.
pub fn nearest_upsample_index(n: usize, h: usize, w: usize, f: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(n * h * w * f * f);
    for b in 0..n {
        for y in 0..h * f {
            for x in 0..w * f {
                idx.push(((b * h + y / f) * w + x / f) as u32);
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn multi_source_rows_and_zero_fill() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([1, 2], &[5.0, 6.0]).unwrap());
        let y = gather(&[a, b], vec![2, NONE, 0].into(), &[3, 2]).unwrap();
        assert_eq!(y.value().data(), &[5.0, 6.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn out_of_range_row_is_an_error() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([2, 2]));
        assert!(gather(&[a], vec![2].into(), &[1, 2]).is_err());
    }

    #[test]
    fn merge_then_unmerge_round_trips() {
        let (n, h, w, f, c) = (2, 4, 6, 2, 3);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([n, h, w, c], |i| i as f64));
        let m = gather(&[x], patch_merge_index(n, h, w, f).into(), &[n, h / f, w / f, f * f * c]).unwrap();
        assert_eq!(m.value().at(&[0, 0, 0, c]), x.value().at(&[0, 0, 1, 0]));
        assert_eq!(m.value().at(&[0, 0, 0, 2 * c]), x.value().at(&[0, 1, 0, 0]));
        let m = m.reshape([n * h * w, c]).unwrap();
        let u = gather(&[m], patch_unmerge_index(n, h / f, w / f, f).into(), &[n, h, w, c]).unwrap();
        assert_eq!(u.value().data(), x.value().data());
    }

    #[test]
    fn upsample_repeats_pixels() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 1, 2, 1], &[1.0, 2.0]).unwrap());
        let y = gather(&[x], nearest_upsample_index(1, 1, 2, 2).into(), &[1, 2, 4, 1]).unwrap();
        assert_eq!(y.value().data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
