use super::{Ctx, Op};
use crate::counter::record;
use crate::element::{gemm, Element, MatRef};
use crate::error::{dim_err, Result};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

/// Output pixels processed per im2col chunk.
const CHUNK: usize = 2048;

struct Geom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

impl Geom {
    fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    /// Fills `cols` with the 3x3 neighbourhoods of pixels `start..end`,
    /// tap-major then input channel.
    fn im2col<E: Element>(&self, x: &[E], start: usize, end: usize, cols: &mut [E]) {
        let k = 9 * self.cin;
        for (r, p) in (start..end).enumerate() {
            let (s, yx) = (p / (self.h * self.w), p % (self.h * self.w));
            let (y, xx) = (yx / self.w, yx % self.w);
            let row = &mut cols[r * k..(r + 1) * k];
            for tap in 0..9 {
                let (yy, xs) = (y as isize + tap as isize / 3 - 1, xx as isize + tap as isize % 3 - 1);
                let dst = &mut row[tap * self.cin..(tap + 1) * self.cin];
                if yy < 0 || xs < 0 || yy >= self.h as isize || xs >= self.w as isize {
                    dst.fill(E::zero());
                } else {
                    let src = ((s * self.h + yy as usize) * self.w + xs as usize) * self.cin;
                    dst.copy_from_slice(&x[src..src + self.cin]);
                }
            }
        }
    }

    fn col2im<E: Element>(&self, cols: &[E], start: usize, end: usize, gx: &mut [E]) {
        let k = 9 * self.cin;
        for (r, p) in (start..end).enumerate() {
            let (s, yx) = (p / (self.h * self.w), p % (self.h * self.w));
            let (y, xx) = (yx / self.w, yx % self.w);
            let row = &cols[r * k..(r + 1) * k];
            for tap in 0..9 {
                let (yy, xs) = (y as isize + tap as isize / 3 - 1, xx as isize + tap as isize % 3 - 1);
                if yy < 0 || xs < 0 || yy >= self.h as isize || xs >= self.w as isize {
                    continue;
                }
                let dst = ((s * self.h + yy as usize) * self.w + xs as usize) * self.cin;
                for (a, &v) in gx[dst..dst + self.cin].iter_mut().zip(&row[tap * self.cin..(tap + 1) * self.cin]) {
                    *a = *a + v;
                }
            }
        }
    }
}

fn geometry<E: Element>(x: &Tensor<E>, w: &Tensor<E>) -> Result<Geom> {
    if x.rank() != 4 || w.rank() != 4 || w.shape()[..3] != [3, 3, x.shape()[3]] {
        return dim_err("conv2d_3x3", format!("input {:?}, weight {:?}", x.shape(), w.shape()));
    }
    let s = x.shape();
    Ok(Geom { n: s[0], h: s[1], w: s[2], cin: s[3], cout: w.shape()[3] })
}

/// Same-padded 3x3 convolution over `[N, H, W, Cin]` with weight `[3, 3, Cin, Cout]`.
pub fn conv2d_3x3<'t, E: Element>(x: Var<'t, E>, w: Var<'t, E>, b: Option<Var<'t, E>>) -> Result<Var<'t, E>> {
    x.same_tape(&w);
    let (xv, wv) = (x.value(), w.value());
    let geo = geometry(&xv, &wv)?;
    let k = 9 * geo.cin;
    let mut out = vec![E::zero(); geo.pixels() * geo.cout];
    if let Some(b) = b {
        let bv = b.value();
        if bv.shape() != [geo.cout] {
            return dim_err("conv2d_3x3", format!("bias {:?}", bv.shape()));
        }
        for row in out.chunks_mut(geo.cout) {
            row.copy_from_slice(bv.data());
        }
    }
    let mut cols = vec![E::zero(); CHUNK.min(geo.pixels()) * k];
    for start in (0..geo.pixels()).step_by(CHUNK) {
        let end = (start + CHUNK).min(geo.pixels());
        let rows = end - start;
        geo.im2col(xv.data(), start, end, &mut cols);
        gemm(
            MatRef::new(&cols[..rows * k], rows, k),
            MatRef::new(wv.data(), k, geo.cout),
            E::one(),
            &mut out[start * geo.cout..end * geo.cout],
        );
    }
    record(|c| c.conv_macs += (geo.pixels() * k * geo.cout) as u64);
    let t = Tensor::new([geo.n, geo.h, geo.w, geo.cout], out)?;
    Ok(x.tape.push(t, Op::Conv3x3 { x: x.id, w: w.id, b: b.map(|b| b.id) }))
}

pub(super) fn conv_backward<E: Element>(
    mut ctx: Ctx<'_, E>,
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    g: &Tensor<E>,
) {
    let (xv, wv) = (ctx.val(x), ctx.val(w));
    let geo = geometry(xv, wv).expect("validated in forward");
    let k = 9 * geo.cin;
    let mut gx = vec![E::zero(); xv.len()];
    let mut gw = vec![E::zero(); k * geo.cout];
    let mut cols = vec![E::zero(); CHUNK.min(geo.pixels()) * k];
    for start in (0..geo.pixels()).step_by(CHUNK) {
        let end = (start + CHUNK).min(geo.pixels());
        let rows = end - start;
        let gs = &g.data()[start * geo.cout..end * geo.cout];
        if ctx.needs(w) {
            geo.im2col(xv.data(), start, end, &mut cols);
            gemm(MatRef::t(&cols[..rows * k], rows, k), MatRef::new(gs, rows, geo.cout), E::one(), &mut gw);
        }
        if ctx.needs(x) {
            let c = &mut cols[..rows * k];
            gemm(MatRef::new(gs, rows, geo.cout), MatRef::t(wv.data(), k, geo.cout), E::zero(), c);
            geo.col2im(c, start, end, &mut gx);
        }
    }
    if ctx.needs(x) {
        ctx.add_data(x, gx);
    }
    if ctx.needs(w) {
        ctx.add_data(w, gw);
    }
    if let Some(b) = b {
        let mut gb = vec![E::zero(); geo.cout];
        for row in g.data().chunks(geo.cout) {
            for (a, &v) in gb.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        ctx.add_data(b, gb);
    }
}
