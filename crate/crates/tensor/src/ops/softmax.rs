use super::{Ctx, Op};
use crate::counter::{record, SOFTMAX_FLOPS_PER_ELEMENT};
use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

/// Numerically stable softmax of a contiguous slice.
pub fn softmax_in_place<E: Element>(row: &mut [E]) {
    let max = row.iter().fold(E::neg_infinity(), |m, &v| m.max(v));
    if max == E::neg_infinity() {
        row.iter_mut().for_each(|v| *v = E::zero());
        return;
    }
    let mut total = E::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    let inv = E::one() / total;
    row.iter_mut().for_each(|v| *v = *v * inv);
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, E: Element> Var<'t, E> {
    pub fn softmax(self, axis: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        if axis >= x.rank() {
            return dim_err("softmax", format!("axis {axis} for shape {:?}", x.shape()));
        }
        let (outer, n, inner) = split(x.shape(), axis);
        let mut out = x.data().to_vec();
        let mut buf = vec![E::zero(); n];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                for j in 0..n {
                    buf[j] = out[at(j)];
                }
                softmax_in_place(&mut buf);
                for j in 0..n {
                    out[at(j)] = buf[j];
                }
            }
        }
        record(|c| c.softmax_flops += x.len() as u64 * SOFTMAX_FLOPS_PER_ELEMENT);
        let t = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.tape.push(t, Op::Softmax { x: self.id, axis }))
    }
}

pub(super) fn softmax_backward<E: Element>(
    mut ctx: Ctx<'_, E>,
    x: NodeId,
    axis: usize,
    out: &Tensor<E>,
    g: &Tensor<E>,
) {
    let (outer, n, inner) = split(out.shape(), axis);
    let (y, gy) = (out.data(), g.data());
    let mut gx = vec![E::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let dot = (0..n).fold(E::zero(), |acc, j| acc + y[at(j)] * gy[at(j)]);
            for j in 0..n {
                gx[at(j)] = y[at(j)] * (gy[at(j)] - dot);
            }
        }
    }
    ctx.add_data(x, gx);
}

#[cfg(test)]
mod tests {
    use super::softmax_in_place;
    use crate::{Tape, Tensor};

    #[test]
    fn rows_sum_to_one_and_are_shift_invariant() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 3], &[1.0, 2.0, 3.0, 1001.0, 1002.0, 1003.0]).unwrap());
        let y = x.softmax(1).unwrap().value();
        let d = y.data();
        assert!((d[0] + d[1] + d[2] - 1.0).abs() < 1e-12);
        for j in 0..3 {
            assert!((d[j] - d[3 + j]).abs() < 1e-12);
        }
    }

    #[test]
    fn leading_axis_normalizes_columns() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 2], &[0.0, 5.0, 0.0, -5.0]).unwrap());
        let d = x.softmax(0).unwrap().value().data().to_vec();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[2] - 0.5).abs() < 1e-12);
        assert!((d[1] + d[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_masked_row_is_zero() {
        let mut row = [f64::NEG_INFINITY; 3];
        softmax_in_place(&mut row);
        assert_eq!(row, [0.0; 3]);
    }
}
