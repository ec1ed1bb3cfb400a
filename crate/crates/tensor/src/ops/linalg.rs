use super::{Ctx, Op};
use crate::counter::record;
use crate::element::{gemm, Element, MatRef};
use crate::error::{dim_err, Result};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

impl<'t, E: Element> Var<'t, E> {
    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return dim_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![E::zero(); m * n];
        gemm(MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, n), E::zero(), &mut out);
        record(|c| c.linear_macs += (m * k * n) as u64);
        let t = Tensor::new([m, n], out)?;
        Ok(self.tape.push(t, Op::MatMul(self.id, other.id)))
    }

    /// Affine map over the trailing axis: `x[.., in] . w[in, out] + b[out]`.
    pub fn linear(self, w: Var<'t, E>, b: Option<Var<'t, E>>) -> Result<Var<'t, E>> {
        self.same_tape(&w);
        let (x, wv) = (self.value(), w.value());
        let fan_in = x.last_dim();
        if wv.rank() != 2 || wv.shape()[0] != fan_in || x.rank() == 0 {
            return dim_err("linear", format!("input {:?}, weight {:?}", x.shape(), wv.shape()));
        }
        let fan_out = wv.shape()[1];
        let rows = x.len() / fan_in.max(1);
        let mut out = vec![E::zero(); rows * fan_out];
        if let Some(b) = b {
            let bv = b.value();
            if bv.shape() != [fan_out] {
                return dim_err("linear", format!("bias {:?} for {fan_out} outputs", bv.shape()));
            }
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if b.is_some() { E::one() } else { E::zero() };
        gemm(MatRef::new(x.data(), rows, fan_in), MatRef::new(wv.data(), fan_in, fan_out), beta, &mut out);
        record(|c| c.linear_macs += (rows * fan_in * fan_out) as u64);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let t = Tensor::new(shape, out)?;
        Ok(self.tape.push(t, Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) }))
    }
}

pub(super) fn matmul_backward<E: Element>(mut ctx: Ctx<'_, E>, a: NodeId, b: NodeId, g: &Tensor<E>) {
    let (av, bv) = (ctx.val(a), ctx.val(b));
    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
    if ctx.needs(a) {
        let mut ga = vec![E::zero(); m * k];
        gemm(MatRef::new(g.data(), m, n), MatRef::t(bv.data(), k, n), E::zero(), &mut ga);
        ctx.add_data(a, ga);
    }
    if ctx.needs(b) {
        let av = ctx.val(a);
        let mut gb = vec![E::zero(); k * n];
        gemm(MatRef::t(av.data(), m, k), MatRef::new(g.data(), m, n), E::zero(), &mut gb);
        ctx.add_data(b, gb);
    }
}

pub(super) fn linear_backward<E: Element>(
    mut ctx: Ctx<'_, E>,
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    g: &Tensor<E>,
) {
    let (fan_in, fan_out) = {
        let wv = ctx.val(w);
        (wv.shape()[0], wv.shape()[1])
    };
    let rows = g.len() / fan_out.max(1);
    if ctx.needs(x) {
        let mut gx = vec![E::zero(); rows * fan_in];
        gemm(MatRef::new(g.data(), rows, fan_out), MatRef::t(ctx.val(w).data(), fan_in, fan_out), E::zero(), &mut gx);
        ctx.add_data(x, gx);
    }
    if ctx.needs(w) {
        let mut gw = vec![E::zero(); fan_in * fan_out];
        gemm(MatRef::t(ctx.val(x).data(), rows, fan_in), MatRef::new(g.data(), rows, fan_out), E::zero(), &mut gw);
        ctx.add_data(w, gw);
    }
    if let Some(b) = b {
        if ctx.needs(b) {
            let mut gb = vec![E::zero(); fan_out];
            for row in g.data().chunks(fan_out) {
                for (a, &v) in gb.iter_mut().zip(row) {
                    *a = *a + v;
                }
            }
            ctx.add_data(b, gb);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::{counted, Tape, Tensor};

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_and_hand_product() {
        let tape = Tape::<f64>::new();
        let i2 = tape.constant(Tensor::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        assert_eq!(i2.matmul(i2).unwrap().value().data(), &[1.0, 0.0, 0.0, 1.0]);
        let a = tape.constant(Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([2, 1], &[1.0, 1.0]).unwrap());
        assert_eq!(a.matmul(b).unwrap().value().data(), &[3.0, 7.0]);
    }

    #[test]
    fn random_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = Tape::<f64>::new();
        let av = tape.constant(Tensor::new([5, 4], a.clone()).unwrap());
        let bv = tape.constant(Tensor::new([4, 3], b.clone()).unwrap());
        let (c, counts) = counted(|| av.matmul(bv).unwrap());
        let oracle = naive(&a, &b, 5, 4, 3);
        for (x, y) in c.value().data().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(counts.linear_macs, 60);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        assert!(a.matmul(a).is_err());
    }

    #[test]
    fn linear_with_bias_counts_params() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 3], &[1.0, 2.0, 3.0]).unwrap());
        let w = tape.constant(Tensor::from_f64([3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([2], &[0.5, -0.5]).unwrap());
        let y = x.linear(w, Some(b)).unwrap();
        assert_eq!(y.value().data(), &[4.5, 4.5]);
    }
}
