use super::{Ctx, Op};
use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tape::{NodeId, Var};
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
/// `tanh` through one `exp`, much cheaper than libm's `tanhf`.
#[inline]
fn tanh_exp<E: Element>(u: E) -> E {
    E::one() - E::of(2.0) / ((u + u).exp() + E::one())
}

pub fn gelu_scalar<E: Element>(x: E) -> E {
    let (c, a, half) = (E::of(GELU_C), E::of(GELU_A), E::of(0.5));
    half * x * (E::one() + tanh_exp(c * (x + a * x * x * x)))
}

fn gelu_grad<E: Element>(x: E) -> E {
    let (c, a, half) = (E::of(GELU_C), E::of(GELU_A), E::of(0.5));
    let t = tanh_exp(c * (x + a * x * x * x));
    half * (E::one() + t) + half * x * (E::one() - t * t) * c * (E::one() + E::of(3.0) * a * x * x)
}

fn zip_map<E: Element>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

impl<'t, E: Element> Var<'t, E> {
    fn binary(self, other: Var<'t, E>, op: &'static str) -> Result<(std::sync::Arc<Tensor<E>>, std::sync::Arc<Tensor<E>>)> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
        }
        Ok((a, b))
    }

    pub fn add(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.binary(other, "add")?;
        Ok(self.tape.push(zip_map(&a, &b, |x, y| x + y), Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.binary(other, "sub")?;
        Ok(self.tape.push(zip_map(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.binary(other, "mul")?;
        Ok(self.tape.push(zip_map(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, s: E) -> Var<'t, E> {
        let v = self.value().map(|x| x * s);
        self.tape.push(v, Op::Scale(self.id, s))
    }

    /// `self + p` where `p` is tiled over the leading axes of `self`.
    pub fn add_broadcast(self, p: Var<'t, E>) -> Result<Var<'t, E>> {
        self.same_tape(&p);
        let (x, pv) = (self.value(), p.value());
        let (xs, ps) = (x.shape(), pv.shape());
        if ps.len() > xs.len() || xs[xs.len() - ps.len()..] != *ps {
            return dim_err("add_broadcast", format!("{xs:?} does not end with {ps:?}"));
        }
        let n = pv.len();
        let mut out = x.as_ref().clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &q) in chunk.iter_mut().zip(pv.data()) {
                *o = *o + q;
            }
        }
        Ok(self.tape.push(out, Op::AddBroadcast { x: self.id, p: p.id }))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, E>> {
        let v = self.value().as_ref().clone().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id)))
    }

    pub fn sum(self) -> Var<'t, E> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, E> {
        let v = self.value();
        let s = v.sum() / E::of(v.len().max(1) as f64);
        self.tape.push(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Mean squared error, averaged over every element.
    pub fn mse(self, target: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.binary(target, "mse_loss")?;
        let s: E = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let m = s / E::of(a.len().max(1) as f64);
        Ok(self.tape.push(Tensor::scalar(m), Op::MseLoss(self.id, target.id)))
    }

    pub fn gelu(self) -> Var<'t, E> {
        let v = self.value().map(gelu_scalar);
        self.tape.push(v, Op::Gelu(self.id))
    }

    pub fn leaky_relu(self, slope: E) -> Var<'t, E> {
        let v = self.value().map(|x| if x >= E::zero() { x } else { x * slope });
        self.tape.push(v, Op::LeakyRelu(self.id, slope))
    }
}

pub(super) fn reshape_backward<E: Element>(mut ctx: Ctx<'_, E>, x: NodeId, g: &Tensor<E>) {
    ctx.add_data(x, g.data().to_vec());
}

pub(super) fn add_backward<E: Element>(mut ctx: Ctx<'_, E>, a: NodeId, b: NodeId, g: &Tensor<E>, sign_b: E) {
    ctx.add(a, g.clone());
    if ctx.needs(b) {
        ctx.add(b, g.map(|v| v * sign_b));
    }
}

pub(super) fn mul_backward<E: Element>(mut ctx: Ctx<'_, E>, a: NodeId, b: NodeId, g: &Tensor<E>) {
    if ctx.needs(a) {
        let ga = zip_map(g, ctx.val(b), |x, y| x * y);
        ctx.add(a, ga);
    }
    if ctx.needs(b) {
        let gb = zip_map(g, ctx.val(a), |x, y| x * y);
        ctx.add(b, gb);
    }
}

pub(super) fn scale_backward<E: Element>(mut ctx: Ctx<'_, E>, x: NodeId, s: E, g: &Tensor<E>) {
    ctx.add(x, g.map(|v| v * s));
}

pub(super) fn add_broadcast_backward<E: Element>(mut ctx: Ctx<'_, E>, x: NodeId, p: NodeId, g: &Tensor<E>) {
    ctx.add(x, g.clone());
    if ctx.needs(p) {
        let n = ctx.val(p).len();
        let mut acc = vec![E::zero(); n];
        for chunk in g.data().chunks(n) {
            for (a, &v) in acc.iter_mut().zip(chunk) {
                *a = *a + v;
            }
        }
        ctx.add_data(p, acc);
    }
}

pub(super) fn sum_backward<E: Element>(mut ctx: Ctx<'_, E>, x: NodeId, g: &Tensor<E>, factor: E) {
    let v = g.data()[0] * factor;
    let n = ctx.val(x).len();
    ctx.add_data(x, vec![v; n]);
}

pub(super) fn mse_backward<E: Element>(mut ctx: Ctx<'_, E>, a: NodeId, b: NodeId, g: &Tensor<E>) {
    let n = E::of(ctx.val(a).len().max(1) as f64);
    let k = E::of(2.0) * g.data()[0] / n;
    let diff = zip_map(ctx.val(a), ctx.val(b), |x, y| (x - y) * k);
    if ctx.needs(b) {
        ctx.add(b, diff.map(|v| -v));
    }
    ctx.add(a, diff);
}

pub(super) fn gelu_backward<E: Element>(mut ctx: Ctx<'_, E>, x: NodeId, g: &Tensor<E>) {
    let gx = zip_map(g, ctx.val(x), |gv, xv| gv * gelu_grad(xv));
    ctx.add(x, gx);
}

pub(super) fn leaky_backward<E: Element>(mut ctx: Ctx<'_, E>, x: NodeId, slope: E, g: &Tensor<E>) {
    let gx = zip_map(g, ctx.val(x), |gv, xv| if xv >= E::zero() { gv } else { gv * slope });
    ctx.add(x, gx);
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    /// Exact GELU through a high-precision erf series.
    fn gelu_exact(x: f64) -> f64 {
        // erf by Taylor series; converges quickly for |x| <= 3 / sqrt(2).
        let z = x / std::f64::consts::SQRT_2;
        let mut term = z;
        let mut sum = z;
        for n in 1..200 {
            term *= -z * z / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        let erf = 2.0 / std::f64::consts::PI.sqrt() * sum;
        0.5 * x * (1.0 + erf)
    }

    #[test]
    fn gelu_matches_cdf_form() {
        assert_eq!(super::gelu_scalar(0.0f64), 0.0);
        assert!((super::gelu_scalar(3.0f64) - gelu_exact(3.0)).abs() < 1e-3);
        for i in -30..=30 {
            let x = i as f64 / 10.0;
            assert!((super::gelu_scalar(x) - gelu_exact(x)).abs() < 1e-3, "x = {x}");
        }
    }

    #[test]
    fn leaky_relu_slope() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([3], &[-1.0, 0.0, 2.0]).unwrap());
        let y = x.leaky_relu(0.1);
        assert_eq!(y.value().data(), &[-0.1, 0.0, 2.0]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let tape = Tape::<f64>::new();
        let xv = Tensor::from_f64([2, 2], &[1.0, -2.0, 0.5, 3.0]).unwrap();
        let x = tape.variable(xv.clone());
        let loss = x.sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 1.0));

        let tape = Tape::<f64>::new();
        let x = tape.variable(xv.clone());
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x), xv.map(|v| 2.0 * v));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::zeros([3, 2]));
        let p = tape.variable(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let y = x.add_broadcast(p).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.wrt(p).data(), &[3.0, 3.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::zeros([2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::ones([2]));
        let unused = tape.variable(Tensor::ones([3]));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Tensor::zeros([3]));
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::from_f64([1], &[f64::MAX]).unwrap());
        let y = x.scale(10.0);
        assert_eq!(tape.first_non_finite(), Some("scale"));
        assert!(tape.backward(y.sum()).is_err());
    }
}
