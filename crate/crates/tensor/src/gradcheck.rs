//! Central finite-difference gradient checks in double precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Coordinates probed per input; `None` probes all of them.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-3, samples: None, seed: 0 }
    }
}

/// Outcome of a [`GradCheck`] run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probed: usize,
    /// Coordinates whose stencil changed the branch of a piecewise-linear op.
    pub skipped: usize,
    /// `(input, coordinate, analytic, numeric)` at the max relative error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheck {
    /// Max relative error over the probed coordinates of every input of the
    /// scalar function `f`.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<f64>
    where
        F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
    {
        Ok(self.report(inputs, f)?.max_relative_error)
    }

    /// Like [`run`](Self::run), but coordinates where `x + h` or `x - h`
    /// lands on a different side of a kink than `x` are skipped and counted,
    /// since the central difference is not a derivative estimate there.
    pub fn report<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
    {
        let eval = |xs: &[Tensor<f64>]| -> Result<(f64, Vec<bool>)> {
            let tape = Tape::new();
            let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let y = f(&tape, &vars)?;
            tape.check_finite()?;
            Ok((y.item(), tape.branch_signature()))
        };
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
        let y = f(&tape, &vars)?;
        if y.len() != 1 {
            return Err(TensorError::Usage("grad_check needs a scalar function".into()));
        }
        let branches = tape.branch_signature();
        let grads = tape.backward(y)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = GradCheckReport { max_relative_error: 0.0, probed: 0, skipped: 0, worst: None };
        let mut probe = inputs.to_vec();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(*v);
            let n = inputs[i].len();
            let coords: Vec<usize> = match self.samples {
                Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
                _ => (0..n).collect(),
            };
            for c in coords {
                let orig = inputs[i].data()[c];
                probe[i].data_mut()[c] = orig + self.step;
                let (up, up_sig) = eval(&probe)?;
                probe[i].data_mut()[c] = orig - self.step;
                let (down, down_sig) = eval(&probe)?;
                probe[i].data_mut()[c] = orig;
                if up_sig != branches || down_sig != branches {
                    out.skipped += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * self.step);
                out.probed += 1;
                let a = analytic.data()[c];
                let e = relative_error(a, numeric);
                if out.worst.is_none() || e > out.max_relative_error {
                    out.max_relative_error = e;
                    out.worst = Some((i, c, a, numeric));
                }
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper for a single input with default settings.
pub fn grad_check<F>(x: &Tensor<f64>, step: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    GradCheck { step, ..Default::default() }.run(std::slice::from_ref(x), |t, v| f(t, v[0]))
}
