//! Records a small network on a tape, backpropagates, and compares the
//! result against central finite differences.

use cuboidcast_tensor::{grad_check, Tape, Tensor};

fn main() -> cuboidcast_tensor::Result<()> {
    let tape = Tape::new();
    let x = tape.variable(Tensor::from_fn([4, 3], |i| (i as f64 * 0.37).sin()));
    let w = tape.variable(Tensor::from_fn([3, 2], |i| 0.5 - i as f64 * 0.2));
    let target = tape.constant(Tensor::zeros([4, 2]));

    let loss = x.linear(w, None)?.gelu().mse(target)?;
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", loss.item());
    println!("dL/dw {:?}", grads.wrt(w).data());

    // The same expression as a function of w alone.
    let xs = x.value();
    let err = grad_check(&w.value(), 1e-5, |t, w| {
        let x = t.constant(xs.as_ref().clone());
        x.linear(w, None)?.gelu().mse(t.constant(Tensor::zeros([4, 2])))
    })?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
