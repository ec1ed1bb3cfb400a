//! Runs one axial cuboid-attention block with global vectors on random
//! input and reports shapes and the instrumented operation count.

use cuboidcast::cuboid::{Init, SelfBlock};
use cuboidcast::patterns::{cost_model, BlockDims, PatternConfig, Template};
use cuboidcast_tensor::{counted, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cuboidcast::Result<()> {
    let (dims, c, globals) = ([4, 8, 8], 16, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let specs = Template::Axial.build(dims)?;
    let block = SelfBlock::build(&mut Init { store: &mut store, rng: &mut rng }, "block", &specs, c, 4, 4, Some(1));

    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let x = tape.constant(Tensor::from_fn([1, 4, 8, 8, c], |_| rng.random_range(-1.0..1.0)));
    let g = tape.constant(Tensor::from_fn([1, globals, c], |_| rng.random_range(-1.0..1.0)));
    let (out, counts) = counted(|| block.forward(&p, x, Some(g)));
    let (y, g) = out?;
    let g = g.expect("globals requested");

    let pattern = PatternConfig::build(&Template::Axial, dims, globals)?;
    let analytic = cost_model(&pattern, dims, &BlockDims { channels: c, globals, heads: 4, ffn_ratio: 4, global_ffn_ratio: 1 });
    println!("{} parameters, output {:?}, globals {:?}", store.count(), y.shape(), g.shape());
    println!("measured ops {} / analytic {}", counts.total(), analytic.total);
    Ok(())
}
