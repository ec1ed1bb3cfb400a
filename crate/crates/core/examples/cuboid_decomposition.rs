//! Splits a small (T, H, W) grid into local and dilated cuboids, prints
//! which tokens land together, and merges them back.

use cuboidcast::cuboid::{CuboidSpec, Decomposition};
use cuboidcast_tensor::Tensor;

fn main() -> cuboidcast::Result<()> {
    let dims = [2, 4, 4];
    let x = Tensor::<f64>::from_fn([2, 4, 4, 1], |i| i as f64);
    for spec in [
        CuboidSpec::local([1, 2, 2]),
        CuboidSpec::dilated([1, 2, 2]),
        CuboidSpec::local([2, 3, 3]).with_shift([0, 1, 1]),
    ] {
        let d = Decomposition::new(dims, spec)?;
        let cuboids = d.decompose(&x)?;
        println!("{spec}: {} cuboids of {} slots, padded to {:?}", d.n_cuboids(), d.cuboid_len(), d.padded_dims());
        for (n, c) in cuboids.data().chunks(d.cuboid_len()).take(2).enumerate() {
            println!("  cuboid {n}: tokens {c:?}");
        }
        assert_eq!(d.merge(&cuboids)?, x);
    }
    println!("every decomposition merged back to the input");
    Ok(())
}
