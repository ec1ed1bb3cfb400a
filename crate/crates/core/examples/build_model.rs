//! Builds the 64x64 configuration with and without global vectors and
//! prints parameter totals.

use cuboidcast::model::{Model, ModelConfig};

fn main() -> cuboidcast::Result<()> {
    for globals in [0, 8] {
        let model = Model::build(&ModelConfig::moving_mnist(globals), 0)?;
        println!("globals={globals}: {:.3}M parameters", model.count_params() as f64 / 1e6);
    }
    Ok(())
}
