//! Cost of every search-space pattern on a 10x32x32 tensor with 64
//! channels, relative to full attention.

use cuboidcast::patterns::{cost_model, enumerate_search_space, BlockDims, PatternConfig};

fn main() -> cuboidcast::Result<()> {
    let dims = [10, 32, 32];
    println!("{:<36} {:>9} {:>14} {:>8}", "pattern", "params", "MACs", "vs full");
    for entry in enumerate_search_space() {
        let cfg = PatternConfig::build(&entry.template, dims, entry.globals)?;
        let r = cost_model(&cfg, dims, &BlockDims::new(64, entry.globals));
        println!("{:<36} {:>9} {:>14} {:>8.3}", entry.label(), r.params, r.total, r.total as f64 / r.full_attention_total as f64);
    }
    Ok(())
}
