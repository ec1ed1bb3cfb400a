use cuboidcast::cuboid::{Init, SelfBlock};
use cuboidcast::patterns::{cost_model, enumerate_search_space, BlockDims, PatternConfig};
use cuboidcast_tensor::{counted, gather, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn measured(cfg: &PatternConfig, dims: [usize; 3], b: &BlockDims) -> cuboidcast_tensor::OpCounts {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut init = Init { store: &mut store, rng: &mut rng };
    let glob = (b.globals > 0).then_some(b.global_ffn_ratio);
    let block = SelfBlock::build(&mut init, "b", &cfg.stages, b.channels, b.heads, b.ffn_ratio, glob);
    let g_param = (b.globals > 0).then(|| store.zeros("g", &[b.globals, b.channels]));
    let tape = Tape::<f32>::new();
    let p = store.bind(&tape, false);
    let x = tape.constant(Tensor::from_fn([1, dims[0], dims[1], dims[2], b.channels], |i| (i % 7) as f32 * 0.1));
    let g = g_param.map(|id| gather(&[p.var(id)], (0..b.globals as u32).collect::<Vec<_>>().into(), &[1, b.globals, b.channels]).unwrap());
    let (_, counts) = counted(|| block.forward(&p, x, g).unwrap());
    counts
}

#[test]
fn analytic_counts_match_kernels() {
    for dims in [[3, 5, 4], [2, 8, 8], [5, 3, 7]] {
        for e in enumerate_search_space() {
            let Ok(cfg) = PatternConfig::build(&e.template, dims, e.globals) else { continue };
            let b = BlockDims::new(8, e.globals.min(3));
            let r = cost_model(&cfg, dims, &b);
            assert_eq!(r.counts, measured(&cfg, dims, &b), "{} on {dims:?}", e.label());
        }
    }
}
