//! Generates a few N-body digit sequences, writes them in the STDS1
//! container, reads them back and prints a frame as ASCII.

use cuboidcast::data::{gen_nbody_mnist, read_dataset, write_dataset, GenConfig, Glyphs};

fn main() -> cuboidcast::Result<()> {
    let cfg = GenConfig::nbody(32);
    let data = gen_nbody_mnist(&cfg, &Glyphs::procedural(), 4, 7)?;
    let path = std::env::temp_dir().join("nbody_example.stds");
    write_dataset(&path, &data)?;
    let back = read_dataset(&path)?;
    assert_eq!(back.checksum(), data.checksum());
    println!("{} sequences of {} frames, sha256 {}", back.len(), back.frames(), back.checksum());

    let seq = back.sequence(0);
    let px = back.height() * back.width();
    for step in [0, back.frames() - 1] {
        println!("frame {step}:");
        for row in seq[step * px..(step + 1) * px].chunks(back.width()) {
            println!("  {}", row.iter().map(|&v| if v > 0.5 { '#' } else if v > 0.1 { '+' } else { '.' }).collect::<String>());
        }
    }
    Ok(())
}
