//! Writes the built-in digits as an IDX image file, parses it back and
//! uses it as a glyph source.

use cuboidcast::data::{parse_idx, write_idx, Glyphs, IdxImages};

fn main() -> cuboidcast::Result<()> {
    let glyphs = Glyphs::procedural();
    let images = IdxImages { count: glyphs.len(), rows: glyphs.size, cols: glyphs.size, pixels: glyphs.images.concat() };
    let bytes = write_idx(&images);
    let parsed = parse_idx(&bytes)?;
    println!("{} images of {}x{}, {} bytes", parsed.count, parsed.rows, parsed.cols, bytes.len());
    let back = Glyphs::from_idx(&parsed)?;
    assert_eq!(back.images, glyphs.images);
    let small = back.resized(14);
    for row in small.images[3].chunks(14) {
        println!("{}", row.iter().map(|&v| if v > 127 { '#' } else { '.' }).collect::<String>());
    }
    // Truncation is reported with the byte offset where parsing stopped.
    println!("{}", parse_idx(&bytes[..20]).unwrap_err());
    Ok(())
}
