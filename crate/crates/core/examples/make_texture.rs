//! Writes the deterministic high-texture test image used by the desk-scale
//! evaluation: `cargo run -p fernmatch-core --example make_texture -- out.pgm [side] [seed]`.

use fernmatch_core::{save_pgm, synth::textured_image};

fn main() -> fernmatch_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "texture.pgm".into());
    let side: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(512);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2024);
    save_pgm(&textured_image(side, side, seed), &path)?;
    println!("wrote {side}x{side} image to {path}");
    Ok(())
}
