//! Writes the generated 8-class corpus used by `configs/smoke.json`.
//!
//! `cargo run --example synthetic_dataset -- [DIR] [PER_CLASS] [SIZE]`

use std::path::PathBuf;

use leafscope::synthetic::{generate_dataset, MANGO_CLASSES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/synthetic".into()));
    let per_class: usize = args.next().map_or(Ok(64), |s| s.parse())?;
    let size: usize = args.next().map_or(Ok(64), |s| s.parse())?;
    generate_dataset(&dir, &MANGO_CLASSES, per_class, size, 0)?;
    eprintln!("wrote {} images to {}", per_class * MANGO_CLASSES.len(), dir.display());
    Ok(())
}
