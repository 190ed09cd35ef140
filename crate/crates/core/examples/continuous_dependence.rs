//! Gaps between perturbed drivers and their limit, next to the envelope
//! built from the input gap.
//!
//! ```text
//! cargo run --release --example continuous_dependence
//! ```

use bdsdep::backward::BackwardConfig;
use bdsdep::diagnostics::{continuous_dependence, FAMILIES, LEVELS};

fn main() -> bdsdep::error::Result<()> {
    let cfg = BackwardConfig {
        inner_paths: 2000,
        ..BackwardConfig::default()
    };
    for family in FAMILIES {
        let table = continuous_dependence(family, &LEVELS, 50, &cfg, 1, 5)?;
        println!("{}", family.name());
        let mut csv = Vec::new();
        table.write_csv(&mut csv)?;
        print!("{}", String::from_utf8_lossy(&csv));
        println!();
    }
    Ok(())
}
