//! Majorants from the Bihari inequality for a linear and a logarithmic
//! modulus, including the zero start that gives uniqueness.
//!
//! ```text
//! cargo run --example bihari_bound
//! ```

use bdsdep::diagnostics::{bihari_bound, Rho1};
use bdsdep::drivers::ConcaveModulus;

fn main() -> bdsdep::error::Result<()> {
    let kinds = [
        ("linear", Rho1::linear()),
        ("log standard", Rho1::standard(ConcaveModulus::LogModulus)),
        (
            "log uniqueness",
            Rho1::uniqueness(ConcaveModulus::LogModulus),
        ),
    ];
    println!(
        "{:<16} {:>10} {:>12} {:>12} {:>12}",
        "kind", "a", "T=0.25", "T=0.5", "T=1"
    );
    for (label, rho1) in kinds {
        for a in [0.0, 1e-6, 1e-3, 0.1] {
            let row: Vec<String> = [0.25, 0.5, 1.0]
                .iter()
                .map(|&h| bihari_bound(a, &rho1, h, 1.0).map(|v| format!("{v:>12.4e}")))
                .collect::<Result<_, _>>()?;
            println!("{label:<16} {a:>10.0e} {}", row.join(" "));
        }
    }
    println!(
        "\nlinear from 1 over [0, 1]: {:.12} (e = {:.12})",
        bihari_bound(1.0, &Rho1::linear(), 1.0, 1.0)?,
        std::f64::consts::E
    );
    Ok(())
}
