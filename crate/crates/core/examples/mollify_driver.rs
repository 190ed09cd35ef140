//! Smooth a driver whose modulus is `δ ln(1/δ)` and watch its Lipschitz
//! estimate grow slowly with the order.
//!
//! ```text
//! cargo run --release --example mollify_driver
//! ```

use bdsdep::catalog::builtin_driver;
use bdsdep::drivers::DriverArgs;
use bdsdep::mollify::{estimate_lipschitz, kernel_mass, mollify_driver, MollifierConfig};

fn main() -> bdsdep::error::Result<()> {
    for dim in 1..=3 {
        println!(
            "kernel mass in R^{dim} with 40 nodes per axis: {:.9}",
            kernel_mass(dim, 40)
        );
    }

    let rough = builtin_driver("dissipative-sqrtlog")?.driver;
    println!(
        "\nraw driver Lipschitz estimate: {:.2}",
        estimate_lipschitz(&rough, 50_000, 0)
    );
    println!("order  Lipschitz  f1(0.01) raw  f1(0.01) smoothed");
    for order in [1, 2, 4, 8, 16, 32, 64] {
        let smooth = mollify_driver(&rough, &MollifierConfig::with_order(order))?;
        let lip = estimate_lipschitz(&smooth, 50_000, 0);
        let args = DriverArgs {
            t: 0.0,
            x: &[0.0],
            p: &[0.01],
            q: &[0.0],
            k: &[0.0],
        };
        let (mut a, mut b) = ([0.0], [0.0]);
        (rough.f1)(&args, &mut a);
        (smooth.f1)(&args, &mut b);
        println!("{order:>5}  {lip:>9.3}  {:>12.6}  {:>16.6}", a[0], b[0]);
    }
    Ok(())
}
