//! Simulate a jump diffusion stopped at the exit of a box and look at the
//! exit-time distribution.
//!
//! ```text
//! cargo run --example forward_paths
//! ```

use std::sync::Arc;

use bdsdep::forward::{simulate_forward, Domain, ForwardModel};
use bdsdep::noise::{generate_bundle, MarkSpace, NoiseDims, TimeGrid};

fn main() -> bdsdep::error::Result<()> {
    // two marks: small up-jumps at rate 2, larger down-jumps at rate 0.5
    let marks = MarkSpace::scalar(&[0.2, -0.6], &[2.0, 0.5])?;
    let model = ForwardModel::brownian(1, 0.5, marks, vec![0.0])
        .with_drift(Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = -x[0]))
        .with_jumps(Arc::new(|_, _, z: &[f64], out: &mut [f64]| out[0] = z[0]))
        .with_domain(Domain::Box {
            lo: vec![-1.0],
            hi: vec![1.0],
        });
    let grid = TimeGrid::new(0.0, 2.0, 200)?;
    let dims = NoiseDims { d: 1, l: 0 };

    let paths = 2000;
    let mut exited = 0;
    let mut mean_tau = 0.0;
    for j in 0..paths {
        let bundle = generate_bundle(&grid, dims, &model.marks, 42, j)?;
        let path = simulate_forward(&model, &bundle)?;
        if path.exit_index() < grid.steps() {
            exited += 1;
        }
        mean_tau += path.exit_time() / paths as f64;
    }
    println!("{exited} of {paths} paths left (-1, 1) before t = 2");
    println!("mean of min(tau, 2): {mean_tau:.4}");

    // one path in full
    let bundle = generate_bundle(&grid, dims, &model.marks, 42, 0)?;
    let path = simulate_forward(&model, &bundle)?;
    let mut out = Vec::new();
    path.write_csv(&mut out, &model.domain)?;
    let text = String::from_utf8_lossy(&out);
    for line in text.lines().take(6) {
        println!("{line}");
    }
    println!(
        "... exit at step {} (t = {:.3})",
        path.exit_index(),
        path.exit_time()
    );
    Ok(())
}
