//! Estimate `u(t, x)` for the heat problem on a small grid, compare it with
//! the closed form and check the equation's residual by finite differences.
//!
//! ```text
//! cargo run --release --example feynman_kac_surface
//! ```

use bdsdep::backward::BackwardConfig;
use bdsdep::feynman_kac::{fk_problem, generator_residual, u_surface};
use bdsdep::oracle::pide_reference;

fn main() -> bdsdep::error::Result<()> {
    let problem = fk_problem("heat-quadratic", 1.0)?;
    let cfg = BackwardConfig {
        inner_paths: 4000,
        ..BackwardConfig::default()
    };
    let times = [0.0, 0.25, 0.5, 0.75];
    let points: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|x| vec![*x])
        .collect();
    let surface = u_surface(&problem, &times, &points, 60, &cfg, 3, 11)?;

    println!("    t      x   u (MC)     exact   |err|/stderr");
    for (i, &t) in times.iter().enumerate() {
        for (j, x) in points.iter().enumerate() {
            let cell = surface.cell(i, j);
            let exact = pide_reference("heat-quadratic", t, x, 1.0)?;
            println!(
                "{t:>5.2}  {:>5.2}  {:>8.4}  {exact:>8.4}  {:>6.2}",
                x[0],
                cell.mean[0],
                (cell.mean[0] - exact).abs() / cell.stderr[0]
            );
        }
    }

    println!("\ngenerator residual at interior nodes");
    for r in generator_residual(&problem, &surface)? {
        println!(
            "t = {:.2}, x = {:>5.2}: {:>8.4} ± {:.4}",
            r.t, r.x, r.residual, r.stderr
        );
    }
    Ok(())
}
