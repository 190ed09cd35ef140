//! Solve the linear scalar problem and compare `P_0` with its closed form as
//! the grid is refined.
//!
//! ```text
//! cargo run --release --example solve_linear
//! ```

use bdsdep::backward::{outer_bundle, solve_backward, BackwardConfig};
use bdsdep::catalog::{builtin_driver_with, CatalogParams};
use bdsdep::noise::TimeGrid;

fn main() -> bdsdep::error::Result<()> {
    let params = CatalogParams {
        a: 0.8,
        c: 2.0,
        horizon: 1.0,
    };
    let problem = builtin_driver_with("linear-scalar", &params)?;
    let exact = problem
        .analytic
        .expect("linear-scalar has a closed form")
        .p(0.0);
    let cfg = BackwardConfig {
        inner_paths: 5000,
        ..BackwardConfig::default()
    };

    println!("steps  P0          exact       rel. error  picard iters (step 0)");
    for steps in [10, 20, 40, 80, 160] {
        let grid = TimeGrid::new(0.0, params.horizon, steps)?;
        let outer = outer_bundle(&grid, problem.driver.l, 1, 0)?;
        let sol = solve_backward(
            &problem.forward,
            &problem.driver,
            &problem.terminal,
            &cfg,
            &outer,
            1,
        )?;
        let p0 = sol.p0()[0];
        println!(
            "{steps:>5}  {p0:.8}  {exact:.8}  {:.3e}   {}",
            (p0 - exact).abs() / exact,
            sol.diagnostics[0].picard_iterations
        );
    }
    Ok(())
}
