//! Cross-check the regression solver against brute-force nested Monte Carlo
//! for a conditional expectation along a stopped diffusion.
//!
//! ```text
//! cargo run --release --example nested_oracle
//! ```

use std::sync::Arc;

use bdsdep::backward::{outer_bundle, solve_backward, BackwardConfig};
use bdsdep::drivers::{DriverSpec, TerminalSpec};
use bdsdep::forward::{Domain, ForwardModel};
use bdsdep::noise::{MarkSpace, TimeGrid};
use bdsdep::oracle::nested_ce;
use bdsdep::BasisSpec;

fn main() -> bdsdep::error::Result<()> {
    let marks = MarkSpace::scalar(&[1.0], &[1.0])?;
    let model = ForwardModel::brownian(1, 1.0, marks.clone(), vec![0.0]).with_domain(Domain::Box {
        lo: vec![-2.0],
        hi: vec![2.0],
    });
    let spec = DriverSpec::zero(1, 1, 1, 1, marks, 0.0, 1.0);
    let payoff = |x: &[f64]| x[0].cos();
    let terminal = TerminalSpec::new(
        1,
        Arc::new(move |x: &[f64], _, out: &mut [f64]| out[0] = x[0].cos()),
    );

    let grid = TimeGrid::new(0.0, 1.0, 20)?;
    let cfg = BackwardConfig {
        inner_paths: 50_000,
        // cos is poorly fit by a quadratic near the box edges
        basis: BasisSpec {
            degree: 4,
            max_total: 4,
        },
        ..BackwardConfig::default()
    };
    let outer = outer_bundle(&grid, 1, 3, 0)?;
    let sol = solve_backward(&model, &spec, &terminal, &cfg, &outer, 3)?;

    let i = 10;
    println!("t = {:.2}", grid.time(i));
    println!("   x   regression   nested MC (± stderr)");
    for (k, x) in [-1.0, -0.5, 0.0, 0.5, 1.0].into_iter().enumerate() {
        let fitted = sol.continuation_at(i, &[x]).expect("step has active paths")[0];
        let oracle = nested_ce(
            &model,
            &payoff,
            grid.time(i),
            &[x],
            1.0,
            10,
            20_000,
            100 + k as u64,
        )?;
        println!(
            "{x:>5.1}   {fitted:>9.5}   {:>9.5} ± {:.5}",
            oracle.mean, oracle.stderr
        );
    }
    Ok(())
}
