//! Run the assumption checkers, the a priori bound and the uniqueness probe on
//! every catalog problem.
//!
//! ```text
//! cargo run --release --example verify_assumptions
//! ```

use bdsdep::backward::BackwardConfig;
use bdsdep::catalog::{builtin_driver, CATALOG};
use bdsdep::diagnostics::{apriori_check, uniqueness_probe};
use bdsdep::drivers::{check_growth, check_monotone};

fn main() -> bdsdep::error::Result<()> {
    let cfg = BackwardConfig {
        inner_paths: 2000,
        ..BackwardConfig::default()
    };
    for name in CATALOG {
        let problem = builtin_driver(name)?;
        let growth = check_growth(&problem.driver, 20_000, 3)?;
        let monotone = check_monotone(&problem.driver, 20_000, 3)?;
        let apriori = apriori_check(&problem, &cfg, 40, 5, 3)?;
        let unique = uniqueness_probe(&problem, &cfg, 40, 3)?;
        let ratio = apriori
            .runs
            .iter()
            .map(|r| r.norms_total / r.bound)
            .fold(0.0, f64::max);
        println!("{name}");
        println!(
            "  growth     worst ratio {:.3}  {}",
            growth.max_violation,
            verdict(growth.passed())
        );
        println!(
            "  monotone   worst ratio {:.3}  {}",
            monotone.max_violation,
            verdict(monotone.passed())
        );
        println!(
            "  a priori   norms/bound {ratio:.3}  {}",
            verdict(apriori.passed)
        );
        println!(
            "  uniqueness relative gap {:.1e} (mollified: {:?})  {}",
            unique.relative_gap,
            unique.mollified_order,
            verdict(unique.passed)
        );
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}
