//! Statistical checks of the noise, the forward scheme and the solver against
//! closed forms and the nested Monte Carlo oracle.

use std::sync::Arc;

use bdsdep::backward::{outer_bundle, solve_backward, BackwardConfig};
use bdsdep::drivers::{DriverArgs, DriverSpec, TerminalSpec};
use bdsdep::feynman_kac::{fk_problem, generator_residual, u_surface};
use bdsdep::forward::{simulate_forward, Domain, ForwardModel};
use bdsdep::noise::{generate_bundle, MarkSpace, NoiseDims, TimeGrid};
use bdsdep::oracle::nested_ce;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

#[test]
fn poisson_counts_have_the_right_mean() {
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let marks = MarkSpace::scalar(&[1.0], &[20.0]).unwrap();
    let totals: Vec<f64> = (0..1000)
        .map(|s| {
            let b = generate_bundle(&grid, NoiseDims { d: 1, l: 1 }, &marks, 7, s).unwrap();
            (0..50).map(|i| b.jump_counts(i)[0] as f64).sum()
        })
        .collect();
    let (m, v) = mean_var(&totals);
    assert!(
        (m - 20.0).abs() < 5.0 * (20.0f64 / 1000.0).sqrt(),
        "mean {m}"
    );
    assert!((v / 20.0 - 1.0).abs() < 0.2, "variance {v}");
}

#[test]
fn increments_have_the_right_moments_and_no_correlation() {
    let grid = TimeGrid::new(0.0, 2.0, 40).unwrap();
    let dt = grid.dt();
    let marks = MarkSpace::scalar(&[1.0, 2.0], &[3.0, 0.5]).unwrap();
    let (mut w, mut b, mut n0, mut wb, mut wn) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..500 {
        let bundle = generate_bundle(&grid, NoiseDims { d: 2, l: 1 }, &marks, 3, s).unwrap();
        for i in 0..grid.steps() {
            let (dw, db) = (bundle.dw(i)[0], bundle.db(i)[0]);
            let dn = bundle.compensated_increment(i, 0).unwrap();
            w.push(dw);
            b.push(db);
            n0.push(dn);
            wb.push(dw * db);
            wn.push(dw * dn);
        }
    }
    let count = w.len() as f64;
    let (mw, vw) = mean_var(&w);
    let (mb, vb) = mean_var(&b);
    let (mn, vn) = mean_var(&n0);
    assert!(mw.abs() < 5.0 * (dt / count).sqrt());
    assert!(mb.abs() < 5.0 * (dt / count).sqrt());
    assert!(
        mn.abs() < 5.0 * (3.0 * dt / count).sqrt(),
        "compensated mean {mn}"
    );
    assert!((vw / dt - 1.0).abs() < 0.05);
    assert!((vb / dt - 1.0).abs() < 0.05);
    assert!((vn / (3.0 * dt) - 1.0).abs() < 0.08);
    // correlations
    let (cwb, _) = mean_var(&wb);
    let (cwn, _) = mean_var(&wn);
    assert!((cwb / dt).abs() < 5.0 / count.sqrt());
    assert!((cwn / (dt * 3f64.sqrt() * dt.sqrt())).abs() < 5.0 / count.sqrt());
}

fn ou(theta: f64, vol: f64) -> ForwardModel {
    let marks = MarkSpace::scalar(&[1.0], &[1.0]).unwrap();
    ForwardModel::brownian(1, vol, marks, vec![1.0]).with_drift(Arc::new(
        move |_, x: &[f64], out: &mut [f64]| out[0] = -theta * x[0],
    ))
}

#[test]
fn ornstein_uhlenbeck_moments() {
    let (theta, vol, steps) = (1.0, 0.5, 200);
    let model = ou(theta, vol);
    let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
    let dt = grid.dt();
    let xs: Vec<f64> = (0..5000)
        .map(|s| {
            let b = generate_bundle(&grid, NoiseDims { d: 1, l: 0 }, &model.marks, 21, s).unwrap();
            simulate_forward(&model, &b).unwrap().stopped_state()[0]
        })
        .collect();
    let (m, v) = mean_var(&xs);
    // exact moments of the Euler chain
    let a = 1.0 - theta * dt;
    let mean = a.powi(steps as i32);
    let var: f64 = (0..steps)
        .map(|k| vol * vol * dt * a.powi(2 * k as i32))
        .sum();
    assert!(
        (m - mean).abs() < 5.0 * (var / 5000.0).sqrt(),
        "{m} vs {mean}"
    );
    assert!((v / var - 1.0).abs() < 0.1, "{v} vs {var}");
    // and the continuum values are close
    assert!((mean - (-theta).exp()).abs() < 2e-3);
}

#[test]
fn euler_strong_error_shrinks_with_the_step() {
    let model = ou(2.0, 0.8);
    let fine = TimeGrid::new(0.0, 1.0, 512).unwrap();
    let mut errs = [0.0; 3];
    let paths = 400;
    for s in 0..paths {
        let b = generate_bundle(&fine, NoiseDims { d: 1, l: 0 }, &model.marks, 5, s).unwrap();
        let reference = simulate_forward(&model, &b).unwrap().stopped_state()[0];
        for (k, factor) in [32, 16, 8].into_iter().enumerate() {
            let coarse = simulate_forward(&model, &b.coarsen(factor).unwrap()).unwrap();
            errs[k] += (coarse.stopped_state()[0] - reference).abs() / paths as f64;
        }
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[0] / errs[2] > 2.5, "{errs:?}");
}

#[test]
fn larger_domains_exit_later() {
    let marks = MarkSpace::scalar(&[-0.3, 0.3], &[2.0, 2.0]).unwrap();
    let small = Domain::Box {
        lo: vec![-0.5],
        hi: vec![0.5],
    };
    let model = ForwardModel::brownian(1, 1.0, marks, vec![0.0])
        .with_jumps(Arc::new(|_, _, z: &[f64], out: &mut [f64]| out[0] = z[0]));
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    for s in 0..200 {
        let b = generate_bundle(&grid, NoiseDims { d: 1, l: 0 }, &model.marks, 8, s).unwrap();
        let inner = simulate_forward(&model.clone().with_domain(small.clone()), &b).unwrap();
        let outer = simulate_forward(&model.clone().with_domain(small.scaled(1.5)), &b).unwrap();
        let whole = simulate_forward(&model, &b).unwrap();
        assert!(inner.exit_index() <= outer.exit_index());
        assert!(outer.exit_index() <= whole.exit_index());
        assert_eq!(whole.exit_index(), grid.steps());
    }
}

#[test]
fn identity_terminal_matches_nested_oracle() {
    let marks = MarkSpace::scalar(&[1.0], &[1.0]).unwrap();
    let model = ForwardModel::brownian(1, 1.0, marks.clone(), vec![0.0]);
    let spec = DriverSpec::zero(1, 1, 1, 1, marks, 0.0, 1.0);
    let terminal = TerminalSpec::new(1, Arc::new(|x: &[f64], _, out: &mut [f64]| out[0] = x[0]));
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let cfg = BackwardConfig {
        inner_paths: 100_000,
        ..BackwardConfig::default()
    };
    let outer = outer_bundle(&grid, 1, 1, 0).unwrap();
    let sol = solve_backward(&model, &spec, &terminal, &cfg, &outer, 31).unwrap();
    let i = 10;
    for (k, x) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        let p = sol.continuation_at(i, &[x]).unwrap()[0];
        let q = sol.q_at(i, &[x]).unwrap()[0];
        let oracle = nested_ce(
            &model,
            &|y| y[0],
            grid.time(i),
            &[x],
            1.0,
            10,
            10_000,
            40 + k as u64,
        )
        .unwrap();
        assert!(
            (p - oracle.mean).abs() < 3.0 * oracle.stderr,
            "x={x}: {p} vs {oracle:?}"
        );
        assert!((q - 1.0).abs() < 0.05, "q={q}");
    }
}

#[test]
fn backward_noise_variance_decomposition() {
    // f and g free of (P, Q, K), g ≠ 0: P_0 is a functional of B
    let marks = MarkSpace::scalar(&[1.0], &[1.0]).unwrap();
    let model = ForwardModel::brownian(1, 1.0, marks.clone(), vec![0.0]);
    let spec = DriverSpec::zero(1, 1, 1, 1, marks, 0.0, 1.0).with_g(Arc::new(
        |args: &DriverArgs<'_>, out: &mut [f64]| out[0] = args.x[0].cos(),
    ));
    let terminal = TerminalSpec::new(1, Arc::new(|x: &[f64], _, out: &mut [f64]| out[0] = x[0]));
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let cfg = BackwardConfig {
        inner_paths: 2000,
        ..BackwardConfig::default()
    };
    let table: Vec<Vec<f64>> = (0..10)
        .map(|o| {
            let outer = outer_bundle(&grid, 1, 77, o).unwrap();
            (0..10)
                .map(|s| {
                    solve_backward(&model, &spec, &terminal, &cfg, &outer, 1000 + s)
                        .unwrap()
                        .p0()[0]
                })
                .collect()
        })
        .collect();
    let within: f64 = table.iter().map(|row| mean_var(row).1).sum::<f64>() / 10.0;
    let means: Vec<f64> = table.iter().map(|row| mean_var(row).0).collect();
    let between = mean_var(&means).1;
    // inner noise alone: Var(X_T) / paths plus regression noise in Σ g ΔB
    assert!(within < 5.0 / 2000.0, "within {within}");
    assert!(
        between > 50.0 * within / 10.0,
        "between {between}, within {within}"
    );
}

#[test]
fn heat_surface_satisfies_the_equation() {
    let problem = fk_problem("heat-quadratic", 1.0).unwrap();
    let times = [0.1, 0.3, 0.5, 0.7];
    let points: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|x| vec![*x])
        .collect();
    let cfg = BackwardConfig {
        inner_paths: 4000,
        ..BackwardConfig::default()
    };
    let surface = u_surface(&problem, &times, &points, 50, &cfg, 2, 4).unwrap();
    let residuals = generator_residual(&problem, &surface).unwrap();
    assert_eq!(residuals.len(), 6);
    for r in &residuals {
        assert!(r.residual.abs() < 3.0 * r.stderr, "{r:?}");
    }
}
