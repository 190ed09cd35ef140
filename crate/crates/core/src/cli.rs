//! Batch front end. Every subcommand reads an optional TOML config, applies
//! `--set key=value` overrides, and writes `manifest.json`, `results.json` and
//! CSV tables into the output directory.
//!
//! Exit codes: 0 on success, 2 on invalid input or a failed check, 3 on a
//! numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backward::{outer_bundle, solve_backward, BackwardConfig};
use crate::catalog::{builtin_driver_with, CatalogParams, CatalogProblem};
use crate::diagnostics::{apriori_check, continuous_dependence, uniqueness_probe, Family, LEVELS};
use crate::drivers::{check_growth, check_monotone};
use crate::error::{Error, Result};
use crate::feynman_kac::{estimate_u, fk_problem, u_surface};
use crate::forward::simulate_forward;
use crate::noise::{derive_seed, generate_bundle, NoiseDims, TimeGrid};
use crate::oracle::pide_reference;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "bdsdep",
    version,
    about = "Backward doubly stochastic equations with jumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate forward paths and exit times.
    SimulateForward(Common),
    /// Solve a catalog problem on one backward-noise realization.
    Solve(Common),
    /// Run the assumption checkers, the a priori bound and the uniqueness probe.
    Verify(Common),
    /// Gaps between a perturbed family and its limit.
    ContinuousDependence(Common),
    /// Evaluate u(t, x) on a grid.
    FeynmanKac(Common),
    /// Error against the closed form across step counts.
    ConvergeStudy(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted key path and TOML value, e.g. `backward.inner_paths=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub name: String,
    pub a: f64,
    pub c: f64,
    pub horizon: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let p = CatalogParams::default();
        Self {
            name: "linear-scalar".into(),
            a: p.a,
            c: p.c,
            horizon: p.horizon,
        }
    }
}

impl ProblemConfig {
    fn catalog(&self) -> Result<CatalogProblem> {
        builtin_driver_with(
            &self.name,
            &CatalogParams {
                a: self.a,
                c: self.c,
                horizon: self.horizon,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub paths: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { paths: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Samples per assumption checker.
    pub samples: usize,
    /// Independent solves for the a priori bound.
    pub runs: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            runs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DependenceConfig {
    pub family: Family,
    pub levels: Vec<u32>,
    pub outer_runs: u64,
}

impl Default for DependenceConfig {
    fn default() -> Self {
        Self {
            family: Family::DriverShift,
            levels: LEVELS.to_vec(),
            outer_runs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FkConfig {
    pub problem: String,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub outer_runs: u64,
}

impl Default for FkConfig {
    fn default() -> Self {
        Self {
            problem: "heat-quadratic".into(),
            times: vec![0.0],
            points: vec![vec![0.0]],
            outer_runs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub problem: String,
    pub steps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub t: f64,
    pub x: Vec<f64>,
    pub outer_runs: u64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            problem: "heat-quadratic".into(),
            steps: vec![25, 50, 100],
            seeds: vec![1, 2, 3],
            t: 0.0,
            x: vec![0.0],
            outer_runs: 1,
        }
    }
}

/// The full configuration; every table is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: usize,
    pub problem: ProblemConfig,
    pub backward: BackwardConfig,
    pub forward: ForwardConfig,
    pub verify: VerifyConfig,
    pub dependence: DependenceConfig,
    pub fk: FkConfig,
    pub converge: ConvergeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 100,
            problem: ProblemConfig::default(),
            backward: BackwardConfig::default(),
            forward: ForwardConfig::default(),
            verify: VerifyConfig::default(),
            dependence: DependenceConfig::default(),
            fk: FkConfig::default(),
            converge: ConvergeConfig::default(),
        }
    }
}

/// Parse `text` after applying `overrides`; unknown keys are reported with
/// their full path.
pub fn load_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    let value = toml::Value::Table(table);
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for part in parents {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: `{part}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Funnels every file of a run into one directory.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    fn json(&self, name: &str, value: &Value) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        fs::write(self.root.join(name), text)?;
        Ok(())
    }

    fn csv<F>(&self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
    {
        let mut w = BufWriter::new(fs::File::create(self.root.join(name))?);
        write(&mut w)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                3
            } else {
                2
            }
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    let (name, common) = match &command {
        Command::SimulateForward(c) => ("simulate-forward", c),
        Command::Solve(c) => ("solve", c),
        Command::Verify(c) => ("verify", c),
        Command::ContinuousDependence(c) => ("continuous-dependence", c),
        Command::FeynmanKac(c) => ("feynman-kac", c),
        Command::ConvergeStudy(c) => ("converge-study", c),
    };
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)?,
        None => String::new(),
    };
    let mut cfg = load_config(&text, &common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let dir = RunDir::create(&common.out)?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    dir.json(
        "manifest.json",
        &json!({
            "schemaVersion": SCHEMA_VERSION,
            "subcommand": name,
            "seed": cfg.seed,
            "config": cfg,
            "version": env!("CARGO_PKG_VERSION"),
            "createdUnix": created,
        }),
    )?;

    let (payload, passed) = match command {
        Command::SimulateForward(_) => (simulate(&cfg, &dir)?, true),
        Command::Solve(_) => (solve(&cfg, &dir)?, true),
        Command::Verify(_) => verify(&cfg)?,
        Command::ContinuousDependence(_) => (dependence(&cfg, &dir)?, true),
        Command::FeynmanKac(_) => (feynman_kac(&cfg, &dir)?, true),
        Command::ConvergeStudy(_) => converge(&cfg, &dir)?,
    };
    dir.json(
        "results.json",
        &json!({
            "schemaVersion": SCHEMA_VERSION,
            "subcommand": name,
            "seed": cfg.seed,
            "passed": passed,
            "results": payload,
        }),
    )?;
    Ok(passed)
}

fn simulate(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let problem = cfg.problem.catalog()?;
    let model = &problem.forward;
    let grid = TimeGrid::new(model.t_start, cfg.problem.horizon, cfg.steps)?;
    let paths = (0..cfg.forward.paths as u64)
        .map(|j| {
            let bundle = generate_bundle(
                &grid,
                NoiseDims { d: model.d, l: 0 },
                &model.marks,
                cfg.seed,
                j,
            )?;
            simulate_forward(model, &bundle)
        })
        .collect::<Result<Vec<_>>>()?;
    dir.csv("paths.csv", |w| {
        let header: Vec<String> = (0..model.m).map(|i| format!("x{i}")).collect();
        writeln_io(w, format!("path,t,{},in_domain", header.join(",")))?;
        for (j, p) in paths.iter().enumerate() {
            for i in 0..=grid.steps() {
                let x = p.state(i);
                let cols: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
                let inside = u8::from(model.domain.contains(x));
                writeln_io(
                    w,
                    format!("{j},{},{},{inside}", grid.time(i), cols.join(",")),
                )?;
            }
        }
        Ok(())
    })?;
    let exits: Vec<f64> = paths.iter().map(|p| p.exit_time()).collect();
    let exited = paths
        .iter()
        .filter(|p| p.exit_index() < grid.steps())
        .count();
    Ok(json!({
        "problem": problem.name,
        "paths": paths.len(),
        "steps": grid.steps(),
        "exitTimes": exits,
        "meanExitTime": exits.iter().sum::<f64>() / exits.len().max(1) as f64,
        "exitedFraction": exited as f64 / paths.len().max(1) as f64,
    }))
}

fn writeln_io<W: std::io::Write>(w: &mut W, line: String) -> Result<()> {
    writeln!(w, "{line}")?;
    Ok(())
}

fn solve(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let problem = cfg.problem.catalog()?;
    let grid = TimeGrid::new(problem.driver.t0, problem.driver.horizon, cfg.steps)?;
    let outer = outer_bundle(&grid, problem.driver.l, cfg.seed, 0)?;
    let sol = solve_backward(
        &problem.forward,
        &problem.driver,
        &problem.terminal,
        &cfg.backward,
        &outer,
        derive_seed(cfg.seed, 0),
    )?;
    let n = sol.n();
    dir.csv("solution.csv", |w| {
        let cols: Vec<String> = (0..n).map(|a| format!("p_mean{a}")).collect();
        writeln_io(
            w,
            format!("t,{},active_paths,picard_iterations", cols.join(",")),
        )?;
        for i in 0..=grid.steps() {
            let mean: Vec<String> = (0..n)
                .map(|a| {
                    let s: f64 = (0..sol.paths()).map(|j| sol.p(i, j)[a]).sum();
                    format!("{:e}", s / sol.paths() as f64)
                })
                .collect();
            let (active, iters) = sol
                .diagnostics
                .get(i)
                .map(|d| (d.active_paths, d.picard_iterations))
                .unwrap_or((0, 0));
            writeln_io(
                w,
                format!("{},{},{active},{iters}", grid.time(i), mean.join(",")),
            )?;
        }
        Ok(())
    })?;
    let p0 = sol.p0();
    let analytic = problem.analytic.map(|a| a.p(grid.t0()));
    Ok(json!({
        "problem": problem.name,
        "steps": grid.steps(),
        "innerPaths": sol.paths(),
        "p0": p0,
        "analyticP0": analytic,
        "relativeError": analytic.map(|a| ((p0[0] - a) / a).abs()),
        "norms": sol.norms(),
        "ridgeSteps": sol.diagnostics.iter().filter(|d| d.ridge).count(),
        "maxPicardIterations": sol.diagnostics.iter().map(|d| d.picard_iterations).max(),
        "gDependsOnK": sol.g_depends_on_k,
    }))
}

fn verify(cfg: &RunConfig) -> Result<(Value, bool)> {
    let problem = cfg.problem.catalog()?;
    let growth = check_growth(&problem.driver, cfg.verify.samples, cfg.seed)?;
    let monotone = check_monotone(&problem.driver, cfg.verify.samples, cfg.seed)?;
    let apriori = apriori_check(
        &problem,
        &cfg.backward,
        cfg.steps,
        cfg.verify.runs,
        cfg.seed,
    )?;
    let unique = uniqueness_probe(&problem, &cfg.backward, cfg.steps, cfg.seed)?;
    let passed = growth.passed() && monotone.passed() && apriori.passed && unique.passed;
    let summary = |r: &crate::drivers::CheckReport| {
        json!({
            "samples": r.samples,
            "maxViolation": r.max_violation,
            "perCondition": r.per_condition.iter().map(|(k, v)| json!({"condition": k, "ratio": v})).collect::<Vec<_>>(),
            "passed": r.passed(),
        })
    };
    Ok((
        json!({
            "problem": problem.name,
            "growth": summary(&growth),
            "monotone": summary(&monotone),
            "apriori": apriori,
            "uniqueness": unique,
        }),
        passed,
    ))
}

fn dependence(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let d = &cfg.dependence;
    let table = continuous_dependence(
        d.family,
        &d.levels,
        cfg.steps,
        &cfg.backward,
        d.outer_runs,
        cfg.seed,
    )?;
    dir.csv("dependence.csv", |w| table.write_csv(w))?;
    serde_json::to_value(&table).map_err(|e| Error::Config(e.to_string()))
}

fn feynman_kac(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let fk = &cfg.fk;
    let problem = fk_problem(&fk.problem, cfg.problem.horizon)?;
    let surface = u_surface(
        &problem,
        &fk.times,
        &fk.points,
        cfg.steps,
        &cfg.backward,
        fk.outer_runs,
        cfg.seed,
    )?;
    dir.csv("surface.csv", |w| surface.write_csv(w))?;
    let reference: Vec<f64> = surface
        .cells
        .iter()
        .map(|c| pide_reference(&fk.problem, c.t, &c.x, problem.horizon()))
        .collect::<Result<_>>()?;
    Ok(json!({
        "problem": fk.problem,
        "surface": surface,
        "reference": reference,
    }))
}

fn converge(cfg: &RunConfig, dir: &RunDir) -> Result<(Value, bool)> {
    let c = &cfg.converge;
    let problem = fk_problem(&c.problem, cfg.problem.horizon)?;
    let exact = pide_reference(&c.problem, c.t, &c.x, problem.horizon())?;
    let mut rows = Vec::new();
    for &seed in &c.seeds {
        for &steps in &c.steps {
            let e = estimate_u(
                &problem,
                c.t,
                &c.x,
                steps,
                &cfg.backward,
                c.outer_runs,
                seed,
            )?;
            rows.push((
                seed,
                steps,
                e.mean[0],
                e.stderr[0],
                (e.mean[0] - exact).abs(),
            ));
        }
    }
    dir.csv("convergence.csv", |w| {
        writeln_io(w, "seed,steps,estimate,stderr,error".into())?;
        for (seed, steps, est, se, err) in &rows {
            writeln_io(w, format!("{seed},{steps},{est:e},{se:e},{err:e}"))?;
        }
        Ok(())
    })?;
    let decreasing: Vec<bool> = c
        .seeds
        .iter()
        .map(|s| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.0 == *s).map(|r| r.4).collect();
            errs.windows(2).all(|w| w[1] < w[0])
        })
        .collect();
    let majority = 2 * decreasing.iter().filter(|d| **d).count() > decreasing.len();
    Ok((
        json!({
            "problem": c.problem,
            "reference": exact,
            "rows": rows.iter().map(|(seed, steps, est, se, err)| json!({
                "seed": seed, "steps": steps, "estimate": est, "stderr": se, "error": err,
            })).collect::<Vec<_>>(),
            "strictlyDecreasing": decreasing,
            "majorityDecreasing": majority,
        }),
        majority,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(load_config("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = load_config("[backward]\npicard_tol = 1e-10\ninner_path = 5\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("backward"), "{msg}");
        assert!(msg.contains("inner_path"), "{msg}");
    }

    #[test]
    fn overrides_apply() {
        let cfg = load_config(
            "steps = 10\n",
            &[
                "backward.inner_paths=2000".into(),
                "problem.name=zero".into(),
                "backward.mollifier.order=4".into(),
                "fk.points=[[0.0],[0.5]]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.backward.inner_paths, 2000);
        assert_eq!(cfg.problem.name, "zero");
        assert_eq!(cfg.backward.mollifier.order, 4);
        assert_eq!(cfg.backward.mollifier.quad_nodes, 12);
        assert_eq!(cfg.fk.points.len(), 2);
    }

    #[test]
    fn malformed_override() {
        assert!(load_config("", &["steps".into()]).is_err());
        assert!(load_config("", &["steps.deep=1".into()]).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let v = serde_json::to_value(&cfg).unwrap();
        let back: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn solve_zero_writes_exact_p0() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let code = run([
            "bdsdep",
            "solve",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "problem.name=zero",
            "--set",
            "problem.c=2.5",
            "--set",
            "steps=5",
            "--set",
            "backward.inner_paths=200",
        ]);
        assert_eq!(code, 0);
        let results: Value =
            serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
        assert_eq!(results["schemaVersion"], 1);
        assert_eq!(results["results"]["p0"][0], 2.5);
        assert!(out.join("manifest.json").exists());
        assert!(out.join("solution.csv").exists());
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap().to_string();
        assert_eq!(
            run(["bdsdep", "solve", "--out", &out, "--set", "bogus=1"]),
            2
        );
        assert_eq!(
            run([
                "bdsdep",
                "solve",
                "--out",
                &out,
                "--set",
                "problem.name=nope"
            ]),
            2
        );
        assert_eq!(run(["bdsdep", "nonsense"]), 2);
        // a driver step too stiff for the Picard iteration to contract
        let code = run([
            "bdsdep",
            "solve",
            "--out",
            &out,
            "--set",
            "problem.a=1e6",
            "--set",
            "steps=5",
            "--set",
            "backward.inner_paths=200",
        ]);
        assert_eq!(code, 2);
        // one Picard sweep cannot reach the tolerance: a numerical failure
        let code = run([
            "bdsdep",
            "solve",
            "--out",
            &out,
            "--set",
            "steps=5",
            "--set",
            "backward.inner_paths=200",
            "--set",
            "backward.picard_max_iter=1",
        ]);
        assert_eq!(code, 3);
    }
}
