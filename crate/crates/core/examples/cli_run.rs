//! Drive the command-line front end from code: load `cli_config.toml`, run
//! `solve` and `feynman-kac` into a scratch directory and print the results.
//!
//! The same runs from a shell:
//!
//! ```text
//! cargo run --release --bin bdsdep -- solve --config crates/core/examples/cli_config.toml --out out
//! cargo run --release --bin bdsdep -- feynman-kac --config crates/core/examples/cli_config.toml --set fk.outer_runs=5
//! ```

use std::path::Path;

fn main() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/cli_config.toml");
    let out = std::env::temp_dir().join("bdsdep-cli-example");
    for command in ["solve", "feynman-kac"] {
        let dir = out.join(command);
        let code = bdsdep::cli::run([
            "bdsdep".to_string(),
            command.to_string(),
            "--config".into(),
            config.display().to_string(),
            "--out".into(),
            dir.display().to_string(),
        ]);
        println!("{command}: exit code {code}");
        for file in ["results.json", "solution.csv", "surface.csv"] {
            if let Ok(text) = std::fs::read_to_string(dir.join(file)) {
                println!("--- {file}");
                for line in text.lines().take(12) {
                    println!("{line}");
                }
            }
        }
    }
}
