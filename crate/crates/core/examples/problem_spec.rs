//! Drive the command layer from a JSON problem spec.
//!
//! `cargo run --example problem_spec -- specs/fig3.json`

use llrd::cli::{cmd_analyze, cmd_curve, ProblemSpec};

fn main() -> llrd::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/specs/fig2.json".into());
    let spec = ProblemSpec::load(path.as_ref())?;
    let problem = spec.validate()?;
    println!("{} (sha256 {})", spec.name, spec.digest()?);
    let bundle = cmd_analyze(&problem, spec.units)?;
    println!("{}", serde_json::to_string_pretty(&bundle["results"]).expect("json"));
    let (csv, all_converged) = cmd_curve(&problem, spec.units, 8)?;
    print!("{csv}");
    println!("all converged: {all_converged}");
    Ok(())
}
