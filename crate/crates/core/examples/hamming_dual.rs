//! Single-parameter dual form on a binary source with Hamming distortion,
//! checked against `H(p) - H(D)`.

use llrd::dual::{default_lambda_grid, dual_rdf, lambda_feasible_set, ClosedForm, Family, DEFAULT_GRID_POINTS};
use llrd::loglik::DistortionMatrix;
use llrd::prob::{LogBase, Pmf};

fn main() -> llrd::Result<()> {
    let p = 0.25;
    let src = Pmf::bernoulli(p)?;
    let d = DistortionMatrix::hamming(2)?;

    let grid = default_lambda_grid(&d, DEFAULT_GRID_POINTS);
    let verdicts = lambda_feasible_set(&src, &d, &grid)?;
    let first = verdicts.iter().find(|t| t.feasible).map(|t| t.lambda);
    println!("first feasible grid slope {first:?}, boundary ln 3 = {:.6}", 3f64.ln());

    let exact = ClosedForm::classical(Family::BinaryHamming { p });
    for dist in [0.02, 0.05, 0.1, 0.2] {
        let sol = dual_rdf(&src, &d, dist, None)?;
        println!(
            "D = {dist:.2}  R = {:.9}  closed form {:.9}  λ* = {:.6} (ln((1-D)/D) = {:.6})",
            sol.rate,
            exact.eval(dist, LogBase::Nats)?,
            sol.lambda,
            ((1.0 - dist) / dist).ln()
        );
    }
    Ok(())
}
