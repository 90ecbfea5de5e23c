//! Gaussian source with squared error: the classical curve and its
//! log-likelihood translation are pure formulas.

use llrd::dual::{ClosedForm, Family};
use llrd::prob::LogBase;

fn main() -> llrd::Result<()> {
    let family = Family::GaussianMse { variance: 2.0 };
    let classical = ClosedForm::classical(family);
    let translated = ClosedForm::translated(family, 3.0);

    let (lo, hi) = translated.range()?;
    println!("translated range: [{lo:.6}, {hi:.6}] nats");
    for dist in [0.25, 0.5, 1.0, 1.5] {
        let map = 3.0 * dist + (std::f64::consts::PI / 3.0).sqrt().ln();
        println!(
            "D = {dist:.2}  R = {:.6}  D~ = {map:.6}  R_ll = {:.6} bits",
            classical.eval(dist, LogBase::Bits)?,
            translated.eval(map, LogBase::Bits)?,
        );
    }
    Ok(())
}
