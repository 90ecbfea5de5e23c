//! Recast Hamming distortion at slope `λ₀ = ln 9` as a log-likelihood
//! problem and compare the two curves through the affine map.

use llrd::ba::{rd_at_distortion, BaConfig};
use llrd::dual::translate_to_loglik;
use llrd::loglik::{loglik_distortion, DistortionMatrix};
use llrd::prob::Pmf;

fn main() -> llrd::Result<()> {
    let p = Pmf::bernoulli(0.25)?;
    let d = DistortionMatrix::hamming(2)?;
    let tr = translate_to_loglik(&p, &d, 9f64.ln())?;
    println!("P(x|u) = {:?}", tr.channel.to_rows());
    println!("D~ = {:.6} D + {:.6}", tr.map.lambda0, tr.map.offset);

    let dll = loglik_distortion(&tr.channel)?;
    let cfg = BaConfig::default();
    for dist in [0.02, 0.08, 0.14, 0.2] {
        let classical = rd_at_distortion(&p, &d, dist, &cfg)?;
        let translated = rd_at_distortion(&p, &dll, tr.map.forward(dist), &cfg)?;
        println!(
            "D = {dist:.2}  D~ = {:.6}  R = {:.9}  R_ll = {:.9}",
            tr.map.forward(dist),
            classical.rate,
            translated.rate
        );
    }
    Ok(())
}
