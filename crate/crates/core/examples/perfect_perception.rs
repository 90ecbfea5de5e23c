//! Rate-distortion with perfect perception, then the latent scheme that
//! achieves it with log-likelihood loss.

use llrd::loglik::DistortionMatrix;
use llrd::prob::{LogBase, Pmf};
use llrd::rdp::{
    construct_latent, hamming_cp_factor, scale_factorization_to_coupling, solve_perfect_perception, verify_scheme,
    PerceptionConfig,
};

fn main() -> llrd::Result<()> {
    let target = 0.1;
    for p in [0.5, 0.35] {
        let src = Pmf::bernoulli(p)?;
        let d = DistortionMatrix::hamming(2)?;
        let sol = solve_perfect_perception(&src, &d, target, &PerceptionConfig::default())?;
        println!(
            "p = {p}: λ = {:.6}, R(D,0) = {:.6} bits",
            sol.lambda,
            LogBase::Bits.from_nats(sol.rate)
        );
        println!("  coupling {:?}", sol.coupling.matrix().as_slice());

        let base = hamming_cp_factor(2, sol.lambda)?;
        let fac = scale_factorization_to_coupling(&sol.coupling, &base, &sol.potential)?;
        let scheme = construct_latent(&fac, src.alphabet())?;
        println!(
            "  |Z| = {}, H(Z|X) = {:.6} nats",
            scheme.p_z.len(),
            scheme.target_distortion
        );

        let report = verify_scheme(&scheme, &src, &d, target, sol.rate)?;
        for c in &report.checks {
            println!("  {:<18} {:>10.2e} <= {:.0e}  {}", c.name, c.value, c.bound, c.passed);
        }
    }
    Ok(())
}
