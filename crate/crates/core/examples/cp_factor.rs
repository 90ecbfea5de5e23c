//! Completely positive factors of `exp(-λ d)`: the explicit Hamming
//! construction and the numeric search on a squared-distance kernel.

use llrd::loglik::DistortionMatrix;
use llrd::rdp::{cp_exponential_matrix, cp_factor_numeric, hamming_cp_factor, NumericCpConfig};

fn main() -> llrd::Result<()> {
    for q in [2, 4, 16] {
        let fac = hamming_cp_factor(q, 1.0)?;
        println!(
            "hamming q = {q:>2}: B is {}x{}, residual {:.1e}",
            fac.b.nrows(),
            fac.b.ncols(),
            fac.residual
        );
    }

    let d = DistortionMatrix::squared(&[0.0, 1.0, 2.0])?;
    let v = cp_exponential_matrix(&d, 1.0)?;
    let cfg = NumericCpConfig {
        rank: 6,
        ..NumericCpConfig::for_size(3)
    };
    let fac = cp_factor_numeric(&v, &cfg)?;
    println!("squared distance, λ = 1: residual {:.1e}", fac.residual);
    println!("B = {:.4}", fac.b);
    Ok(())
}
