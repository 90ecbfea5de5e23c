//! A three-input channel with a whole segment of consistent priors: the
//! log-likelihood curve runs along `H(X) - D` over an interval.

use llrd::ba::{rd_at_distortion, BaConfig};
use llrd::loglik::{consistency_polytope, loglik_distortion, logloss_rdf};
use llrd::prob::{Channel, LogBase, Pmf};

fn main() -> llrd::Result<()> {
    let bits = LogBase::Bits;
    let p = Pmf::from_probs(vec![0.65, 0.35])?;
    let ch = Channel::from_rows(&[vec![0.8, 0.4, 0.2], vec![0.2, 0.6, 0.8]])?;
    let d = loglik_distortion(&ch)?;

    let report = consistency_polytope(&p, &ch)?;
    let iv = report.interval.expect("consistent");
    println!("unique prior: {}", report.unique_prior);
    println!(
        "D* interval = [{:.6}, {:.6}] bits",
        bits.from_nats(iv.min),
        bits.from_nats(iv.max)
    );
    println!("  prior at min {:?}", iv.prior_at_min.probs());
    println!("  prior at max {:?}", iv.prior_at_max.probs());

    let cfg = BaConfig::default();
    for k in 0..=4 {
        let target = iv.min + (iv.max - iv.min) * k as f64 / 4.0;
        let pt = rd_at_distortion(&p, &d, target, &cfg)?;
        let gap = pt.rate - logloss_rdf(&p, pt.distortion);
        println!(
            "D = {:.6}  R_ll = {:.6}  gap = {:.1e} bits  converged = {}",
            bits.from_nats(pt.distortion),
            bits.from_nats(pt.rate),
            bits.from_nats(gap),
            pt.converged
        );
    }
    Ok(())
}
