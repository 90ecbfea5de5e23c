//! Binary source through a BSC: the log-likelihood curve touches the
//! log-loss line at exactly one distortion, `H(X|U)` for the unique
//! consistent prior.

use llrd::ba::{rd_at_distortion, BaConfig};
use llrd::loglik::{consistency_polytope, feasible_range, loglik_distortion, logloss_rdf};
use llrd::prob::{entropy, Channel, LogBase, Pmf};

fn main() -> llrd::Result<()> {
    let bits = LogBase::Bits;
    let p = Pmf::bernoulli(0.25)?;
    let ch = Channel::bsc(0.1)?;
    let d = loglik_distortion(&ch)?;

    let range = feasible_range(&p, &ch)?.in_units(bits);
    println!("H(X)  = {:.4} bits", entropy(&p, bits));
    println!("range = [{:.4}, {:.4}] bits", range.d_min, range.d_max);

    let report = consistency_polytope(&p, &ch)?;
    let prior = report.witness_prior.expect("BSC(0.1) reaches Ber(0.25)");
    let special = report.interval.expect("feasible").min;
    println!("prior = {:?}, unique = {}", prior.probs(), report.unique_prior);
    println!("D*    = {:.4} bits", bits.from_nats(special));

    let cfg = BaConfig::default();
    for frac in [0.5, 0.9, 1.0, 1.1, 1.5] {
        let target = special * frac;
        let pt = rd_at_distortion(&p, &d, target, &cfg)?;
        println!(
            "D = {:.4}  R_ll = {:.6}  H - D = {:.6}",
            bits.from_nats(pt.distortion),
            bits.from_nats(pt.rate),
            bits.from_nats(logloss_rdf(&p, pt.distortion)),
        );
    }
    Ok(())
}
