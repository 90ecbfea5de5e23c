//! The log-likelihood distortion `d(x, u) = -log P(x | u)` and the quantities
//! it determines: feasible distortion range, rate at `D_min`, the consistency
//! polytope of priors and the special operating points, and the cross-entropy
//! decomposition of the expected distortion.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lp::{lp_solve, LpProblem, LpSolution, Objective};
use crate::prob::{self, bayes_reverse, default_labels, joint_from, kl_nats, matrix_from_rows, Channel, LogBase, Pmf};

/// Relative tie tolerance for maximum-likelihood sets.
pub const ML_TIE_TOL: f64 = 1e-9;

/// Nonnegative distortion matrix indexed `(source, reconstruction)`.
/// Entries may be `+inf`, meaning the pair can never be used.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionMatrix {
    source: Vec<String>,
    recon: Vec<String>,
    entries: DMatrix<f64>,
}

impl DistortionMatrix {
    pub fn new(source: Vec<String>, recon: Vec<String>, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != source.len() || entries.ncols() != recon.len() {
            return Err(Error::validation("distortion", "shape does not match alphabets"));
        }
        if entries.is_empty() {
            return Err(Error::validation("distortion", "empty matrix"));
        }
        for x in 0..entries.nrows() {
            for y in 0..entries.ncols() {
                let v = entries[(x, y)];
                if v.is_nan() || v < 0.0 {
                    return Err(Error::validation(
                        format!("distortion[{x}][{y}]"),
                        format!("entry {v} is not in [0, inf]"),
                    ));
                }
            }
            if !entries.row(x).iter().any(|v| v.is_finite()) {
                return Err(Error::validation(format!("distortion[{x}]"), "row has no finite entry"));
            }
        }
        Ok(Self { source, recon, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = matrix_from_rows(rows)?;
        Self::new(default_labels(m.nrows()), default_labels(m.ncols()), m)
    }

    /// `q`-ary Hamming distortion.
    pub fn hamming(q: usize) -> Result<Self> {
        let m = DMatrix::from_fn(q, q, |x, y| if x == y { 0.0 } else { 1.0 });
        Self::new(default_labels(q), default_labels(q), m)
    }

    /// Squared distance between points on the real line.
    pub fn squared(points: &[f64]) -> Result<Self> {
        let n = points.len();
        let m = DMatrix::from_fn(n, n, |x, y| (points[x] - points[y]).powi(2));
        Self::new(default_labels(n), default_labels(n), m)
    }

    pub fn source(&self) -> &[String] {
        &self.source
    }

    pub fn recon(&self) -> &[String] {
        &self.recon
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[(x, y)]
    }

    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn n_recon(&self) -> usize {
        self.recon.len()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let (r, c) = self.entries.shape();
        r == c
            && (0..r).all(|i| {
                (0..i).all(|j| {
                    let (a, b) = (self.get(i, j), self.get(j, i));
                    a == b || (a - b).abs() <= tol
                })
            })
    }

    /// Largest finite entry (zero if all finite entries are zero).
    pub fn max_finite(&self) -> f64 {
        self.entries
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0, |a, &b| a.max(b))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        prob::rows_of(&self.entries)
    }

    pub(crate) fn check_source(&self, p: &Pmf) -> Result<()> {
        if p.alphabet() != self.source.as_slice() {
            return Err(Error::AlphabetMismatch(format!(
                "source {:?} vs distortion rows {:?}",
                p.alphabet(),
                self.source
            )));
        }
        Ok(())
    }

    /// `(E_X[min_y d(X,y)], min_y E_X[d(X,y)])`; zero-probability rows are skipped.
    pub fn feasible_range(&self, p: &Pmf) -> Result<(f64, f64)> {
        self.check_source(p)?;
        let d_min = (0..self.n_source())
            .filter(|&x| p.prob(x) > 0.0)
            .map(|x| p.prob(x) * self.entries.row(x).min())
            .sum();
        let d_max = (0..self.n_recon())
            .map(|y| self.expected_at(p, y))
            .fold(f64::INFINITY, f64::min);
        Ok((d_min, d_max))
    }

    /// `E_X[d(X, y)]` for a fixed reconstruction `y`.
    pub fn expected_at(&self, p: &Pmf, y: usize) -> f64 {
        (0..self.n_source())
            .filter(|&x| p.prob(x) > 0.0)
            .map(|x| p.prob(x) * self.get(x, y))
            .sum()
    }

    /// `E[d(X,Y)]` under `p(x) W(y|x)`; `+inf` if positive mass meets an infinite entry.
    pub fn expected(&self, p: &Pmf, test: &Channel) -> f64 {
        let mut acc = 0.0;
        for x in 0..self.n_source() {
            for y in 0..self.n_recon() {
                let w = p.prob(x) * test.prob(y, x);
                if w > 0.0 {
                    acc += w * self.get(x, y);
                }
            }
        }
        acc
    }

    /// For every `x`, the reconstructions within `abs_tol` of the row minimum.
    pub fn argmin_sets(&self, abs_tol: f64) -> Vec<Vec<usize>> {
        (0..self.n_source())
            .map(|x| {
                let row = self.entries.row(x);
                let min = row.min();
                (0..self.n_recon()).filter(|&y| row[y] <= min + abs_tol).collect()
            })
            .collect()
    }
}

/// Build `d(x, u) = -ln P(x|u)` (nats); zero likelihoods become `+inf`.
pub fn loglik_distortion(ch: &Channel) -> Result<DistortionMatrix> {
    let m = DMatrix::from_fn(ch.n_outputs(), ch.n_inputs(), |x, u| {
        let v = ch.prob(x, u);
        if v > 0.0 {
            -v.ln()
        } else {
            f64::INFINITY
        }
    });
    DistortionMatrix::new(ch.outputs().to_vec(), ch.inputs().to_vec(), m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibleRange {
    pub d_min: f64,
    pub d_max: f64,
    pub units: LogBase,
}

impl FeasibleRange {
    pub fn in_units(self, base: LogBase) -> Self {
        let nats = |v| self.units.to_nats(v);
        Self {
            d_min: base.from_nats(nats(self.d_min)),
            d_max: base.from_nats(nats(self.d_max)),
            units: base,
        }
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.d_min && d <= self.d_max
    }
}

/// `[D_min, D_max]` of the log-likelihood problem `(p, P_{X|U})`, in nats.
pub fn feasible_range(p: &Pmf, ch: &Channel) -> Result<FeasibleRange> {
    let (d_min, d_max) = loglik_distortion(ch)?.feasible_range(p)?;
    Ok(FeasibleRange {
        d_min,
        d_max,
        units: LogBase::Nats,
    })
}

/// Maximum-likelihood sets `T(x)`, as indices into the `U` alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlSets {
    pub sets: Vec<Vec<usize>>,
}

impl MlSets {
    pub fn get(&self, x: usize) -> &[usize] {
        &self.sets[x]
    }
}

/// `u ∈ T(x)` iff `P(x|u) >= (1 - tie_tol) max_u' P(x|u')`.
pub fn ml_sets(ch: &Channel, tie_tol: f64) -> MlSets {
    let sets = (0..ch.n_outputs())
        .map(|x| {
            let best = (0..ch.n_inputs()).map(|u| ch.prob(x, u)).fold(0.0, f64::max);
            (0..ch.n_inputs())
                .filter(|&u| ch.prob(x, u) >= (1.0 - tie_tol) * best)
                .collect()
        })
        .collect();
    MlSets { sets }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DminConfig {
    /// Stop once successive objective values differ by less than this (nats).
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DminConfig {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iters: 100_000,
        }
    }
}

/// Rate at the minimum distortion and its randomized ML decoder.
#[derive(Clone, Debug)]
pub struct DminRate {
    /// `min_Q E_X[-ln Q(T(X))]`, nats.
    pub rate: f64,
    /// Optimal reconstruction marginal.
    pub q: Pmf,
    /// Test channel `W(y|x) = Q(y) 1[y ∈ T(x)] / Q(T(x))`.
    pub channel: Channel,
    pub iterations: usize,
}

/// Minimize `E_X[-ln Q(T(X))]` over the simplex by alternating between the
/// I-projection of `Q` onto each `T(x)` and the induced output marginal.
pub(crate) fn min_set_rate(p: &Pmf, sets: &[Vec<usize>], recon: &[String], cfg: &DminConfig) -> Result<DminRate> {
    let n_recon = recon.len();
    let objective = |q: &[f64]| -> f64 {
        sets.iter()
            .enumerate()
            .filter(|&(x, _)| p.prob(x) > 0.0)
            .map(|(x, t)| -p.prob(x) * t.iter().map(|&y| q[y]).sum::<f64>().ln())
            .sum()
    };
    let mut q = vec![1.0 / n_recon as f64; n_recon];
    let mut f = objective(&q);
    let mut iterations = 0;
    let mut converged = false;
    let mut last_gap = f64::INFINITY;
    while iterations < cfg.max_iters {
        let mut next = vec![0.0; n_recon];
        for (x, t) in sets.iter().enumerate() {
            let px = p.prob(x);
            if px == 0.0 {
                continue;
            }
            let mass: f64 = t.iter().map(|&y| q[y]).sum();
            for &y in t {
                next[y] += px * q[y] / mass;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let f_next = objective(&next);
        iterations += 1;
        last_gap = (f - f_next).abs();
        q = next;
        f = f_next;
        if last_gap < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            what: "rate at D_min",
            iterations,
            last_gap,
        });
    }

    let w = DMatrix::from_fn(n_recon, sets.len(), |y, x| {
        let t = &sets[x];
        if !t.contains(&y) {
            return 0.0;
        }
        let mass: f64 = t.iter().map(|&v| q[v]).sum();
        if mass > 0.0 {
            q[y] / mass
        } else {
            1.0 / t.len() as f64
        }
    });
    let channel = Channel::from_weights(p.alphabet().to_vec(), recon.to_vec(), w)?;
    Ok(DminRate {
        rate: f.max(0.0),
        q: Pmf::from_weights(recon.to_vec(), q)?,
        channel,
        iterations,
    })
}

/// `R_ll(D_min) = min_Q E_X[-ln Σ_{u ∈ T(X)} Q(u)]`, nats.
pub fn rate_at_dmin(p: &Pmf, ch: &Channel, cfg: &DminConfig) -> Result<DminRate> {
    if p.alphabet() != ch.outputs() {
        return Err(Error::AlphabetMismatch("source vs channel outputs".into()));
    }
    let sets = ml_sets(ch, ML_TIE_TOL);
    min_set_rate(p, &sets.sets, ch.inputs(), cfg)
}

/// Endpoints of the special-point interval `{H(X|U)}` over consistent priors.
#[derive(Clone, Debug)]
pub struct SpecialInterval {
    /// Smallest `H(X|U)` over consistent priors, nats.
    pub min: f64,
    /// Largest `H(X|U)` over consistent priors, nats.
    pub max: f64,
    pub prior_at_min: Pmf,
    pub prior_at_max: Pmf,
}

#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub feasible: bool,
    pub witness_prior: Option<Pmf>,
    pub interval: Option<SpecialInterval>,
    /// The consistency polytope is a single point.
    pub unique_prior: bool,
}

impl ConsistencyReport {
    fn infeasible() -> Self {
        Self {
            feasible: false,
            witness_prior: None,
            interval: None,
            unique_prior: false,
        }
    }
}

/// Priors `q` on `U` with `P_{X|U} q = p`, and the range of `H(X|U)` over them.
///
/// `H(X|U) = Σ_u q(u) H(P(·|u))` is linear in `q`, so both endpoints are LPs.
pub fn consistency_polytope(p: &Pmf, ch: &Channel) -> Result<ConsistencyReport> {
    if p.alphabet() != ch.outputs() {
        return Err(Error::AlphabetMismatch("source vs channel outputs".into()));
    }
    let (nx, nu) = (ch.n_outputs(), ch.n_inputs());
    let mut a = DMatrix::zeros(nx + 1, nu);
    a.view_mut((0, 0), (nx, nu)).copy_from(ch.matrix());
    a.row_mut(nx).fill(1.0);
    let mut b = p.probs().to_vec();
    b.push(1.0);
    let base = LpProblem::feasibility(a, b);

    let h_cols: Vec<f64> = (0..nu).map(|u| prob::entropy_nats(&ch.column(u))).collect();
    let lo = lp_solve(&base.clone().with_objective(Objective::minimize(h_cols.clone())))?;
    let LpSolution::Feasible { witness: w_lo, .. } = lo else {
        return Ok(ConsistencyReport::infeasible());
    };
    let hi = lp_solve(&base.clone().with_objective(Objective::maximize(h_cols.clone())))?;
    let w_hi = hi
        .witness()
        .ok_or_else(|| Error::Numerical("maximization LP lost feasibility".into()))?
        .to_vec();

    let mut unique_prior = true;
    for u in 0..nu {
        let mut e = vec![0.0; nu];
        e[u] = 1.0;
        let lo = lp_solve(&base.clone().with_objective(Objective::minimize(e.clone())))?.value();
        let hi = lp_solve(&base.clone().with_objective(Objective::maximize(e)))?.value();
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if hi - lo > 1e-9 {
                unique_prior = false;
                break;
            }
        }
    }

    let h_at = |w: &[f64]| w.iter().zip(&h_cols).map(|(q, h)| q * h).sum::<f64>();
    let prior_at_min = Pmf::from_weights(ch.inputs().to_vec(), w_lo.clone())?;
    let prior_at_max = Pmf::from_weights(ch.inputs().to_vec(), w_hi.clone())?;
    let (min, max) = (h_at(&w_lo), h_at(&w_hi).max(h_at(&w_lo)));
    Ok(ConsistencyReport {
        feasible: true,
        witness_prior: Some(prior_at_min.clone()),
        interval: Some(SpecialInterval {
            min,
            max,
            prior_at_min,
            prior_at_max,
        }),
        unique_prior,
    })
}

/// Log-loss rate-distortion function `max(H(X) - D, 0)`, nats.
pub fn logloss_rdf(p: &Pmf, d: f64) -> f64 {
    (prob::entropy_nats(p.probs()) - d).max(0.0)
}

/// Both sides of `E[d_ll] = H(X|Y) + E_Y[KL(W_{X|Y} || P_{X|U}(·|Y))]`, nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Evaluate the cross-entropy decomposition of the expected log-likelihood
/// distortion for an arbitrary test channel `W_{Y|X}`.
pub fn decomposition_check(p: &Pmf, ch_xu: &Channel, test: &Channel) -> Result<Decomposition> {
    if p.alphabet() != ch_xu.outputs() || test.inputs() != p.alphabet() || test.outputs() != ch_xu.inputs() {
        return Err(Error::AlphabetMismatch("decomposition_check alphabets".into()));
    }
    let lhs = loglik_distortion(ch_xu)?.expected(p, test);

    let joint = joint_from(p, test)?; // rows Y, cols X
    let q_y = joint.marginal_row();
    let backward = bayes_reverse(&joint)?.channel; // P(x|y) for y with Q(y) > 0
    let mut expected_kl = 0.0;
    for (k, label) in backward.inputs().iter().enumerate() {
        let y = ch_xu
            .inputs()
            .iter()
            .position(|l| l == label)
            .expect("label from same alphabet");
        expected_kl += q_y.prob(y) * kl_nats(&backward.column(k), &ch_xu.column(y));
    }
    let rhs = joint.conditional_entropy_cols(LogBase::Nats) + expected_kl;
    let gap = if lhs.is_infinite() && rhs.is_infinite() {
        0.0
    } else {
        (lhs - rhs).abs()
    };
    Ok(Decomposition { lhs, rhs, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const BITS: LogBase = LogBase::Bits;

    fn fig3_channel() -> Channel {
        Channel::from_rows(&[vec![0.8, 0.4, 0.2], vec![0.2, 0.6, 0.8]]).unwrap()
    }

    fn bits(nats: f64) -> f64 {
        BITS.from_nats(nats)
    }

    #[test]
    fn loglik_distortion_examples() {
        let d = loglik_distortion(&Channel::bsc(0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(bits(d.get(0, 0)), 0.152, epsilon = 5e-4);
        assert_abs_diff_eq!(bits(d.get(1, 1)), 0.152, epsilon = 5e-4);
        assert_abs_diff_eq!(bits(d.get(0, 1)), 10f64.log2(), epsilon = 1e-12);

        let id = loglik_distortion(&Channel::identity(3).unwrap()).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(id.get(x, y), if x == y { 0.0 } else { f64::INFINITY });
            }
        }

        let d3 = loglik_distortion(&fig3_channel()).unwrap();
        for (u, v) in [0.8f64, 0.4, 0.2].iter().enumerate() {
            assert_eq!(d3.get(0, u), -v.ln());
        }
    }

    #[test]
    fn loglik_distortion_rejects_unreachable_symbol() {
        let ch = Channel::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(loglik_distortion(&ch).is_err());
    }

    #[test]
    fn feasible_range_examples() {
        let r = feasible_range(&Pmf::bernoulli(0.25).unwrap(), &Channel::bsc(0.1).unwrap())
            .unwrap()
            .in_units(BITS);
        assert_abs_diff_eq!(r.d_min, 0.152, epsilon = 1e-3);
        assert_abs_diff_eq!(r.d_max, 0.945, epsilon = 1e-3);

        let r = feasible_range(&Pmf::bernoulli(0.35).unwrap(), &fig3_channel())
            .unwrap()
            .in_units(BITS);
        assert_abs_diff_eq!(r.d_min, 0.322, epsilon = 1e-3);
        assert_abs_diff_eq!(r.d_max, 1.022, epsilon = 1e-3);

        let p = Pmf::from_probs(vec![0.2, 0.8]).unwrap();
        let r = feasible_range(&p, &Channel::identity(2).unwrap()).unwrap();
        assert_eq!(r.d_min, 0.0);
        assert!(r.d_max.is_infinite());
        let r = feasible_range(&Pmf::delta(2, 0).unwrap(), &Channel::identity(2).unwrap()).unwrap();
        assert_eq!((r.d_min, r.d_max), (0.0, 0.0));
    }

    #[test]
    fn ml_sets_examples() {
        let s = ml_sets(&Channel::bsc(0.1).unwrap(), ML_TIE_TOL);
        assert_eq!(s.sets, vec![vec![0], vec![1]]);
        let s = ml_sets(&fig3_channel(), ML_TIE_TOL);
        assert_eq!(s.sets, vec![vec![0], vec![2]]);
        let flat = Channel::from_rows(&[vec![0.3, 0.3, 0.3], vec![0.7, 0.7, 0.7]]).unwrap();
        assert_eq!(ml_sets(&flat, ML_TIE_TOL).sets, vec![vec![0, 1, 2]; 2]);
    }

    #[test]
    fn rate_at_dmin_bijective_sets() {
        let p = Pmf::bernoulli(0.25).unwrap();
        let r = rate_at_dmin(&p, &Channel::bsc(0.1).unwrap(), &DminConfig::default()).unwrap();
        assert_abs_diff_eq!(r.rate, prob::entropy_nats(p.probs()), epsilon = 1e-9);
        assert_abs_diff_eq!(bits(r.rate), 0.8113, epsilon = 5e-5);
    }

    #[test]
    fn rate_at_dmin_full_ties() {
        let flat = Channel::from_rows(&[vec![0.3, 0.3], vec![0.7, 0.7]]).unwrap();
        let r = rate_at_dmin(&Pmf::bernoulli(0.4).unwrap(), &flat, &DminConfig::default()).unwrap();
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn consistency_examples() {
        let rep = consistency_polytope(&Pmf::bernoulli(0.25).unwrap(), &Channel::bsc(0.1).unwrap()).unwrap();
        assert!(rep.feasible && rep.unique_prior);
        let prior = rep.witness_prior.unwrap();
        assert_abs_diff_eq!(prior.prob(1), 0.1875, epsilon = 1e-12);
        let iv = rep.interval.unwrap();
        assert_abs_diff_eq!(bits(iv.min), 0.469, epsilon = 1e-3);
        assert_abs_diff_eq!(iv.min, iv.max, epsilon = 1e-12);

        let rep = consistency_polytope(&Pmf::bernoulli(0.35).unwrap(), &fig3_channel()).unwrap();
        assert!(rep.feasible && !rep.unique_prior);
        let iv = rep.interval.unwrap();
        assert_abs_diff_eq!(bits(iv.min), 0.718, epsilon = 0.01);
        assert_abs_diff_eq!(bits(iv.max), 0.816, epsilon = 0.01);

        let positive = Channel::from_rows(&[vec![0.9, 0.6], vec![0.1, 0.4]]).unwrap();
        let rep = consistency_polytope(&Pmf::bernoulli(0.0).unwrap(), &positive).unwrap();
        assert!(!rep.feasible && rep.interval.is_none());
    }

    #[test]
    fn logloss_examples() {
        let p = Pmf::bernoulli(0.25).unwrap();
        assert_abs_diff_eq!(bits(logloss_rdf(&p, 0.0)), 0.8113, epsilon = 5e-5);
        assert_eq!(logloss_rdf(&p, prob::entropy_nats(p.probs())), 0.0);
        let p = Pmf::bernoulli(0.35).unwrap();
        assert_abs_diff_eq!(bits(logloss_rdf(&p, BITS.to_nats(0.469))), 0.4651, epsilon = 1e-4);
    }

    #[test]
    fn decomposition_at_posterior_test_channel() {
        let p = Pmf::bernoulli(0.25).unwrap();
        let ch = Channel::bsc(0.1).unwrap();
        let prior = Pmf::bernoulli(0.1875).unwrap();
        let posterior = bayes_reverse(&joint_from(&prior, &ch).unwrap()).unwrap().channel;
        let dec = decomposition_check(&p, &ch, &posterior).unwrap();
        let h_x_given_u = prob::entropy_nats(&[0.9, 0.1]);
        assert!(dec.gap < 1e-12);
        assert_abs_diff_eq!(dec.lhs, h_x_given_u, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.rhs, h_x_given_u, epsilon = 1e-12);
    }

    #[test]
    fn decomposition_constant_test_channel() {
        let p = Pmf::bernoulli(0.35).unwrap();
        let ch = fig3_channel();
        let mut w = DMatrix::zeros(3, 2);
        w.row_mut(1).fill(1.0);
        let test = Channel::new(p.alphabet().to_vec(), ch.inputs().to_vec(), w).unwrap();
        let dec = decomposition_check(&p, &ch, &test).unwrap();
        let direct = -(0.65 * 0.4f64.ln() + 0.35 * 0.6f64.ln());
        assert_abs_diff_eq!(dec.lhs, direct, epsilon = 1e-15);
        assert!(dec.gap < 1e-12);
    }
}
