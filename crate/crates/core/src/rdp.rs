//! Rate–distortion with perfect perception and its log-likelihood
//! realization through a completely positive factorization of the coupling.
//!
//! With the reconstruction marginal pinned to `P_X`, the optimal coupling is
//! `W(x,y) = exp(a(x) + b(y) - λ d(x,y))`. For symmetric `d` the potentials
//! agree, so `W = Φ V Φ` with `V = exp(-λd)` and `Φ = diag(e^a)`. Any
//! factorization `V = B Bᵀ` with `B >= 0` yields a latent `Z` whose two
//! conditionally independent legs reproduce `W`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loglik::{loglik_distortion, DistortionMatrix};
use crate::lp::{lp_solve, LpProblem, LpSolution, Objective};
use crate::prob::{
    bayes_reverse, conditional_entropy_nats, default_labels, mutual_information_nats, Channel, Joint, Pmf,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerceptionConfig {
    /// Max deviation of the row marginal after a sweep.
    pub marginal_tol: f64,
    pub max_sweeps: usize,
    /// Target accuracy of the achieved distortion.
    pub distortion_tol: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            marginal_tol: 1e-12,
            max_sweeps: 100_000,
            distortion_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PerceptionSolution {
    /// Rows `x`, columns `y`; both marginals equal `P_X`.
    pub coupling: Joint,
    pub lambda: f64,
    /// Row and column potentials; `-inf` off the support.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Symmetrized potential `(a + b) / 2`.
    pub potential: Vec<f64>,
    /// `R(D, 0) = I(X;Y)` in nats.
    pub rate: f64,
    pub distortion: f64,
    pub sweeps: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_square_symmetric(d: &DistortionMatrix) -> Result<()> {
    if d.n_source() != d.n_recon() {
        return Err(Error::validation("distortion", "perception constraint needs |X| = |Y|"));
    }
    if !d.is_symmetric(1e-12) {
        return Err(Error::validation("distortion", "matrix must be symmetric"));
    }
    Ok(())
}

struct Scaled {
    coupling: DMatrix<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    sweeps: usize,
}

/// Log-domain Sinkhorn scaling of `exp(-λd)` to marginals `(p, p)`.
fn sinkhorn(p: &Pmf, d: &DistortionMatrix, lambda: f64, cfg: &PerceptionConfig) -> Result<Scaled> {
    let n = p.len();
    let log_p: Vec<f64> = p.probs().iter().map(|v| v.ln()).collect();
    let kernel = |x: usize, y: usize| {
        let v = d.get(x, y);
        if v.is_finite() {
            -lambda * v
        } else {
            f64::NEG_INFINITY
        }
    };
    let support: Vec<usize> = (0..n).filter(|&x| p.prob(x) > 0.0).collect();
    for &x in &support {
        if support.iter().all(|&y| !d.get(x, y).is_finite()) {
            return Err(Error::Infeasible(format!(
                "kernel support: source symbol {} has no finite distortion to any supported symbol",
                p.alphabet()[x]
            )));
        }
    }

    let mut a = vec![f64::NEG_INFINITY; n];
    let mut b: Vec<f64> = (0..n)
        .map(|y| if p.prob(y) > 0.0 { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let mut gap = f64::INFINITY;
    for sweep in 1..=cfg.max_sweeps {
        for &x in &support {
            a[x] = log_p[x] - log_sum_exp(support.iter().map(|&y| kernel(x, y) + b[y]));
        }
        for &y in &support {
            b[y] = log_p[y] - log_sum_exp(support.iter().map(|&x| kernel(x, y) + a[x]));
        }
        gap = support
            .iter()
            .map(|&x| {
                let row = log_sum_exp(support.iter().map(|&y| kernel(x, y) + b[y])) + a[x];
                (row.exp() - p.prob(x)).abs()
            })
            .fold(0.0, f64::max);
        if gap <= cfg.marginal_tol {
            let coupling = DMatrix::from_fn(n, n, |x, y| {
                if p.prob(x) > 0.0 && p.prob(y) > 0.0 {
                    (a[x] + b[y] + kernel(x, y)).exp()
                } else {
                    0.0
                }
            });
            return Ok(Scaled {
                coupling,
                a,
                b,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NotConverged {
        what: "sinkhorn scaling (kernel support may not admit a coupling with these marginals)",
        iterations: cfg.max_sweeps,
        last_gap: gap,
    })
}

/// Minimum of `E[d]` over couplings with both marginals `p`.
pub fn min_coupling_cost(p: &Pmf, d: &DistortionMatrix) -> Result<f64> {
    check_square_symmetric(d)?;
    d.check_source(p)?;
    let n = p.len();
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .filter(|&(x, y)| d.get(x, y).is_finite())
        .collect();
    let mut a = DMatrix::zeros(2 * n, cells.len());
    for (k, &(x, y)) in cells.iter().enumerate() {
        a[(x, k)] = 1.0;
        a[(n + y, k)] = 1.0;
    }
    let b: Vec<f64> = p.probs().iter().chain(p.probs()).copied().collect();
    let costs = cells.iter().map(|&(x, y)| d.get(x, y)).collect();
    match lp_solve(&LpProblem::feasibility(a, b).with_objective(Objective::minimize(costs)))? {
        LpSolution::Feasible { value, .. } => Ok(value),
        _ => Err(Error::Infeasible(
            "no coupling with both marginals p has finite distortion".into(),
        )),
    }
}

fn finish(p: &Pmf, d: &DistortionMatrix, lambda: f64, s: Scaled) -> Result<PerceptionSolution> {
    let labels = p.alphabet().to_vec();
    let coupling = Joint::from_weights(labels.clone(), labels, s.coupling)?;
    let distortion = expected_cost(d, coupling.matrix());
    let potential = s.a.iter().zip(&s.b).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(PerceptionSolution {
        rate: mutual_information_nats(coupling.matrix()),
        coupling,
        lambda,
        a: s.a,
        b: s.b,
        potential,
        distortion,
        sweeps: s.sweeps,
    })
}

fn expected_cost(d: &DistortionMatrix, w: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for x in 0..w.nrows() {
        for y in 0..w.ncols() {
            if w[(x, y)] > 0.0 {
                acc += w[(x, y)] * d.get(x, y);
            }
        }
    }
    acc
}

/// `R(D, 0)`: minimum `I(X;Y)` over couplings with `P_Y = P_X` and `E[d] <= D`.
pub fn solve_perfect_perception(
    p: &Pmf,
    d: &DistortionMatrix,
    distortion: f64,
    cfg: &PerceptionConfig,
) -> Result<PerceptionSolution> {
    check_square_symmetric(d)?;
    d.check_source(p)?;
    if !distortion.is_finite() {
        return Err(Error::validation("distortion", "must be finite"));
    }

    let n = p.len();
    let independent = DMatrix::from_fn(n, n, |x, y| p.prob(x) * p.prob(y));
    if expected_cost(d, &independent) <= distortion {
        let log_p: Vec<f64> = p.probs().iter().map(|v| v.ln()).collect();
        let scaled = Scaled {
            coupling: independent,
            a: log_p.clone(),
            b: log_p,
            sweeps: 0,
        };
        return finish(p, d, 0.0, scaled);
    }
    let floor = min_coupling_cost(p, d)?;
    if distortion < floor - 1e-12 {
        return Err(Error::OutOfRange {
            value: distortion,
            lo: floor,
            hi: f64::INFINITY,
        });
    }

    let achieved = |lambda: f64| -> Result<(f64, Scaled)> {
        let s = sinkhorn(p, d, lambda, cfg)?;
        Ok((expected_cost(d, &s.coupling), s))
    };
    let scale = match d.max_finite() {
        m if m > 0.0 => 1.0 / m,
        _ => 1.0,
    };
    let mut lo = 0.0;
    let mut hi = scale;
    let mut best = achieved(hi)?;
    let mut doublings = 0;
    while best.0 > distortion + cfg.distortion_tol {
        if doublings == 200 {
            return Err(Error::NotConverged {
                what: "perception slope search",
                iterations: doublings,
                last_gap: best.0 - distortion,
            });
        }
        lo = hi;
        hi *= 2.0;
        best = achieved(hi)?;
        doublings += 1;
    }
    let mut lambda = hi;
    for _ in 0..200 {
        if (best.0 - distortion).abs() <= cfg.distortion_tol || hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let trial = achieved(mid)?;
        if trial.0 > distortion {
            lo = mid;
        } else {
            hi = mid;
            lambda = mid;
            best = trial;
        }
    }
    finish(p, d, lambda, best.1)
}

/// `V = exp(-λ d)` entrywise.
pub fn cp_exponential_matrix(d: &DistortionMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    check_square_symmetric(d)?;
    if d.entries().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("distortion", "entries must be finite"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::validation(
            "lambda",
            format!("{lambda} must be nonnegative and finite"),
        ));
    }
    Ok(d.entries().map(|v| (-lambda * v).exp()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpMethod {
    HammingExplicit,
    Numeric,
}

#[derive(Clone, Debug)]
pub struct CpFactorization {
    /// Nonnegative `n × r` factor.
    pub b: DMatrix<f64>,
    /// `max |B Bᵀ - target|`.
    pub residual: f64,
    pub method: CpMethod,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `B = [√a 1 | √(1-a) I]` with `a = e^{-λ}`, so `B Bᵀ = (1-a) I + a J`.
pub fn hamming_cp_factor(q: usize, lambda: f64) -> Result<CpFactorization> {
    if q < 2 {
        return Err(Error::validation("q", "alphabet size must be at least 2"));
    }
    if !(lambda > 0.0) {
        return Err(Error::validation("lambda", format!("{lambda} must be positive")));
    }
    let a = (-lambda).exp();
    let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
    let b = DMatrix::from_fn(q, q + 1, |i, k| match k {
        0 => sa,
        k if k == i + 1 => sb,
        _ => 0.0,
    });
    let target = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { a });
    let residual = max_abs(&(&b * b.transpose() - target));
    Ok(CpFactorization {
        b,
        residual,
        method: CpMethod::HammingExplicit,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericCpConfig {
    pub rank: usize,
    pub restarts: usize,
    /// Multiplicative updates per restart.
    pub iters: usize,
    /// Coordinate-descent sweeps after the multiplicative phase.
    pub polish_sweeps: usize,
    pub seed: u64,
}

impl NumericCpConfig {
    /// Rank `n + 1`, 20 restarts, 5000 updates.
    pub fn for_size(n: usize) -> Self {
        Self {
            rank: n + 1,
            restarts: 20,
            iters: 5000,
            polish_sweeps: 2000,
            seed: 0,
        }
    }
}

/// Real roots of `t³ + pt + q = 0`.
fn depressed_cubic_roots(p: f64, q: f64) -> Vec<f64> {
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc >= 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let theta = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| r * (theta / 3.0 - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    }
}

/// Exact coordinate minimization of `‖B Bᵀ - V‖_F²` over `B_ik >= 0`.
/// `m` holds `B Bᵀ - V` and is kept in sync.
fn polish_sweep(b: &mut DMatrix<f64>, m: &mut DMatrix<f64>) {
    let (n, r) = b.shape();
    for k in 0..r {
        for i in 0..n {
            let old = b[(i, k)];
            // with t the new value: f(t)/4 = t⁴/4 + (c0 + s2) t²/2 + lin t + const
            let c0 = m[(i, i)] - old * old;
            let mut s2 = 0.0;
            let mut lin = 0.0;
            for j in 0..n {
                if j != i {
                    let bj = b[(j, k)];
                    s2 += bj * bj;
                    lin += bj * (m[(i, j)] - old * bj);
                }
            }
            let f = |t: f64| 0.25 * t.powi(4) + 0.5 * (c0 + s2) * t * t + lin * t;
            let mut best = 0.0;
            let mut best_f = f(0.0);
            for t in depressed_cubic_roots(c0 + s2, lin) {
                if t > 0.0 && f(t) < best_f {
                    best = t;
                    best_f = f(t);
                }
            }
            let s = best - old;
            if s == 0.0 {
                continue;
            }
            for j in 0..n {
                if j != i {
                    let delta = s * b[(j, k)];
                    m[(i, j)] += delta;
                    m[(j, i)] += delta;
                }
            }
            m[(i, i)] += best * best - old * old;
            b[(i, k)] = best;
        }
    }
}

/// Symmetric nonnegative factorization `V ≈ B Bᵀ`, best of several seeded
/// restarts. A large residual means no certificate was found, not that `V`
/// fails to be completely positive.
pub fn cp_factor_numeric(v: &DMatrix<f64>, cfg: &NumericCpConfig) -> Result<CpFactorization> {
    let n = v.nrows();
    if v.ncols() != n || n == 0 {
        return Err(Error::validation("v", "matrix must be square and nonempty"));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::validation("v", "entries must be finite and nonnegative"));
    }
    if max_abs(&(v - v.transpose())) > 1e-12 {
        return Err(Error::validation("v", "matrix must be symmetric"));
    }
    if cfg.rank == 0 || cfg.restarts == 0 {
        return Err(Error::validation("rank", "rank and restarts must be positive"));
    }

    let mut best: Option<(DMatrix<f64>, f64)> = None;
    let v_mean = v.mean().max(f64::MIN_POSITIVE);
    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let mut b = DMatrix::from_fn(n, cfg.rank, |_, _| rng.random::<f64>());
        let bbt_mean = (&b * b.transpose()).mean().max(f64::MIN_POSITIVE);
        b *= (v_mean / bbt_mean).sqrt();

        for _ in 0..cfg.iters {
            let num = v * &b;
            let den = &b * (b.transpose() * &b);
            b.zip_apply(&num.zip_map(&den, |nu, de| nu / de.max(1e-300)), |x, ratio| {
                *x *= 0.5 + 0.5 * ratio;
            });
        }
        let mut m = &b * b.transpose() - v;
        for _ in 0..cfg.polish_sweeps {
            polish_sweep(&mut b, &mut m);
            if max_abs(&m) <= 1e-14 {
                break;
            }
        }
        let residual = max_abs(&(&b * b.transpose() - v));
        if best.as_ref().is_none_or(|(_, r)| residual < *r) {
            best = Some((b, residual));
        }
        if residual <= 1e-13 {
            break;
        }
    }
    let (b, residual) = best.expect("at least one restart");
    Ok(CpFactorization {
        b,
        residual,
        method: CpMethod::Numeric,
    })
}

/// `B' = Φ B` with `Φ = diag(exp(potential))`, a factor of `W = Φ V Φ`.
pub fn scale_factorization_to_coupling(
    w: &Joint,
    base: &CpFactorization,
    potential: &[f64],
) -> Result<CpFactorization> {
    let wm = w.matrix();
    if wm.nrows() != wm.ncols() || max_abs(&(wm - wm.transpose())) > 1e-9 {
        return Err(Error::validation("coupling", "must be symmetric within 1e-9"));
    }
    if potential.len() != wm.nrows() || base.b.nrows() != wm.nrows() {
        return Err(Error::validation("potential", "length does not match the coupling"));
    }
    let phi: Vec<f64> = potential.iter().map(|a| a.exp()).collect();
    let b = DMatrix::from_fn(base.b.nrows(), base.b.ncols(), |i, k| phi[i] * base.b[(i, k)]);
    let residual = max_abs(&(&b * b.transpose() - wm));
    Ok(CpFactorization {
        b,
        residual,
        method: base.method,
    })
}

/// Largest factorization residual accepted by [`construct_latent`].
pub const LATENT_RESIDUAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LatentScheme {
    pub p_z: Pmf,
    /// Inputs `z`, outputs `x`.
    pub p_x_given_z: Channel,
    /// Inputs `x`, outputs `z`.
    pub p_z_given_x: Channel,
    /// `H(Z|X)` in nats, the log-likelihood distortion the scheme targets.
    pub target_distortion: f64,
    /// `max |Σ_z P_Z P(x|z) P(y|z) - B Bᵀ|`.
    pub mixture_residual: f64,
    pub factor_residual: f64,
}

impl LatentScheme {
    /// `Σ_z P_Z(z) P(x|z) P(y|z)`.
    pub fn mixture(&self) -> DMatrix<f64> {
        let n = self.p_x_given_z.n_outputs();
        DMatrix::from_fn(n, n, |x, y| {
            (0..self.p_z.len())
                .map(|z| self.p_z.prob(z) * self.p_x_given_z.prob(x, z) * self.p_x_given_z.prob(y, z))
                .sum()
        })
    }
}

/// Latent variable from a factor of the coupling: column `b_z` gives
/// `P_Z(z) = (Σ b_z)²` and `P_{X|Z}(·|z) = b_z / Σ b_z`.
pub fn construct_latent(fac: &CpFactorization, alphabet: &[String]) -> Result<LatentScheme> {
    if fac.residual > LATENT_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "factorization residual {:e} exceeds {LATENT_RESIDUAL_TOL:e}",
            fac.residual
        )));
    }
    let n = fac.b.nrows();
    if alphabet.len() != n {
        return Err(Error::validation("alphabet", "length does not match the factor rows"));
    }
    let kept: Vec<usize> = (0..fac.b.ncols()).filter(|&k| fac.b.column(k).sum() >= 1e-12).collect();
    if kept.is_empty() {
        return Err(Error::Numerical("factor has no column with positive mass".into()));
    }
    let masses: Vec<f64> = kept.iter().map(|&k| fac.b.column(k).sum()).collect();
    let z_labels = default_labels(kept.len());
    let p_z = Pmf::from_weights(z_labels.clone(), masses.iter().map(|s| s * s).collect())?;
    let cond = DMatrix::from_fn(n, kept.len(), |x, z| fac.b[(x, kept[z])] / masses[z]);
    let p_x_given_z = Channel::from_weights(z_labels.clone(), alphabet.to_vec(), cond)?;

    let joint_xz = DMatrix::from_fn(n, kept.len(), |x, z| p_z.prob(z) * p_x_given_z.prob(x, z));
    let joint = Joint::from_weights(alphabet.to_vec(), z_labels, joint_xz)?;
    let rev = bayes_reverse(&joint)?;
    if !rev.dropped.is_empty() {
        return Err(Error::Numerical(format!(
            "zero marginal for source symbols {:?}",
            rev.dropped
        )));
    }
    let target_distortion = conditional_entropy_nats(&joint.matrix().transpose());

    let mut scheme = LatentScheme {
        p_z,
        p_x_given_z,
        p_z_given_x: rev.channel,
        target_distortion,
        mixture_residual: 0.0,
        factor_residual: fac.residual,
    };
    scheme.mixture_residual = max_abs(&(scheme.mixture() - &fac.b * fac.b.transpose()));
    Ok(scheme)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SchemeCheck {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SchemeReport {
    pub checks: Vec<SchemeCheck>,
    /// `I(X;Y)` of the end-to-end coupling, nats.
    pub rate: f64,
    pub distortion: f64,
}

impl SchemeReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Error naming the first failing check.
    pub fn ensure(&self) -> Result<()> {
        match self.checks.iter().find(|c| !c.passed) {
            None => Ok(()),
            Some(c) => Err(Error::Numerical(format!(
                "scheme check {} failed: {:e} > {:e}",
                c.name, c.value, c.bound
            ))),
        }
    }
}

/// End-to-end check of the Markov construction `X → Z → Y` with
/// `Y ~ P_{X|Z}(·|Z)`.
pub fn verify_scheme(
    scheme: &LatentScheme,
    p: &Pmf,
    d: &DistortionMatrix,
    distortion: f64,
    rate: f64,
) -> Result<SchemeReport> {
    d.check_source(p)?;
    let n = p.len();
    let nz = scheme.p_z.len();
    if scheme.p_z_given_x.n_inputs() != n || scheme.p_x_given_z.n_outputs() != n {
        return Err(Error::validation("scheme", "alphabet size does not match the source"));
    }
    let w_xy = DMatrix::from_fn(n, n, |x, y| {
        p.prob(x)
            * (0..nz)
                .map(|z| scheme.p_z_given_x.prob(z, x) * scheme.p_x_given_z.prob(y, z))
                .sum::<f64>()
    });
    let marginal_dev = (0..n)
        .map(|y| (w_xy.column(y).sum() - p.prob(y)).abs())
        .fold(0.0, f64::max);

    let d_ll = loglik_distortion(&scheme.p_z_given_x)?;
    let z_marginal = scheme.p_z_given_x.push_forward(p)?;
    let ll = d_ll.expected(&z_marginal, &scheme.p_x_given_z);
    let achieved_d = expected_cost(d, &w_xy);
    let achieved_rate = mutual_information_nats(&w_xy);

    let check = |name, value: f64, bound| SchemeCheck {
        name,
        value,
        bound,
        passed: value <= bound,
    };
    Ok(SchemeReport {
        checks: vec![
            check("output_marginal", marginal_dev, 1e-6),
            check("loglik_distortion", (ll - scheme.target_distortion).abs(), 1e-6),
            check("distortion", achieved_d - distortion, 1e-6),
            check("rate", (achieved_rate - rate).abs(), 1e-4),
        ],
        rate: achieved_rate,
        distortion: achieved_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hb(x: f64) -> f64 {
        crate::prob::entropy_nats(&[x, 1.0 - x])
    }

    #[test]
    fn perception_hamming_uniform() {
        let p = Pmf::bernoulli(0.5).unwrap();
        let d = DistortionMatrix::hamming(2).unwrap();
        let sol = solve_perfect_perception(&p, &d, 0.1, &PerceptionConfig::default()).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.45, 0.05, 0.05, 0.45]);
        assert!(max_abs(&(sol.coupling.matrix() - want)) < 1e-8);
        assert_abs_diff_eq!(sol.rate, 2f64.ln() - hb(0.1), epsilon = 1e-8);
        assert_abs_diff_eq!(sol.lambda, 9f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn perception_independent_when_loose() {
        let p = Pmf::bernoulli(0.3).unwrap();
        let d = DistortionMatrix::hamming(2).unwrap();
        let sol = solve_perfect_perception(&p, &d, 0.5, &PerceptionConfig::default()).unwrap();
        assert_eq!(sol.lambda, 0.0);
        assert_abs_diff_eq!(sol.rate, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.coupling.prob(0, 1), 0.21, epsilon = 1e-15);
    }

    #[test]
    fn perception_rejects_below_floor() {
        let p = Pmf::from_probs(vec![0.5, 0.5]).unwrap();
        let d = DistortionMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let err = solve_perfect_perception(&p, &d, 0.5, &PerceptionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }), "{err}");
    }

    #[test]
    fn potentials_reproduce_coupling() {
        let p = Pmf::from_probs(vec![0.2, 0.5, 0.3]).unwrap();
        let d = DistortionMatrix::squared(&[0.0, 1.0, 2.0]).unwrap();
        let sol = solve_perfect_perception(&p, &d, 0.3, &PerceptionConfig::default()).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                let gap = sol.coupling.prob(x, y).ln() + sol.lambda * d.get(x, y) - sol.a[x] - sol.b[y];
                assert!(gap.abs() < 1e-7);
            }
        }
        assert_abs_diff_eq!(sol.distortion, 0.3, epsilon = 1e-8);
    }

    #[test]
    fn exponential_matrix_examples() {
        let v = cp_exponential_matrix(&DistortionMatrix::hamming(2).unwrap(), 2f64.ln()).unwrap();
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let zero = DistortionMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(
            cp_exponential_matrix(&zero, 3.0).unwrap(),
            DMatrix::from_element(2, 2, 1.0)
        );
    }

    #[test]
    fn hamming_factor_examples() {
        let f = hamming_cp_factor(2, 2f64.ln()).unwrap();
        let h = 0.5f64.sqrt();
        assert!(max_abs(&(&f.b - DMatrix::from_row_slice(2, 3, &[h, h, 0.0, h, 0.0, h]))) < 1e-15);
        let big = hamming_cp_factor(3, 800.0).unwrap();
        assert_eq!(big.b.column(0).sum(), 0.0);
        assert!(max_abs(&(&big.b * big.b.transpose() - DMatrix::identity(3, 3))) < 1e-15);
    }

    #[test]
    fn cubic_roots() {
        let mut r = depressed_cubic_roots(-7.0, 6.0); // (t-1)(t-2)(t+3)
        r.sort_by(f64::total_cmp);
        for (got, want) in r.iter().zip([-3.0, 1.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(depressed_cubic_roots(0.0, -8.0)[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn numeric_factor_rank_one() {
        let v = DMatrix::from_fn(3, 3, |i, j| [0.2, 0.5, 0.7][i] * [0.2, 0.5, 0.7][j]);
        let cfg = NumericCpConfig {
            rank: 1,
            ..NumericCpConfig::for_size(3)
        };
        assert!(cp_factor_numeric(&v, &cfg).unwrap().residual <= 1e-10);
    }

    #[test]
    fn latent_from_identity_coupling() {
        let fac = CpFactorization {
            b: DMatrix::from_row_slice(2, 2, &[0.5f64.sqrt(), 0.0, 0.0, 0.5f64.sqrt()]),
            residual: 0.0,
            method: CpMethod::Numeric,
        };
        let s = construct_latent(&fac, &default_labels(2)).unwrap();
        assert_eq!(s.p_z.len(), 2);
        assert!(max_abs(&(s.p_x_given_z.matrix() - DMatrix::identity(2, 2))) < 1e-15);
        assert_abs_diff_eq!(s.target_distortion, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn full_pipeline_uniform_hamming() {
        let p = Pmf::bernoulli(0.5).unwrap();
        let d = DistortionMatrix::hamming(2).unwrap();
        let sol = solve_perfect_perception(&p, &d, 0.1, &PerceptionConfig::default()).unwrap();
        let base = hamming_cp_factor(2, sol.lambda).unwrap();
        let fac = scale_factorization_to_coupling(&sol.coupling, &base, &sol.potential).unwrap();
        assert!(fac.residual < 1e-9);
        let scheme = construct_latent(&fac, p.alphabet()).unwrap();
        assert_eq!(scheme.p_z.len(), 3);
        assert!(scheme.mixture_residual <= fac.residual + 1e-9);
        let report = verify_scheme(&scheme, &p, &d, 0.1, sol.rate).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn numeric_factor_recovers_hamming_targets() {
        for q in [2, 4] {
            let b = hamming_cp_factor(q, 1.0).unwrap().b;
            let v = &b * b.transpose();
            let f = cp_factor_numeric(&v, &NumericCpConfig::for_size(q)).unwrap();
            assert!(f.residual <= 1e-6, "q = {q}: {}", f.residual);
            assert!(f.b.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn numeric_factor_squared_distance_kernel() {
        let v = cp_exponential_matrix(&DistortionMatrix::squared(&[0.0, 1.0, 2.0]).unwrap(), 1.0).unwrap();
        let cfg = NumericCpConfig {
            rank: 6,
            ..NumericCpConfig::for_size(3)
        };
        assert!(cp_factor_numeric(&v, &cfg).unwrap().residual <= 1e-4);
    }
}
