//! Single-parameter dual form of `R(D)` and the translation of classical
//! distortion problems into log-likelihood problems.
//!
//! A slope `λ > 0` is *feasible* when some `μ(x) >= 0` normalizes every
//! backward column, `Σ_x μ(x) e^{-λ d(x,y)} = 1`, and some output marginal
//! `q` reproduces the source, `Σ_y q(y) e^{-λ d(x,y)} = p(x) / μ(x)`. Over
//! the feasible set, `R(D) = max_λ H(X) + E[ln μ(X,λ)] - λ D`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::loglik::DistortionMatrix;
use crate::lp::{lp_solve, LpProblem, LpSolution};
use crate::prob::{entropy_nats, Channel, LogBase, Pmf};

/// Residual accepted on both tilt systems.
pub const TILT_TOL: f64 = 1e-9;
const MU_NONNEG_TOL: f64 = 1e-12;

/// Entrywise `exp(-λ d)`, `x` rows; infinite distortion maps to an exact zero.
pub fn tilt_matrix(d: &DistortionMatrix, lambda: f64) -> DMatrix<f64> {
    d.entries()
        .map(|v| if v.is_finite() { (-lambda * v).exp() } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub enum MuOutcome {
    Feasible {
        mu: Vec<f64>,
        /// `max_y |Σ_x μ(x) V(x,y) - 1|`.
        residual: f64,
        /// False when the normalizing system is rank deficient and `μ` was
        /// picked from the solution polytope by LP.
        unique: bool,
    },
    Infeasible {
        reason: String,
    },
}

impl MuOutcome {
    pub fn mu(&self) -> Option<&[f64]> {
        match self {
            MuOutcome::Feasible { mu, .. } => Some(mu),
            MuOutcome::Infeasible { .. } => None,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::validation(
            "lambda",
            format!("{lambda} must be positive and finite"),
        ));
    }
    Ok(())
}

fn normalizer_residual(v: &DMatrix<f64>, mu: &[f64]) -> f64 {
    let sums = v.transpose() * DVector::from_column_slice(mu);
    sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

/// Solve `Vᵀ μ = 1` with `V = exp(-λ d)`.
pub fn solve_mu(d: &DistortionMatrix, lambda: f64) -> Result<MuOutcome> {
    check_lambda(lambda)?;
    let v = tilt_matrix(d, lambda);
    let system = v.transpose(); // rows y, cols x
    let (ny, nx) = system.shape();
    let ones = DVector::from_element(ny, 1.0);
    let svd = system.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * 1e-12 * ny.max(nx) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();

    if rank == nx {
        let mu = svd
            .solve(&ones, cutoff)
            .map_err(|e| Error::Numerical(format!("normalizer solve failed: {e}")))?;
        let mu: Vec<f64> = mu.iter().copied().collect();
        let residual = normalizer_residual(&v, &mu);
        if residual > TILT_TOL {
            return Ok(MuOutcome::Infeasible {
                reason: format!("no normalizer: least-squares residual {residual:e}"),
            });
        }
        if let Some(neg) = mu.iter().copied().find(|&m| m < -MU_NONNEG_TOL) {
            return Ok(MuOutcome::Infeasible {
                reason: format!("normalizer has negative component {neg:e}"),
            });
        }
        let mu: Vec<f64> = mu.into_iter().map(|m| m.max(0.0)).collect();
        let residual = normalizer_residual(&v, &mu);
        return Ok(MuOutcome::Feasible {
            mu,
            residual,
            unique: true,
        });
    }

    // Rank deficient: pick any nonnegative point of the solution set.
    match lp_solve(&LpProblem::feasibility(system, vec![1.0; ny]))? {
        LpSolution::Feasible { witness, .. } => {
            let residual = normalizer_residual(&v, &witness);
            Ok(MuOutcome::Feasible {
                mu: witness,
                residual,
                unique: false,
            })
        }
        _ => Ok(MuOutcome::Infeasible {
            reason: "normalizing system has no nonnegative solution".into(),
        }),
    }
}

/// Tilt at one slope: normalizer, coupling witness and both residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct TiltSolution {
    pub lambda: f64,
    /// Empty when no normalizer exists.
    pub mu: Vec<f64>,
    pub q_y: Option<Pmf>,
    pub feasible: bool,
    pub mu_residual: f64,
    /// `max_x |Σ_y q(y) V(x,y) - p(x)/μ(x)|`.
    pub coupling_residual: f64,
    pub diagnostic: Option<String>,
}

impl TiltSolution {
    fn infeasible(lambda: f64, mu: Vec<f64>, mu_residual: f64, diagnostic: String) -> Self {
        Self {
            lambda,
            mu,
            q_y: None,
            feasible: false,
            mu_residual,
            coupling_residual: f64::INFINITY,
            diagnostic: Some(diagnostic),
        }
    }
}

/// Residual of `Σ_y q(y) V(x,y) = p(x)/μ(x)`, checked independently of the LP.
pub fn coupling_residual(p: &Pmf, v: &DMatrix<f64>, mu: &[f64], q: &[f64]) -> f64 {
    let fitted = v * DVector::from_column_slice(q);
    (0..p.len())
        .map(|x| {
            if mu[x] > 0.0 {
                (fitted[x] - p.prob(x) / mu[x]).abs()
            } else if p.prob(x) > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Is there an output marginal `q` making `μ(x) e^{-λd}` the backward
/// channel of a coupling with source marginal `p`?
pub fn coupling_feasible(p: &Pmf, d: &DistortionMatrix, lambda: f64, mu: &[f64]) -> Result<TiltSolution> {
    check_lambda(lambda)?;
    d.check_source(p)?;
    if mu.len() != d.n_source() {
        return Err(Error::validation("mu", "length does not match the source alphabet"));
    }
    let v = tilt_matrix(d, lambda);
    let mu_residual = normalizer_residual(&v, mu);
    if let Some(x) = (0..p.len()).find(|&x| mu[x] <= 0.0 && p.prob(x) > 0.0) {
        return Ok(TiltSolution::infeasible(
            lambda,
            mu.to_vec(),
            mu_residual,
            format!("μ({x}) = 0 but p({x}) > 0"),
        ));
    }

    let rows: Vec<usize> = (0..p.len()).filter(|&x| mu[x] > 0.0).collect();
    let ny = d.n_recon();
    let mut a = DMatrix::zeros(rows.len() + 1, ny);
    let mut b = Vec::with_capacity(rows.len() + 1);
    for (k, &x) in rows.iter().enumerate() {
        a.row_mut(k).copy_from(&v.row(x));
        b.push(p.prob(x) / mu[x]);
    }
    a.row_mut(rows.len()).fill(1.0);
    b.push(1.0);

    match lp_solve(&LpProblem::feasibility(a, b))? {
        LpSolution::Feasible { witness, .. } => {
            let residual = coupling_residual(p, &v, mu, &witness);
            let witness: Vec<f64> = witness.into_iter().map(|w| w.max(0.0)).collect();
            let q_y = Pmf::from_weights(d.recon().to_vec(), witness.clone())?;
            let feasible = residual <= TILT_TOL && mu_residual <= TILT_TOL;
            Ok(TiltSolution {
                lambda,
                mu: mu.to_vec(),
                q_y: Some(q_y),
                feasible,
                mu_residual,
                coupling_residual: residual,
                diagnostic: (!feasible).then(|| format!("residuals {mu_residual:e} / {residual:e}")),
            })
        }
        _ => Ok(TiltSolution::infeasible(
            lambda,
            mu.to_vec(),
            mu_residual,
            "no output marginal reproduces the source".into(),
        )),
    }
}

/// Full feasibility test at one slope.
pub fn tilt_at(p: &Pmf, d: &DistortionMatrix, lambda: f64) -> Result<TiltSolution> {
    match solve_mu(d, lambda)? {
        MuOutcome::Feasible { mu, .. } => coupling_feasible(p, d, lambda, &mu),
        MuOutcome::Infeasible { reason } => Ok(TiltSolution::infeasible(lambda, Vec::new(), f64::INFINITY, reason)),
    }
}

/// `n` log-spaced slopes spanning `[1e-2, 1e2]`, scaled by `1 / max finite d`.
pub fn default_lambda_grid(d: &DistortionMatrix, n: usize) -> Vec<f64> {
    let scale = match d.max_finite() {
        m if m > 0.0 => 1.0 / m,
        _ => 1.0,
    };
    let (lo, hi) = (1e-2f64.ln(), 1e2f64.ln());
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            (lo + t * (hi - lo)).exp() * scale
        })
        .collect()
}

pub const DEFAULT_GRID_POINTS: usize = 60;

/// Per-slope membership verdicts for the feasibility set.
pub fn lambda_feasible_set(p: &Pmf, d: &DistortionMatrix, grid: &[f64]) -> Result<Vec<TiltSolution>> {
    grid.iter().map(|&lambda| tilt_at(p, d, lambda)).collect()
}

/// `H(X) + E[ln μ(X)] - λ D`, nats.
pub fn dual_objective(p: &Pmf, mu: &[f64], lambda: f64, distortion: f64) -> f64 {
    let expected_log_mu: f64 = (0..p.len())
        .filter(|&x| p.prob(x) > 0.0)
        .map(|x| p.prob(x) * mu[x].ln())
        .sum();
    entropy_nats(p.probs()) + expected_log_mu - lambda * distortion
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    /// `R(D)` in nats.
    pub rate: f64,
    pub lambda: f64,
    pub mu: Vec<f64>,
    /// Grid verdicts that produced the bracket.
    pub samples: Vec<TiltSolution>,
}

/// `R(D) = max_{λ feasible} H(X) + E[ln μ(X,λ)] - λ D`.
///
/// The grid locates the best feasible slope; golden-section search then
/// refines inside the neighbouring feasible bracket to `1e-8` relative width.
/// Bracket edges next to infeasible grid points are moved to the feasibility
/// boundary by bisection.
pub fn dual_rdf(p: &Pmf, d: &DistortionMatrix, distortion: f64, grid: Option<&[f64]>) -> Result<DualSolution> {
    d.check_source(p)?;
    let (d_min, d_max) = d.feasible_range(p)?;
    let edge = 1e-12 * (1.0 + distortion.abs());
    if !(distortion >= d_min - edge && distortion <= d_max + edge) {
        return Err(Error::OutOfRange {
            value: distortion,
            lo: d_min,
            hi: d_max,
        });
    }
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = default_lambda_grid(d, DEFAULT_GRID_POINTS);
            &owned
        }
    };
    let samples = lambda_feasible_set(p, d, grid)?;
    let g = |t: &TiltSolution| dual_objective(p, &t.mu, t.lambda, distortion);
    let best = samples
        .iter()
        .enumerate()
        .filter(|(_, t)| t.feasible)
        .max_by(|a, b| g(a.1).total_cmp(&g(b.1)))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::Inapplicable("dual form inapplicable: no feasible slope on the lambda grid".into()))?;

    let feasible_at = |lambda: f64| -> Result<Option<TiltSolution>> {
        let t = tilt_at(p, d, lambda)?;
        Ok(t.feasible.then_some(t))
    };
    // Move from an infeasible neighbour towards `inside` until the boundary is pinned.
    let boundary = |outside: f64, inside: f64| -> Result<f64> {
        let (mut out, mut inn) = (outside, inside);
        for _ in 0..200 {
            if (out - inn).abs() <= 1e-13 * inn.abs() {
                break;
            }
            let mid = 0.5 * (out + inn);
            if feasible_at(mid)?.is_some() {
                inn = mid;
            } else {
                out = mid;
            }
        }
        Ok(inn)
    };
    let left = match best.checked_sub(1) {
        Some(k) if samples[k].feasible => grid[k],
        Some(k) => boundary(grid[k], grid[best])?,
        None => grid[best],
    };
    let right = match grid.get(best + 1) {
        Some(&lam) if samples[best + 1].feasible => lam,
        Some(&lam) => boundary(lam, grid[best])?,
        None => grid[best],
    };

    let mut best_tilt = samples[best].clone();
    let mut best_value = g(&best_tilt);
    let consider = |t: TiltSolution, best_tilt: &mut TiltSolution, best_value: &mut f64| {
        let value = dual_objective(p, &t.mu, t.lambda, distortion);
        if value > *best_value {
            *best_value = value;
            *best_tilt = t;
        }
        value
    };
    let eval = |lambda: f64, best_tilt: &mut TiltSolution, best_value: &mut f64| -> Result<f64> {
        Ok(match feasible_at(lambda)? {
            Some(t) => consider(t, best_tilt, best_value),
            None => f64::NEG_INFINITY,
        })
    };
    eval(left, &mut best_tilt, &mut best_value)?;
    eval(right, &mut best_tilt, &mut best_value)?;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (left, right);
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut best_tilt, &mut best_value)?;
    let mut fe = eval(e, &mut best_tilt, &mut best_value)?;
    while b - a > 1e-8 * b.abs().max(f64::MIN_POSITIVE) {
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut best_tilt, &mut best_value)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = eval(e, &mut best_tilt, &mut best_value)?;
        }
    }

    Ok(DualSolution {
        rate: best_value,
        lambda: best_tilt.lambda,
        mu: best_tilt.mu,
        samples,
    })
}

/// `D̃ = λ₀ D + offset` with `offset = -E_X[ln μ(X, λ₀)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub lambda0: f64,
    pub offset: f64,
}

impl AffineMap {
    /// Classical distortion to log-likelihood distortion (nats).
    pub fn forward(&self, d: f64) -> f64 {
        self.lambda0 * d + self.offset
    }

    pub fn inverse(&self, d_tilde: f64) -> f64 {
        (d_tilde - self.offset) / self.lambda0
    }
}

#[derive(Clone, Debug)]
pub struct Translation {
    /// `P_{X|U}(x|y) = μ(x, λ₀) e^{-λ₀ d(x,y)}`, inputs = reconstruction alphabet.
    pub channel: Channel,
    pub map: AffineMap,
    pub tilt: TiltSolution,
}

/// Recast `(p, d)` as the log-likelihood problem whose channel is the
/// backward tilt at `λ₀`.
pub fn translate_to_loglik(p: &Pmf, d: &DistortionMatrix, lambda0: f64) -> Result<Translation> {
    let tilt = tilt_at(p, d, lambda0)?;
    if !tilt.feasible {
        return Err(Error::Inapplicable(format!(
            "slope {lambda0} is not feasible: {}",
            tilt.diagnostic.clone().unwrap_or_default()
        )));
    }
    let v = tilt_matrix(d, lambda0);
    let weights = DMatrix::from_fn(d.n_source(), d.n_recon(), |x, y| tilt.mu[x] * v[(x, y)]);
    let channel = Channel::from_weights(d.recon().to_vec(), d.source().to_vec(), weights)?;
    let offset = -(0..p.len())
        .filter(|&x| p.prob(x) > 0.0)
        .map(|x| p.prob(x) * tilt.mu[x].ln())
        .sum::<f64>();
    Ok(Translation {
        channel,
        map: AffineMap { lambda0, offset },
        tilt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// `Ber(p)` source, Hamming distortion, `p ∈ (0, 1/2]`.
    BinaryHamming { p: f64 },
    /// `N(0, σ²)` source, squared error.
    GaussianMse { variance: f64 },
}

/// Closed-form rate-distortion functions, optionally translated to the
/// log-likelihood problem at slope `λ₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedForm {
    pub family: Family,
    pub lambda0: Option<f64>,
}

fn hb(x: f64) -> f64 {
    entropy_nats(&[x, 1.0 - x])
}

impl ClosedForm {
    pub fn classical(family: Family) -> Self {
        Self { family, lambda0: None }
    }

    pub fn translated(family: Family, lambda0: f64) -> Self {
        Self {
            family,
            lambda0: Some(lambda0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.family {
            Family::BinaryHamming { p } if !(p > 0.0 && p <= 0.5) => {
                return Err(Error::validation("p", format!("{p} not in (0, 1/2]")));
            }
            Family::GaussianMse { variance } if !(variance > 0.0 && variance.is_finite()) => {
                return Err(Error::validation("variance", format!("{variance} must be positive")));
            }
            _ => {}
        }
        if let Some(l0) = self.lambda0 {
            let (lo, closed) = self.feasible_slopes();
            if !(l0.is_finite() && (l0 > lo || closed && l0 == lo)) {
                return Err(Error::validation(
                    "lambda0",
                    format!("{l0} outside the feasible slopes starting at {lo}"),
                ));
            }
        }
        Ok(())
    }

    /// Lower end of the feasible slope set and whether it is attained:
    /// `[ln((1-p)/p), ∞)` for Hamming, `(1/(2σ²), ∞)` for Gaussian.
    pub fn feasible_slopes(&self) -> (f64, bool) {
        match self.family {
            Family::BinaryHamming { p } => (((1.0 - p) / p).ln(), true),
            Family::GaussianMse { variance } => (1.0 / (2.0 * variance), false),
        }
    }

    /// Offset of the translated distortion, `D̃ = λ₀ D + offset`.
    fn offset(&self, lambda0: f64) -> f64 {
        match self.family {
            Family::BinaryHamming { .. } => (1.0 + (-lambda0).exp()).ln(),
            Family::GaussianMse { .. } => (std::f64::consts::PI / lambda0).sqrt().ln(),
        }
    }

    /// Distortion interval on which the formula is defined (nats for the
    /// translated forms). The Gaussian lower end is excluded.
    pub fn range(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let (lo, hi) = match self.family {
            Family::BinaryHamming { p } => (0.0, p),
            Family::GaussianMse { variance } => (0.0, variance),
        };
        Ok(match self.lambda0 {
            None => (lo, hi),
            Some(l0) => (l0 * lo + self.offset(l0), l0 * hi + self.offset(l0)),
        })
    }

    /// Rate at `distortion`, in `base`.
    pub fn eval(&self, distortion: f64, base: LogBase) -> Result<f64> {
        let (lo, hi) = self.range()?;
        let open_low = matches!(self.family, Family::GaussianMse { .. });
        let below = if open_low { distortion <= lo } else { distortion < lo };
        if below || distortion > hi || distortion.is_nan() {
            return Err(Error::OutOfRange {
                value: distortion,
                lo,
                hi,
            });
        }
        let nats = match (self.family, self.lambda0) {
            (Family::BinaryHamming { p }, None) => hb(p) - hb(distortion),
            (Family::BinaryHamming { p }, Some(l0)) => hb(p) - hb(((distortion - self.offset(l0)) / l0).clamp(0.0, p)),
            (Family::GaussianMse { variance }, None) => 0.5 * (variance / distortion).ln(),
            (Family::GaussianMse { variance }, Some(l0)) => {
                let shift = (l0 / std::f64::consts::PI).sqrt().ln();
                0.5 * (variance * l0 / (distortion + shift)).ln()
            }
        };
        Ok(base.from_nats(nats.max(0.0)))
    }
}

/// Rate of a closed form at `distortion`.
pub fn closed_form_eval(cf: &ClosedForm, distortion: f64, base: LogBase) -> Result<f64> {
    cf.eval(distortion, base)
}

/// Distortion interval of a closed form.
pub fn closed_form_range(cf: &ClosedForm) -> Result<(f64, f64)> {
    cf.range()
}
