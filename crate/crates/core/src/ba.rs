//! Blahut–Arimoto iteration for `R(D)` over finite alphabets.
//!
//! At slope `λ` the test channel is the exponential tilt
//! `W(y|x) ∝ Q(y) exp(-λ d(x,y))` and `Q` is replaced by the induced output
//! marginal. Iteration stops on the classical two-sided bound
//! `max_y ln c(y) - Σ_y Q(y) c(y) ln c(y) < tol`, which certifies the
//! Lagrangian `R + λD` to within `tol` nats.
//!
//! Infinite distortions get zero tilt weight. Rows are shifted by their
//! minimum before exponentiating, which leaves `W` unchanged and keeps large
//! slopes from underflowing.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::loglik::{min_set_rate, DistortionMatrix, DminConfig};
use crate::prob::{mutual_information_nats, Channel, Pmf};

#[derive(Clone, Debug, PartialEq)]
pub struct BaConfig {
    /// Lagrange multiplier on distortion, `>= 0`.
    pub slope: f64,
    /// Convergence threshold on the capacity-style gap bound, nats.
    pub tol: f64,
    pub max_iters: usize,
    /// Starting output marginal; uniform when absent.
    pub init_q: Option<Vec<f64>>,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            slope: 1.0,
            tol: 1e-10,
            max_iters: 100_000,
            init_q: None,
        }
    }
}

impl BaConfig {
    pub fn with_slope(slope: f64) -> Self {
        Self {
            slope,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.slope >= 0.0) || !self.slope.is_finite() {
            return Err(Error::validation(
                "slope",
                format!("{} is not a finite nonnegative number", self.slope),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::validation("tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// One point on a rate-distortion curve with its achieving test channel.
#[derive(Clone, Debug)]
pub struct RdPoint {
    pub distortion: f64,
    /// `I(X;Y)` in nats.
    pub rate: f64,
    /// Slope `λ`; `+inf` for the minimum-distortion point.
    pub slope: f64,
    /// `W_{Y|X}`.
    pub channel: Channel,
    /// Output marginal of `(p, W)`.
    pub output: Pmf,
    pub iterations: usize,
    pub converged: bool,
}

impl RdPoint {
    fn from_channel(
        p: &Pmf,
        d: &DistortionMatrix,
        channel: Channel,
        slope: f64,
        iterations: usize,
        converged: bool,
    ) -> Result<Self> {
        let output = channel.push_forward(p)?;
        let joint = DMatrix::from_fn(channel.n_outputs(), channel.n_inputs(), |y, x| {
            channel.prob(y, x) * p.prob(x)
        });
        Ok(Self {
            distortion: d.expected(p, &channel),
            rate: mutual_information_nats(&joint),
            slope,
            channel,
            output,
            iterations,
            converged,
        })
    }
}

/// Exponential tilt matrix, `x` rows, shifted so each row maximum is 1.
fn tilt(d: &DistortionMatrix, slope: f64) -> DMatrix<f64> {
    let mins: Vec<f64> = (0..d.n_source()).map(|x| d.entries().row(x).min()).collect();
    DMatrix::from_fn(d.n_source(), d.n_recon(), |x, y| {
        let v = d.get(x, y);
        if v.is_finite() {
            (-slope * (v - mins[x])).exp()
        } else {
            0.0
        }
    })
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn initial_q(cfg: &BaConfig, n: usize) -> Result<Vec<f64>> {
    match &cfg.init_q {
        None => Ok(uniform(n)),
        Some(q) => {
            if q.len() != n || q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::validation(
                    "init_q",
                    "not a nonnegative vector over the reconstruction alphabet",
                ));
            }
            let total: f64 = q.iter().sum();
            if total <= 0.0 {
                return Err(Error::validation("init_q", "zero total mass"));
            }
            Ok(q.iter().map(|v| v / total).collect())
        }
    }
}

/// Slope-zero point: `Y` independent of `X`, concentrated on the first
/// reconstruction minimizing `E_X[d(X, y)]`, so `D = D_max` and `R = 0`.
fn zero_slope_point(p: &Pmf, d: &DistortionMatrix) -> Result<RdPoint> {
    let best = (0..d.n_recon())
        .map(|y| (y, d.expected_at(p, y)))
        .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
        .0;
    let w = DMatrix::from_fn(d.n_recon(), d.n_source(), |y, _| if y == best { 1.0 } else { 0.0 });
    let channel = Channel::new(d.source().to_vec(), d.recon().to_vec(), w)?;
    RdPoint::from_channel(p, d, channel, 0.0, 0, true)
}

/// Blahut–Arimoto at a fixed slope.
pub fn ba_fixed_slope(p: &Pmf, d: &DistortionMatrix, cfg: &BaConfig) -> Result<RdPoint> {
    ba_run(p, d, cfg).map(|(pt, _)| pt)
}

/// BA plus a certified intercept `F` with `R(D') >= F - slope·D'` for all `D'`.
fn ba_run(p: &Pmf, d: &DistortionMatrix, cfg: &BaConfig) -> Result<(RdPoint, f64)> {
    cfg.validate()?;
    d.check_source(p)?;
    if cfg.slope == 0.0 {
        return Ok((zero_slope_point(p, d)?, 0.0));
    }
    let (nx, ny) = (d.n_source(), d.n_recon());
    let a = tilt(d, cfg.slope);
    let support: Vec<usize> = (0..nx).filter(|&x| p.prob(x) > 0.0).collect();
    let mut q = initial_q(cfg, ny)?;
    let mut reinitialized = false;
    let mut c = vec![0.0; nx];
    let mut cy = vec![0.0; ny];
    let mut previous_lagrangian = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut intercept = f64::NEG_INFINITY;

    while iterations < cfg.max_iters {
        for &x in &support {
            c[x] = (0..ny).map(|y| q[y] * a[(x, y)]).sum();
        }
        if support.iter().any(|&x| c[x] <= 0.0) {
            if reinitialized {
                return Err(Error::Numerical(
                    "a source row has no reachable reconstruction under the current output marginal".into(),
                ));
            }
            reinitialized = true;
            q = uniform(ny);
            continue;
        }

        // Shifted Lagrangian min_W [I + λ E d] at this Q; non-increasing.
        let lagrangian: f64 = -support.iter().map(|&x| p.prob(x) * c[x].ln()).sum::<f64>();
        debug_assert!(
            lagrangian <= previous_lagrangian + 1e-9 * (1.0 + lagrangian.abs()),
            "BA Lagrangian increased: {previous_lagrangian} -> {lagrangian}"
        );
        previous_lagrangian = lagrangian;

        for (y, slot) in cy.iter_mut().enumerate() {
            *slot = support.iter().map(|&x| p.prob(x) * a[(x, y)] / c[x]).sum();
        }
        let max_log = cy
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|v| v.ln())
            .fold(f64::NEG_INFINITY, f64::max);
        let mean_log: f64 = (0..ny)
            .filter(|&y| q[y] > 0.0 && cy[y] > 0.0)
            .map(|y| q[y] * cy[y] * cy[y].ln())
            .sum();
        let gap = max_log - mean_log;
        // Blahut's lower bound on the shifted Lagrangian at this Q.
        intercept = intercept.max(lagrangian - max_log);

        let mut next: Vec<f64> = (0..ny).map(|y| q[y] * cy[y]).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        q = next;
        iterations += 1;
        if gap < cfg.tol {
            converged = true;
            break;
        }
        if iterations % POLISH_EVERY == 0 {
            if let Some((polished, at)) = newton_polish(p, &support, &a, &q, cfg.tol) {
                if at.value <= lagrangian {
                    q = polished;
                    intercept = intercept.max(at.value - at.max_log);
                    if at.gap < cfg.tol {
                        converged = true;
                        break;
                    }
                }
            }
        }
    }

    let w = DMatrix::from_fn(ny, nx, |y, x| q[y] * a[(x, y)]);
    let w = fill_empty_columns(w, d);
    let channel = Channel::from_weights(d.source().to_vec(), d.recon().to_vec(), w)?;
    let shift: f64 = support.iter().map(|&x| p.prob(x) * d.entries().row(x).min()).sum();
    let pt = RdPoint::from_channel(p, d, channel, cfg.slope, iterations, converged)?;
    Ok((pt, intercept + cfg.slope * shift))
}

/// BA iterations between attempts to finish with Newton steps.
const POLISH_EVERY: usize = 500;

/// Shifted Lagrangian `G(Q) = -Σ_x p(x) ln (A Q)(x)` with its gradient
/// ingredients `c(y) = Σ_x p(x) A(x,y) / (A Q)(x)`.
struct Objective {
    value: f64,
    c: Vec<f64>,
    cy: Vec<f64>,
    max_log: f64,
    gap: f64,
}

fn objective(p: &Pmf, support: &[usize], a: &DMatrix<f64>, q: &[f64]) -> Option<Objective> {
    let ny = q.len();
    let mut c = vec![0.0; a.nrows()];
    for &x in support {
        c[x] = (0..ny).map(|y| q[y] * a[(x, y)]).sum();
        if !(c[x] > 0.0) {
            return None;
        }
    }
    let value = -support.iter().map(|&x| p.prob(x) * c[x].ln()).sum::<f64>();
    let cy: Vec<f64> = (0..ny)
        .map(|y| support.iter().map(|&x| p.prob(x) * a[(x, y)] / c[x]).sum())
        .collect();
    let max_log = cy
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mean_log: f64 = (0..ny)
        .filter(|&y| q[y] > 0.0 && cy[y] > 0.0)
        .map(|y| q[y] * cy[y] * cy[y].ln())
        .sum();
    Some(Objective {
        value,
        c,
        cy,
        max_log,
        gap: max_log - mean_log,
    })
}

/// Active-set Newton descent on `G` over the simplex. BA crawls when the
/// slope is close to that of a linear piece of `R(D)`, because `G` is then
/// nearly flat along a face; Newton steps cross such a face in a few moves.
fn newton_polish(p: &Pmf, support: &[usize], a: &DMatrix<f64>, q0: &[f64], tol: f64) -> Option<(Vec<f64>, Objective)> {
    let ny = q0.len();
    let mut q = q0.to_vec();
    let mut cur = objective(p, support, a, &q)?;
    for _ in 0..100 {
        if cur.gap < tol {
            break;
        }
        let mut active: Vec<usize> = (0..ny).filter(|&y| q[y] > 0.0 || cur.cy[y] > 1.0).collect();
        let step = loop {
            let k = active.len();
            let mut kkt = DMatrix::zeros(k + 1, k + 1);
            let mut rhs = nalgebra::DVector::zeros(k + 1);
            for (i, &y) in active.iter().enumerate() {
                for (j, &z) in active.iter().enumerate() {
                    kkt[(i, j)] = support
                        .iter()
                        .map(|&x| p.prob(x) * a[(x, y)] * a[(x, z)] / (cur.c[x] * cur.c[x]))
                        .sum();
                }
                kkt[(i, k)] = 1.0;
                kkt[(k, i)] = 1.0;
                rhs[i] = cur.cy[y];
            }
            let sol = kkt.svd(true, true).solve(&rhs, 1e-14).ok()?;
            // A variable at zero may not be pushed negative; release it and re-solve.
            match (0..k).find(|&i| q[active[i]] == 0.0 && sol[i] < 0.0) {
                Some(i) if k > 1 => {
                    active.remove(i);
                }
                _ => {
                    let mut dir = vec![0.0; ny];
                    for (i, &y) in active.iter().enumerate() {
                        dir[y] = sol[i];
                    }
                    break dir;
                }
            }
        };
        let slope: f64 = -(0..ny).map(|y| cur.cy[y] * step[y]).sum::<f64>();
        if !(slope < 0.0) {
            break;
        }
        let (mut t, blocking) = (0..ny)
            .filter(|&y| step[y] < 0.0 && q[y] > 0.0)
            .map(|y| (q[y] / -step[y], Some(y)))
            .fold((1.0, None), |acc, cur| if cur.0 < acc.0 { cur } else { acc });
        let t_max = t;
        let mut accepted = None;
        while t > 1e-16 {
            let mut trial: Vec<f64> = (0..ny).map(|y| (q[y] + t * step[y]).max(0.0)).collect();
            if t == t_max {
                if let Some(y) = blocking {
                    trial[y] = 0.0;
                }
            }
            let total: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|v| *v /= total);
            if let Some(next) = objective(p, support, a, &trial) {
                if next.value <= cur.value + 1e-4 * t * slope {
                    accepted = Some((trial, next));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                q = trial;
                cur = next;
            }
            None => break,
        }
    }
    Some((q, cur))
}

/// Columns of `W` with no mass (possible only for zero-probability source
/// symbols) fall back to the row's minimum-distortion reconstructions.
fn fill_empty_columns(mut w: DMatrix<f64>, d: &DistortionMatrix) -> DMatrix<f64> {
    let sets = d.argmin_sets(0.0);
    for x in 0..w.ncols() {
        if !(w.column(x).sum() > 0.0) {
            for &y in &sets[x] {
                w[(y, x)] = 1.0;
            }
        }
    }
    w
}

/// Grid driving a curve sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum CurveGrid {
    Slopes(Vec<f64>),
    Distortions(Vec<f64>),
}

/// Sampled `(D, R)` curve sorted by distortion. Rates in nats.
#[derive(Clone, Debug)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
    pub d_min: f64,
    pub d_max: f64,
}

/// Slack used when validating curve shape.
pub const CURVE_SLACK: f64 = 1e-6;

impl RdCurve {
    /// Strictly increasing `D`, non-increasing `R`, and convexity of the
    /// piecewise-linear interpolation, checked on converged points.
    pub fn check_shape(&self, slack: f64) -> Result<()> {
        let pts: Vec<&RdPoint> = self.points.iter().filter(|pt| pt.converged).collect();
        for w in pts.windows(2) {
            if !(w[1].distortion > w[0].distortion) {
                return Err(Error::Numerical(format!(
                    "curve distortion not increasing at D = {}",
                    w[1].distortion
                )));
            }
            if w[1].rate > w[0].rate + slack {
                return Err(Error::Numerical(format!(
                    "curve rate increases at D = {}",
                    w[1].distortion
                )));
            }
        }
        for w in pts.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            if !c.distortion.is_finite() {
                continue;
            }
            let t = (b.distortion - a.distortion) / (c.distortion - a.distortion);
            let chord = a.rate + t * (c.rate - a.rate);
            if b.rate > chord + slack {
                return Err(Error::Numerical(format!(
                    "curve not convex at D = {} (rate {} above chord {})",
                    b.distortion, b.rate, chord
                )));
            }
        }
        Ok(())
    }
}

fn warm_start(q: &Pmf) -> Vec<f64> {
    let n = q.len() as f64;
    q.probs().iter().map(|v| 0.999 * v + 0.001 / n).collect()
}

/// Sweep a grid of slopes or distortions, warm-starting each point from the
/// previous output marginal.
pub fn rd_curve(p: &Pmf, d: &DistortionMatrix, grid: &CurveGrid, cfg: &BaConfig) -> Result<RdCurve> {
    d.check_source(p)?;
    let (d_min, d_max) = d.feasible_range(p)?;
    let mut points = Vec::new();
    let mut warm: Option<Vec<f64>> = cfg.init_q.clone();
    match grid {
        CurveGrid::Slopes(slopes) => {
            if slopes.is_empty() {
                return Err(Error::validation("grid", "empty slope grid"));
            }
            for &slope in slopes {
                let point_cfg = BaConfig {
                    slope,
                    init_q: warm.clone(),
                    ..cfg.clone()
                };
                let pt = ba_fixed_slope(p, d, &point_cfg)?;
                warm = Some(warm_start(&pt.output));
                points.push(pt);
            }
        }
        CurveGrid::Distortions(targets) => {
            if targets.is_empty() {
                return Err(Error::validation("grid", "empty distortion grid"));
            }
            for &target in targets {
                let point_cfg = BaConfig {
                    init_q: warm.clone(),
                    ..cfg.clone()
                };
                let pt = rd_at_distortion(p, d, target, &point_cfg)?;
                warm = Some(warm_start(&pt.output));
                points.push(pt);
            }
        }
    }
    points.sort_by(|a, b| a.distortion.total_cmp(&b.distortion));
    points.dedup_by(|later, earlier| {
        let same = (later.distortion - earlier.distortion).abs() <= 1e-12 * (1.0 + earlier.distortion.abs());
        if same && later.rate < earlier.rate {
            std::mem::swap(later, earlier);
        }
        same
    });
    let curve = RdCurve { points, d_min, d_max };
    curve.check_shape(CURVE_SLACK)?;
    Ok(curve)
}

/// Achieved distortion tolerance for [`rd_at_distortion`].
pub const DISTORTION_TOL: f64 = 1e-6;

/// A time-shared point whose rate is within this many nats of a certified
/// lower bound counts as converged.
pub const CERTIFIED_RATE_TOL: f64 = 1e-9;

/// The point on the curve at a target distortion, by bisection on the slope.
///
/// On a linear segment of `R(D)` a whole distortion interval shares one slope;
/// when the slope bracket collapses without meeting the target, the two
/// bracketing channels are time-shared, which is exact on a linear piece.
/// Every BA run also yields a supporting line `R(D) >= F - λD`; the search
/// stops early once the time-shared rate is within [`CERTIFIED_RATE_TOL`] of
/// the best such bound.
pub fn rd_at_distortion(p: &Pmf, d: &DistortionMatrix, target: f64, cfg: &BaConfig) -> Result<RdPoint> {
    d.check_source(p)?;
    let (d_min, d_max) = d.feasible_range(p)?;
    let edge = 1e-12 * (1.0 + d_min.abs());
    if !(target >= d_min - edge) || target > d_max + 1e-12 * (1.0 + d_max.abs()) {
        return Err(Error::OutOfRange {
            value: target,
            lo: d_min,
            hi: d_max,
        });
    }
    if target >= d_max {
        return zero_slope_point(p, d);
    }
    let dmin_point = || -> Result<RdPoint> {
        let sets = d.argmin_sets(1e-9);
        let r = min_set_rate(p, &sets, d.recon(), &DminConfig::default())?;
        RdPoint::from_channel(p, d, r.channel, f64::INFINITY, r.iterations, true)
    };
    if target <= d_min + edge {
        return dmin_point();
    }

    let run = |slope: f64, warm: &Option<Vec<f64>>| {
        ba_run(
            p,
            d,
            &BaConfig {
                slope,
                init_q: warm.clone(),
                ..cfg.clone()
            },
        )
    };

    let mut lo_pt = zero_slope_point(p, d)?;
    let mut lo = 0.0;
    let scale = d.max_finite().max(f64::MIN_POSITIVE);
    let mut hi = 1.0 / scale;
    let mut warm = cfg.init_q.clone();
    // Best certified lower bound on R(target) seen so far.
    let mut lower = 0.0f64;
    let mut hi_pt = loop {
        let (pt, intercept) = run(hi, &warm)?;
        lower = lower.max(intercept - hi * target);
        warm = Some(warm_start(&pt.output));
        if (pt.distortion - target).abs() <= DISTORTION_TOL {
            return Ok(pt);
        }
        if pt.distortion < target {
            break pt;
        }
        lo = hi;
        lo_pt = pt;
        hi *= 2.0;
        if hi > 1e12 / scale {
            // Target sits below every sampled slope's distortion: share with D_min.
            let mut bottom = dmin_point()?;
            bottom.slope = hi;
            break bottom;
        }
    };

    while hi - lo > 1e-10 * hi.max(1.0) && hi_pt.slope.is_finite() {
        let shared = time_share(p, d, &lo_pt, &hi_pt, target)?;
        if shared.rate - lower <= CERTIFIED_RATE_TOL {
            return Ok(RdPoint {
                converged: true,
                ..shared
            });
        }
        let mid = 0.5 * (lo + hi);
        let (pt, intercept) = run(mid, &warm)?;
        lower = lower.max(intercept - mid * target);
        warm = Some(warm_start(&pt.output));
        if (pt.distortion - target).abs() <= DISTORTION_TOL {
            return Ok(pt);
        }
        if pt.distortion > target {
            lo = mid;
            lo_pt = pt;
        } else {
            hi = mid;
            hi_pt = pt;
        }
    }
    let shared = time_share(p, d, &lo_pt, &hi_pt, target)?;
    if shared.rate - lower > CERTIFIED_RATE_TOL && hi_pt.slope.is_finite() {
        // The chord slope of the two shared points supports the segment
        // between them; its intercept closes the gap on a linear piece.
        let chord = (hi_pt.rate - lo_pt.rate) / (lo_pt.distortion - hi_pt.distortion).max(f64::MIN_POSITIVE);
        if chord.is_finite() && chord > 0.0 {
            let (_, intercept) = run(chord, &warm)?;
            lower = lower.max(intercept - chord * target);
        }
    }
    let certified = shared.rate - lower <= CERTIFIED_RATE_TOL;
    Ok(RdPoint {
        converged: shared.converged || certified,
        ..shared
    })
}

/// Mixture of the two bracketing test channels hitting `target` exactly.
fn time_share(p: &Pmf, d: &DistortionMatrix, above: &RdPoint, below: &RdPoint, target: f64) -> Result<RdPoint> {
    let span = above.distortion - below.distortion;
    let theta = if span > 0.0 {
        ((above.distortion - target) / span).clamp(0.0, 1.0)
    } else {
        0.5
    };
    let w = above.channel.matrix() * (1.0 - theta) + below.channel.matrix() * theta;
    let channel = Channel::from_weights(d.source().to_vec(), d.recon().to_vec(), w)?;
    let slope = if below.slope.is_finite() {
        0.5 * (above.slope + below.slope)
    } else {
        above.slope
    };
    RdPoint::from_channel(
        p,
        d,
        channel,
        slope,
        above.iterations + below.iterations,
        above.converged && below.converged,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loglik::{feasible_range, loglik_distortion, rate_at_dmin};
    use crate::prob::{entropy_nats, LogBase};
    use approx::assert_abs_diff_eq;

    fn fig2() -> (Pmf, Channel, DistortionMatrix) {
        let ch = Channel::bsc(0.1).unwrap();
        let d = loglik_distortion(&ch).unwrap();
        (Pmf::bernoulli(0.25).unwrap(), ch, d)
    }

    fn hb(x: f64) -> f64 {
        entropy_nats(&[x, 1.0 - x])
    }

    #[test]
    fn zero_slope_gives_dmax() {
        let (p, ch, d) = fig2();
        let pt = ba_fixed_slope(&p, &d, &BaConfig::with_slope(0.0)).unwrap();
        assert_eq!(pt.rate, 0.0);
        let range = feasible_range(&p, &ch).unwrap();
        assert_abs_diff_eq!(pt.distortion, range.d_max, epsilon = 1e-15);
    }

    #[test]
    fn large_slope_approaches_dmin_point() {
        let (p, ch, d) = fig2();
        let pt = ba_fixed_slope(&p, &d, &BaConfig::with_slope(50.0)).unwrap();
        assert!(pt.converged);
        let range = feasible_range(&p, &ch).unwrap();
        let dmin_rate = rate_at_dmin(&p, &ch, &Default::default()).unwrap().rate;
        assert_abs_diff_eq!(pt.distortion, range.d_min, epsilon = 1e-9);
        assert_abs_diff_eq!(pt.rate, dmin_rate, epsilon = 1e-9);
        assert_abs_diff_eq!(LogBase::Bits.from_nats(pt.rate), 0.8113, epsilon = 5e-5);
    }

    #[test]
    fn hamming_closed_form_at_matching_slope() {
        let p = Pmf::bernoulli(0.25).unwrap();
        let d = DistortionMatrix::hamming(2).unwrap();
        let slope = (0.9f64 / 0.1).ln();
        let pt = ba_fixed_slope(&p, &d, &BaConfig::with_slope(slope)).unwrap();
        assert!(pt.converged);
        assert_abs_diff_eq!(pt.distortion, 0.1, epsilon = 1e-8);
        assert_abs_diff_eq!(pt.rate, hb(0.25) - hb(0.1), epsilon = 1e-8);
    }

    #[test]
    fn output_matches_pushforward() {
        let (p, _, d) = fig2();
        let pt = ba_fixed_slope(&p, &d, &BaConfig::with_slope(1.7)).unwrap();
        let marg = pt.channel.push_forward(&p).unwrap();
        assert!(marg.max_abs_diff(&pt.output) < 1e-12);
    }

    #[test]
    fn singleton_curve() {
        let (p, _, d) = fig2();
        let c = rd_curve(&p, &d, &CurveGrid::Slopes(vec![2.0]), &BaConfig::default()).unwrap();
        assert_eq!(c.points.len(), 1);
    }

    #[test]
    fn at_distortion_endpoints() {
        let (p, ch, d) = fig2();
        let range = feasible_range(&p, &ch).unwrap();
        let top = rd_at_distortion(&p, &d, range.d_max, &BaConfig::default()).unwrap();
        assert_eq!(top.rate, 0.0);
        let bottom = rd_at_distortion(&p, &d, range.d_min, &BaConfig::default()).unwrap();
        let oracle = rate_at_dmin(&p, &ch, &Default::default()).unwrap().rate;
        assert_abs_diff_eq!(bottom.rate, oracle, epsilon = 1e-3);
        assert!(rd_at_distortion(&p, &d, range.d_max + 0.1, &BaConfig::default()).is_err());
        assert!(rd_at_distortion(&p, &d, range.d_min - 0.1, &BaConfig::default()).is_err());
    }

    #[test]
    fn at_distortion_special_point() {
        let (p, _, d) = fig2();
        let d_star = hb(0.1);
        let pt = rd_at_distortion(&p, &d, d_star, &BaConfig::default()).unwrap();
        assert_abs_diff_eq!(pt.distortion, d_star, epsilon = 1e-6);
        let bits = LogBase::Bits.from_nats(pt.rate);
        assert_abs_diff_eq!(bits, 0.8113 - 0.469, epsilon = 5e-3);
    }

    #[test]
    fn rejects_bad_config() {
        let (p, _, d) = fig2();
        assert!(ba_fixed_slope(&p, &d, &BaConfig::with_slope(-1.0)).is_err());
        let cfg = BaConfig {
            max_iters: 0,
            ..BaConfig::default()
        };
        assert!(ba_fixed_slope(&p, &d, &cfg).is_err());
    }

    #[test]
    fn intercept_bounds_the_curve() {
        let (p, _, d) = fig2();
        for slope in [0.3, 1.0, 4.0] {
            let (pt, intercept) = ba_run(&p, &d, &BaConfig::with_slope(slope)).unwrap();
            let lagrangian = pt.rate + slope * pt.distortion;
            assert!(intercept <= lagrangian + 1e-12);
            assert!(
                lagrangian - intercept < 1e-9,
                "slope {slope}: {}",
                lagrangian - intercept
            );
        }
    }

    #[test]
    fn flat_segment_points_are_certified() {
        let ch = Channel::from_rows(&[vec![0.8, 0.4, 0.2], vec![0.2, 0.6, 0.8]]).unwrap();
        let d = loglik_distortion(&ch).unwrap();
        let p = Pmf::bernoulli(0.35).unwrap();
        let h = entropy_nats(p.probs());
        for target in [0.52, 0.54, 0.56] {
            let pt = rd_at_distortion(&p, &d, target, &BaConfig::default()).unwrap();
            assert!(pt.converged);
            assert_abs_diff_eq!(pt.distortion, target, epsilon = 1e-6);
            assert_abs_diff_eq!(pt.rate, h - pt.distortion, epsilon = 1e-8);
        }
    }
}
