//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use common::{hb, perception_scan};
use llrd::ba::{rd_at_distortion, BaConfig};
use llrd::cli::{cmd_analyze, cmd_curve, run, ProblemSpec};
use llrd::dual::{
    default_lambda_grid, dual_rdf, lambda_feasible_set, translate_to_loglik, ClosedForm, Family, DEFAULT_GRID_POINTS,
};
use llrd::loglik::{loglik_distortion, DistortionMatrix};
use llrd::prob::{default_labels, Channel, LogBase, Pmf};
use llrd::rdp::{
    construct_latent, hamming_cp_factor, scale_factorization_to_coupling, solve_perfect_perception, verify_scheme,
    PerceptionConfig,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BITS: LogBase = LogBase::Bits;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn near(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    check((got - want).abs() <= tol, || {
        format!("{name} = {got} not within {tol} of {want}")
    })
}

fn h2(p: f64) -> f64 {
    hb(p) / std::f64::consts::LN_2
}

fn fig2_reproduction() -> Outcome {
    let problem = ProblemSpec::fig2().validate().map_err(|e| e.to_string())?;
    let v = cmd_analyze(&problem, BITS).map_err(|e| e.to_string())?;
    let r = &v["results"];
    let f = |k: &str| r[k].as_f64().unwrap_or(f64::NAN);
    near("d_min", f("d_min"), 0.152, 1e-3)?;
    near("d_max", f("d_max"), 0.945, 1e-3)?;
    near("h_x", f("h_x"), 0.8113, 5e-4)?;
    near("d_star", f("d_star"), 0.469, 1e-3)?;
    let c = &r["consistency"];
    check(c["unique_prior"] == true, || "consistent prior not unique".into())?;
    let prior = c["witness_prior"]["probs"][1].as_f64().unwrap_or(f64::NAN);
    near("prior", prior, 0.1875, 1e-6)?;
    Ok(format!(
        "d_min {:.5} d_max {:.5} H {:.5} D* {:.5} prior Ber({prior:.7})",
        f("d_min"),
        f("d_max"),
        f("h_x"),
        f("d_star")
    ))
}

fn fig2_tangency() -> Outcome {
    let p = Pmf::bernoulli(0.25).unwrap();
    let d = loglik_distortion(&Channel::bsc(0.1).unwrap()).unwrap();
    let target = BITS.to_nats(0.469);
    let pt = rd_at_distortion(&p, &d, target, &BaConfig::default()).map_err(|e| e.to_string())?;
    let h = h2(0.25);
    let gap = BITS.from_nats(pt.rate) - (h - 0.469);
    check(gap.abs() <= 5e-3, || format!("R(0.469) - (H - D) = {gap}"))?;

    let problem = ProblemSpec::fig2().validate().unwrap();
    let (csv, _) = cmd_curve(&problem, BITS, 50).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').take(2).map(|s| s.parse().unwrap()).collect();
        worst = worst.min(cols[1] - (h - cols[0]));
        rows += 1;
    }
    check(rows == 50, || format!("{rows} curve rows"))?;
    check(worst >= -1e-6, || format!("R_ll - (H - D) reaches {worst}"))?;
    Ok(format!(
        "tangency gap {gap:.2e} bits, min over curve of R_ll - (H - D) = {worst:.2e}"
    ))
}

/// Endpoints of `H(X|U)` over priors with `P q = p`, from the vertices of
/// the one-dimensional consistency segment.
fn segment_oracle(p: [f64; 2], cols: [[f64; 2]; 3]) -> (f64, f64) {
    let hcol = |c: [f64; 2]| h2(c[0]);
    let mut values = Vec::new();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        // q_i c_i + q_j c_j = p with q_i + q_j = 1, first coordinate.
        let t = (p[0] - cols[j][0]) / (cols[i][0] - cols[j][0]);
        if (-1e-15..=1.0 + 1e-15).contains(&t) {
            values.push(t * hcol(cols[i]) + (1.0 - t) * hcol(cols[j]));
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn fig3_reproduction() -> Outcome {
    let problem = ProblemSpec::fig3().validate().unwrap();
    let v = cmd_analyze(&problem, BITS).map_err(|e| e.to_string())?;
    let r = &v["results"];
    let d_min = r["d_min"].as_f64().unwrap_or(f64::NAN);
    let d_max = r["d_max"].as_f64().unwrap_or(f64::NAN);
    near("d_min", d_min, 0.322, 1e-3)?;
    near("d_max", d_max, 1.022, 1e-3)?;
    let iv = &r["consistency"]["d_star_interval"];
    let (lo, hi) = (
        iv["min"].as_f64().unwrap_or(f64::NAN),
        iv["max"].as_f64().unwrap_or(f64::NAN),
    );
    let (o_lo, o_hi) = segment_oracle([0.65, 0.35], [[0.8, 0.2], [0.4, 0.6], [0.2, 0.8]]);
    near("interval min vs oracle", lo, o_lo, 1e-6)?;
    near("interval max vs oracle", hi, o_hi, 1e-6)?;
    near("interval min vs reference", lo, 0.718, 0.01)?;
    near("interval max vs reference", hi, 0.816, 0.01)?;

    let p = problem.source.clone();
    let d = loglik_distortion(problem.channel.as_ref().unwrap()).unwrap();
    let h = h2(0.35);
    let mut worst: f64 = 0.0;
    for k in 0..=20 {
        let target = lo + (hi - lo) * k as f64 / 20.0;
        let pt = rd_at_distortion(&p, &d, BITS.to_nats(target), &BaConfig::default()).map_err(|e| e.to_string())?;
        worst = worst.max((BITS.from_nats(pt.rate) - (h - BITS.from_nats(pt.distortion))).abs());
    }
    check(worst <= 5e-3, || format!("flat-contact deviation {worst}"))?;
    Ok(format!(
        "d_min {d_min:.5} d_max {d_max:.5} interval [{lo:.6}, {hi:.6}] (oracle [{o_lo:.6}, {o_hi:.6}]), flat deviation {worst:.1e} bits"
    ))
}

fn hamming_closed_form() -> Outcome {
    let p = Pmf::bernoulli(0.25).unwrap();
    let d = DistortionMatrix::hamming(2).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let dist = 0.01 + 0.23 * k as f64 / 19.0;
        let pt = rd_at_distortion(&p, &d, dist, &BaConfig::default()).map_err(|e| e.to_string())?;
        worst = worst.max((BITS.from_nats(pt.rate) - (h2(0.25) - h2(dist))).abs());
    }
    check(worst <= 1e-3, || format!("max deviation {worst} bits"))?;
    Ok(format!("max |BA - (H(p) - H(D))| = {worst:.1e} bits over 20 points"))
}

fn dual_agreement() -> Outcome {
    let p = Pmf::bernoulli(0.25).unwrap();
    let d = DistortionMatrix::hamming(2).unwrap();
    let (mut rate_err, mut slope_err): (f64, f64) = (0.0, 0.0);
    for dist in [0.01, 0.05, 0.1, 0.15, 0.2, 0.24] {
        let sol = dual_rdf(&p, &d, dist, None).map_err(|e| e.to_string())?;
        rate_err = rate_err.max((sol.rate - (hb(0.25) - hb(dist))).abs());
        slope_err = slope_err.max((sol.lambda - ((1.0 - dist) / dist).ln()).abs());
    }
    check(rate_err <= 1e-6, || format!("rate error {rate_err} nats"))?;
    check(slope_err <= 1e-6, || format!("slope error {slope_err}"))?;

    let grid = default_lambda_grid(&d, DEFAULT_GRID_POINTS);
    let verdicts = lambda_feasible_set(&p, &d, &grid).map_err(|e| e.to_string())?;
    let boundary = 3f64.ln();
    let k = verdicts.iter().position(|t| t.feasible).ok_or("no feasible slope")?;
    check(k > 0 && grid[k - 1] < boundary && boundary <= grid[k], || {
        format!("first feasible grid slope {} does not bracket ln 3", grid[k])
    })?;
    check(verdicts[k..].iter().all(|t| t.feasible), || {
        "feasible set not an up-set".into()
    })?;
    Ok(format!(
        "rate err {rate_err:.1e} nats, slope err {slope_err:.1e}, boundary in ({:.4}, {:.4}]",
        grid[k - 1],
        grid[k]
    ))
}

fn translation_equivalence() -> Outcome {
    let p = Pmf::bernoulli(0.25).unwrap();
    let d = DistortionMatrix::hamming(2).unwrap();
    let tr = translate_to_loglik(&p, &d, 9f64.ln()).map_err(|e| e.to_string())?;
    let bsc = [[0.9, 0.1], [0.1, 0.9]];
    let mut ch_err: f64 = 0.0;
    for (x, row) in bsc.iter().enumerate() {
        for (u, v) in row.iter().enumerate() {
            ch_err = ch_err.max((tr.channel.prob(x, u) - v).abs());
        }
    }
    check(ch_err <= 1e-12, || format!("channel differs from BSC(0.1) by {ch_err}"))?;

    let dll = loglik_distortion(&tr.channel).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let dist = 0.02 + 0.2 * k as f64 / 9.0;
        let r = rd_at_distortion(&p, &d, dist, &BaConfig::default()).map_err(|e| e.to_string())?;
        let rll = rd_at_distortion(&p, &dll, tr.map.forward(dist), &BaConfig::default()).map_err(|e| e.to_string())?;
        worst = worst.max((r.rate - rll.rate).abs());
    }
    check(worst <= 1e-3, || format!("curve mismatch {worst} nats"))?;
    Ok(format!("channel err {ch_err:.1e}, max curve mismatch {worst:.1e} nats"))
}

fn gaussian_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pi = std::f64::consts::PI;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let var: f64 = rng.random_range(0.05..20.0);
        let dist = var * rng.random_range(0.01..0.99);
        let l0 = rng.random_range(1.01..30.0) / (2.0 * var);
        // Stationary point of h(X) + ln sqrt(λ/π) - λD is λ = 1/(2D).
        let lam = 1.0 / (2.0 * dist);
        let oracle = 0.5 * (2.0 * pi * std::f64::consts::E * var).ln() + (lam / pi).sqrt().ln() - lam * dist;
        let classical = ClosedForm::classical(Family::GaussianMse { variance: var })
            .eval(dist, LogBase::Nats)
            .map_err(|e| e.to_string())?;
        let d_tilde = l0 * dist + (pi / l0).sqrt().ln();
        let translated = ClosedForm::translated(Family::GaussianMse { variance: var }, l0)
            .eval(d_tilde, LogBase::Nats)
            .map_err(|e| e.to_string())?;
        worst = worst.max((classical - oracle).abs()).max((translated - oracle).abs());
    }
    check(worst <= 1e-10, || format!("max deviation {worst}"))?;
    Ok(format!("50 draws, max deviation {worst:.1e} nats"))
}

fn decomposition_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let nx = rng.random_range(2..=8);
        let nu = rng.random_range(2..=8);
        let mut weights = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(0.01..1.0));
        let p_w = weights(nx, 1);
        let p = Pmf::from_weights(default_labels(nx), p_w.iter().copied().collect()).unwrap();
        let ch = Channel::from_weights(default_labels(nu), default_labels(nx), weights(nx, nu)).unwrap();
        let w = Channel::from_weights(default_labels(nx), default_labels(nu), weights(nu, nx)).unwrap();

        let mut lhs = 0.0;
        let mut joint = DMatrix::zeros(nx, nu);
        for x in 0..nx {
            for y in 0..nu {
                let m = p.prob(x) * w.prob(y, x);
                joint[(x, y)] = m;
                lhs -= m * ch.prob(x, y).ln();
            }
        }
        let mut rhs = 0.0;
        for y in 0..nu {
            let qy: f64 = joint.column(y).sum();
            for x in 0..nx {
                let post = joint[(x, y)] / qy;
                // -post ln post + post ln(post / P(x|y)).
                rhs += qy * (-post * post.ln() + post * (post / ch.prob(x, y)).ln());
            }
        }
        worst = worst.max((lhs - rhs).abs());
        let lib = llrd::loglik::decomposition_check(&p, &ch, &w).map_err(|e| e.to_string())?;
        worst = worst.max((lib.lhs - lhs).abs()).max((lib.rhs - rhs).abs());
    }
    check(worst <= 1e-9, || format!("max gap {worst}"))?;
    Ok(format!("100 instances, max gap {worst:.1e} nats"))
}

fn rdp_pipeline() -> Outcome {
    let d = DistortionMatrix::hamming(2).unwrap();
    let dist = 0.1;
    let mut notes = Vec::new();
    for p in [0.5, 0.35] {
        let src = Pmf::bernoulli(p).unwrap();
        let sol = solve_perfect_perception(&src, &d, dist, &PerceptionConfig::default()).map_err(|e| e.to_string())?;
        let m = sol.coupling.matrix();
        let expected_off = dist / 2.0;
        let expect = DMatrix::from_row_slice(
            2,
            2,
            &[1.0 - p - expected_off, expected_off, expected_off, p - expected_off],
        );
        let c_err = (m - expect).amax();
        check(c_err <= 1e-6, || format!("p = {p}: coupling error {c_err}"))?;

        let base = hamming_cp_factor(2, sol.lambda).map_err(|e| e.to_string())?;
        let fac = scale_factorization_to_coupling(&sol.coupling, &base, &sol.potential).map_err(|e| e.to_string())?;
        check(fac.residual <= 1e-6, || {
            format!("p = {p}: CP residual {}", fac.residual)
        })?;
        let scheme = construct_latent(&fac, src.alphabet()).map_err(|e| e.to_string())?;
        let mix = (scheme.mixture() - m).amax();
        check(mix <= 1e-6, || format!("p = {p}: mixture residual {mix}"))?;
        let report = verify_scheme(&scheme, &src, &d, dist, sol.rate).map_err(|e| e.to_string())?;
        report.ensure().map_err(|e| format!("p = {p}: {e}"))?;
        check(report.checks.len() == 4, || "expected four checks".into())?;

        let scan = perception_scan(p, dist);
        near(&format!("p = {p}: rate vs scan"), sol.rate, scan, 1e-4)?;
        if p == 0.5 {
            near("p = 0.5: rate bits", BITS.from_nats(sol.rate), 1.0 - h2(0.1), 1e-4)?;
        }
        notes.push(format!(
            "p={p}: R={:.6} bits, coupling err {c_err:.1e}",
            BITS.from_nats(sol.rate)
        ));
    }
    Ok(notes.join("; "))
}

fn hamming_cp() -> Outcome {
    let mut worst: f64 = 0.0;
    for q in 2..=16 {
        for lambda in [0.1, 1.0, 10.0] {
            let fac = hamming_cp_factor(q, lambda).map_err(|e| e.to_string())?;
            let a = (-lambda).exp();
            let target = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { a });
            worst = worst.max((&fac.b * fac.b.transpose() - target).amax());
            check(fac.b.iter().all(|&v| v >= 0.0), || "negative factor entry".into())?;
        }
    }
    check(worst <= 1e-12, || format!("max error {worst}"))?;
    Ok(format!("q = 2..16, λ in {{0.1, 1, 10}}: max error {worst:.1e}"))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    for dir in [&a, &b] {
        let code = run(["llrd", "reproduce", "--out", dir.path().to_str().unwrap()]);
        check(code == 0, || format!("reproduce exited {code}"))?;
    }
    let mut names = Vec::new();
    for name in ["fig2.csv", "fig3.csv", "fig2.markers.json", "fig3.markers.json"] {
        let x = fs::read(a.path().join(name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.path().join(name)).map_err(|e| e.to_string())?;
        check(x == y, || format!("{name} differs between runs"))?;
        names.push(name);
    }
    let markers: Value = serde_json::from_slice(&fs::read(a.path().join("fig3.markers.json")).unwrap()).unwrap();
    check(markers["d_min"].is_number(), || "fig3 markers missing d_min".into())?;
    Ok(format!("{} identical", names.join(", ")))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("fig2 reproduction", Some(Duration::from_secs(1)), fig2_reproduction),
        ("fig2 tangency", Some(Duration::from_secs(10)), fig2_tangency),
        ("fig3 reproduction", Some(Duration::from_secs(30)), fig3_reproduction),
        (
            "hamming closed form vs BA",
            Some(Duration::from_secs(10)),
            hamming_closed_form,
        ),
        ("dual form agreement", Some(Duration::from_secs(5)), dual_agreement),
        (
            "translation equivalence",
            Some(Duration::from_secs(10)),
            translation_equivalence,
        ),
        ("gaussian closed forms", None, gaussian_closed_forms),
        ("decomposition identity", None, decomposition_identity),
        ("perception pipeline", Some(Duration::from_secs(10)), rdp_pipeline),
        ("hamming CP construction", None, hamming_cp),
        ("reproduce determinism", None, determinism),
    ];
    let mut failed = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} {elapsed:>9.2?}  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<28} {elapsed:>9.2?}  {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
