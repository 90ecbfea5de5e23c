//! Command-line layer: problem specs, result bundles, CSV tables and file
//! output. The `llrd` binary is a thin wrapper around [`run`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ba::{rd_at_distortion, rd_curve, BaConfig, CurveGrid, RdPoint};
use crate::dual::{default_lambda_grid, dual_objective, dual_rdf, translate_to_loglik, DEFAULT_GRID_POINTS};
use crate::error::{Error, Result};
use crate::loglik::{
    consistency_polytope, loglik_distortion, logloss_rdf, ml_sets, rate_at_dmin, DistortionMatrix, DminConfig,
    ML_TIE_TOL,
};
use crate::prob::{entropy_nats, Channel, LogBase, Pmf};
use crate::rdp::{
    construct_latent, cp_exponential_matrix, cp_factor_numeric, hamming_cp_factor, scale_factorization_to_coupling,
    solve_perfect_perception, CpFactorization, NumericCpConfig, PerceptionConfig,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Matrix entry in a spec file: a number or the string `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

impl Entry {
    fn value(&self, field: &str) -> Result<f64> {
        match self {
            Entry::Number(v) => Ok(*v),
            Entry::Text(s) if matches!(s.as_str(), "inf" | "+inf" | "infinity") => Ok(f64::INFINITY),
            Entry::Text(s) => Err(Error::validation(field, format!("`{s}` is not a number or \"inf\""))),
        }
    }
}

impl From<f64> for Entry {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            Entry::Text("inf".into())
        } else {
            Entry::Number(v)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub alphabet: Vec<String>,
    pub probs: Vec<f64>,
}

/// `P_{X|U}` with one row per source symbol and one column per input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub inputs: Vec<String>,
    /// Must repeat the source alphabet when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    pub matrix: Vec<Vec<f64>>,
}

/// Classical distortion with one row per source symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    pub recon: Vec<String>,
    pub matrix: Vec<Vec<Entry>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    #[serde(default)]
    pub units: LogBase,
    pub source: SourceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<DistortionSpec>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub solver: SolverSpec,
}

fn is_default(s: &SolverSpec) -> bool {
    *s == SolverSpec::default()
}

/// A spec validated into core objects.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub source: Pmf,
    pub channel: Option<Channel>,
    pub distortion: Option<DistortionMatrix>,
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

fn labels(n: usize, prefix: &str) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn matrix_checked(field: &str, rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::validation(
                format!("{field}[{r}]"),
                format!("{} entries, expected {ncols}", row.len()),
            ));
        }
        for (c, v) in row.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::validation(
                    format!("{field}[{r}][{c}]"),
                    format!("{v} is not a probability"),
                ));
            }
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation("spec", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// SHA-256 of the compact serialization, independent of file formatting.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn validate(&self) -> Result<Problem> {
        let n = self.source.alphabet.len();
        if self.source.probs.len() != n {
            return Err(Error::validation(
                "source.probs",
                format!("{} entries for {n} symbols", self.source.probs.len()),
            ));
        }
        for (i, v) in self.source.probs.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::validation(
                    format!("source.probs[{i}]"),
                    format!("{v} is not a probability"),
                ));
            }
        }
        let source =
            Pmf::new(self.source.alphabet.clone(), self.source.probs.clone()).map_err(|e| prefixed("source", e))?;

        let channel = match &self.channel {
            None => None,
            Some(ch) => {
                if let Some(outputs) = &ch.outputs {
                    if outputs != &self.source.alphabet {
                        return Err(Error::validation("channel.outputs", "must equal the source alphabet"));
                    }
                }
                if ch.matrix.len() != n {
                    return Err(Error::validation(
                        "channel.matrix",
                        format!("{} rows, expected one per source symbol ({n})", ch.matrix.len()),
                    ));
                }
                let m = matrix_checked("channel.matrix", &ch.matrix, ch.inputs.len())?;
                Some(
                    Channel::new(ch.inputs.clone(), self.source.alphabet.clone(), m)
                        .map_err(|e| prefixed("channel", e))?,
                )
            }
        };

        let distortion = match &self.distortion {
            None => None,
            Some(d) => {
                if d.matrix.len() != n {
                    return Err(Error::validation(
                        "distortion.matrix",
                        format!("{} rows, expected one per source symbol ({n})", d.matrix.len()),
                    ));
                }
                let mut m = DMatrix::zeros(n, d.recon.len());
                for (r, row) in d.matrix.iter().enumerate() {
                    if row.len() != d.recon.len() {
                        return Err(Error::validation(
                            format!("distortion.matrix[{r}]"),
                            format!("{} entries, expected {}", row.len(), d.recon.len()),
                        ));
                    }
                    for (c, entry) in row.iter().enumerate() {
                        let field = format!("distortion.matrix[{r}][{c}]");
                        let v = entry.value(&field)?;
                        if !(v >= 0.0) {
                            return Err(Error::validation(field, format!("{v} must be nonnegative")));
                        }
                        m[(r, c)] = v;
                    }
                }
                Some(
                    DistortionMatrix::new(self.source.alphabet.clone(), d.recon.clone(), m)
                        .map_err(|e| prefixed("distortion", e))?,
                )
            }
        };

        if channel.is_none() && distortion.is_none() {
            return Err(Error::validation("spec", "needs a channel or a distortion matrix"));
        }
        if let Some(tol) = self.solver.tol {
            if !(tol > 0.0) {
                return Err(Error::validation("solver.tol", "must be positive"));
            }
        }
        if let Some(grid) = &self.solver.lambda_grid {
            if let Some((i, v)) = grid.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::validation(
                    format!("solver.lambda_grid[{i}]"),
                    format!("{v} must be positive"),
                ));
            }
        }
        Ok(Problem {
            spec: self.clone(),
            source,
            channel,
            distortion,
        })
    }

    fn with_channel(name: &str, probs: Vec<f64>, rows: Vec<Vec<f64>>) -> Self {
        let n_in = rows[0].len();
        Self {
            name: name.into(),
            units: LogBase::Bits,
            source: SourceSpec {
                alphabet: labels(probs.len(), ""),
                probs,
            },
            channel: Some(ChannelSpec {
                inputs: labels(n_in, "u"),
                outputs: None,
                matrix: rows,
            }),
            distortion: None,
            solver: SolverSpec::default(),
        }
    }

    /// `Ber(0.25)` source, `P_{X|U} = BSC(0.1)`.
    pub fn fig2() -> Self {
        Self::with_channel("fig2", vec![0.75, 0.25], vec![vec![0.9, 0.1], vec![0.1, 0.9]])
    }

    /// `Ber(0.35)` source, three-input channel with a non-unique consistent prior.
    pub fn fig3() -> Self {
        Self::with_channel("fig3", vec![0.65, 0.35], vec![vec![0.8, 0.4, 0.2], vec![0.2, 0.6, 0.8]])
    }

    /// `Ber(p)` source with Hamming distortion.
    pub fn binary_hamming(p: f64) -> Self {
        Self {
            name: format!("hamming-{p}"),
            units: LogBase::Bits,
            source: SourceSpec {
                alphabet: labels(2, ""),
                probs: vec![1.0 - p, p],
            },
            channel: None,
            distortion: Some(DistortionSpec {
                recon: labels(2, ""),
                matrix: vec![vec![0.0.into(), 1.0.into()], vec![1.0.into(), 0.0.into()]],
            }),
            solver: SolverSpec::default(),
        }
    }
}

impl Problem {
    fn channel(&self) -> Result<&Channel> {
        self.channel
            .as_ref()
            .ok_or_else(|| Error::validation("channel", "this command needs a channel P(x|u)"))
    }

    fn distortion(&self) -> Result<&DistortionMatrix> {
        self.distortion
            .as_ref()
            .ok_or_else(|| Error::validation("distortion", "this command needs a classical distortion matrix"))
    }

    fn ba_config(&self) -> BaConfig {
        let mut cfg = BaConfig::default();
        if let Some(tol) = self.spec.solver.tol {
            cfg.tol = tol;
        }
        if let Some(n) = self.spec.solver.max_iters {
            cfg.max_iters = n;
        }
        cfg
    }
}

/// JSON number for finite values, `"inf"` / `"-inf"` otherwise. NaN is
/// marked and rejected by [`check_output`].
pub fn num(v: f64) -> Value {
    if v.is_nan() {
        Value::String("NaN".into())
    } else if v == f64::INFINITY {
        Value::String("inf".into())
    } else if v == f64::NEG_INFINITY {
        Value::String("-inf".into())
    } else {
        json!(v)
    }
}

fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

fn matrix_rows(m: &DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| nums(&r.iter().copied().collect::<Vec<_>>()))
            .collect(),
    )
}

fn pmf_json(p: &Pmf) -> Value {
    json!({ "alphabet": p.alphabet(), "probs": nums(p.probs()) })
}

/// Output filter: fails if any NaN reached the bundle.
pub fn check_output(v: &Value) -> Result<()> {
    fn walk(v: &Value, path: &mut String) -> Result<()> {
        match v {
            Value::String(s) if s == "NaN" => Err(Error::Numerical(format!("NaN in output at {path}"))),
            Value::Array(items) => items.iter().enumerate().try_for_each(|(i, x)| {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                walk(x, path)?;
                path.truncate(len);
                Ok(())
            }),
            Value::Object(map) => map.iter().try_for_each(|(k, x)| {
                let len = path.len();
                path.push('.');
                path.push_str(k);
                walk(x, path)?;
                path.truncate(len);
                Ok(())
            }),
            _ => Ok(()),
        }
    }
    walk(v, &mut String::from("$"))
}

/// `x` with 12 significant digits; `inf` for infinities. NaN is an error.
pub fn format_number(x: f64) -> Result<String> {
    if x.is_nan() {
        return Err(Error::Numerical("NaN reached CSV output".into()));
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { "inf" } else { "-inf" }.into());
    }
    if x == 0.0 {
        return Ok("0".into());
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    Ok(if (-5..12).contains(&exp) {
        trim(&format!("{x:.*}", (11 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mantissa))
    })
}

/// One row of a curve table. Rates and distortion are already in report units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub d: f64,
    pub r_loglik: f64,
    pub r_logloss_bound: f64,
    pub slope: f64,
    pub converged: bool,
}

pub const CSV_HEADER: &str = "D,R_loglik,R_logloss_bound,slope,converged";

pub fn write_csv(rows: &[CurveRow]) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            format_number(r.d)?,
            format_number(r.r_loglik)?,
            format_number(r.r_logloss_bound)?,
            format_number(r.slope)?,
            r.converged
        ));
    }
    Ok(out)
}

/// Write `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Validation { .. } | Error::AlphabetMismatch(_) | Error::OutOfRange { .. } | Error::Json(_) => 2,
        Error::NotConverged { .. } => 3,
        Error::Inapplicable(_) | Error::Infeasible(_) => 4,
        _ => 1,
    }
}

fn bundle(command: &str, problem: &Problem, units: LogBase, config: Value, results: Value) -> Result<Value> {
    let v = json!({
        "meta": {
            "command": command,
            "spec": problem.spec.name,
            "spec_sha256": problem.spec.digest()?,
            "version": VERSION,
            "units": units.label(),
            "config": config,
        },
        "results": results,
    });
    check_output(&v)?;
    Ok(v)
}

/// Feasible range, minimum-distortion rate, consistency and special point.
pub fn cmd_analyze(problem: &Problem, units: LogBase) -> Result<Value> {
    let p = &problem.source;
    let ch = problem.channel()?;
    let u = |v: f64| num(units.from_nats(v));
    let d = loglik_distortion(ch)?;
    let (d_min, d_max) = d.feasible_range(p)?;
    let dmin_cfg = DminConfig::default();
    let at_dmin = rate_at_dmin(p, ch, &dmin_cfg)?;
    let sets = ml_sets(ch, ML_TIE_TOL);
    let consistency = consistency_polytope(p, ch)?;

    let ml: Vec<Vec<&str>> = sets
        .sets
        .iter()
        .map(|s| s.iter().map(|&i| ch.inputs()[i].as_str()).collect())
        .collect();
    let (interval, d_star) = match &consistency.interval {
        Some(iv) => {
            let point = (iv.max - iv.min <= 1e-12).then(|| u(iv.min));
            (
                json!({
                    "min": u(iv.min),
                    "max": u(iv.max),
                    "prior_at_min": pmf_json(&iv.prior_at_min),
                    "prior_at_max": pmf_json(&iv.prior_at_max),
                }),
                point.unwrap_or(Value::Null),
            )
        }
        None => (Value::Null, Value::Null),
    };
    let results = json!({
        "h_x": u(entropy_nats(p.probs())),
        "d_min": u(d_min),
        "d_max": u(d_max),
        "rate_at_d_min": u(at_dmin.rate),
        "ml_sets": ml,
        "consistency": {
            "feasible": consistency.feasible,
            "unique_prior": consistency.unique_prior,
            "witness_prior": consistency.witness_prior.as_ref().map(pmf_json),
            "d_star_interval": interval,
        },
        "d_star": d_star,
    });
    let config = json!({ "ml_tie_tol": ML_TIE_TOL, "d_min_tol": dmin_cfg.tol, "d_min_max_iters": dmin_cfg.max_iters });
    bundle("analyze", problem, units, config, results)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn curve_row(p: &Pmf, pt: &RdPoint, units: LogBase) -> CurveRow {
    CurveRow {
        d: units.from_nats(pt.distortion),
        r_loglik: units.from_nats(pt.rate),
        r_logloss_bound: units.from_nats(logloss_rdf(p, pt.distortion)),
        slope: pt.slope,
        converged: pt.converged,
    }
}

/// Curve table over `points` distortions spanning `[D_min, D_max]`. The flag
/// is false when no point converged.
pub fn cmd_curve(problem: &Problem, units: LogBase, points: usize) -> Result<(String, bool)> {
    if points == 0 {
        return Err(Error::validation("points", "must be at least 1"));
    }
    let p = &problem.source;
    let d = loglik_distortion(problem.channel()?)?;
    let (d_min, d_max) = d.feasible_range(p)?;
    let curve = rd_curve(
        p,
        &d,
        &CurveGrid::Distortions(linspace(d_min, d_max, points)),
        &problem.ba_config(),
    )?;
    let rows: Vec<CurveRow> = curve.points.iter().map(|pt| curve_row(p, pt, units)).collect();
    let any = rows.iter().any(|r| r.converged);
    Ok((write_csv(&rows)?, any))
}

/// Single-parameter dual at `distortion` with the feasibility samples.
pub fn cmd_dual(problem: &Problem, units: LogBase, distortion: f64) -> Result<Value> {
    let p = &problem.source;
    let d = problem.distortion()?;
    let grid = match &problem.spec.solver.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(d, DEFAULT_GRID_POINTS),
    };
    let sol = dual_rdf(p, d, distortion, Some(&grid))?;
    let samples: Vec<Value> = sol
        .samples
        .iter()
        .map(|t| {
            let g = t
                .feasible
                .then(|| num(units.from_nats(dual_objective(p, &t.mu, t.lambda, distortion))));
            json!({ "lambda": num(t.lambda), "feasible": t.feasible, "g": g })
        })
        .collect();
    let feasible: Vec<f64> = sol.samples.iter().filter(|t| t.feasible).map(|t| t.lambda).collect();
    let results = json!({
        "distortion": num(distortion),
        "rate": num(units.from_nats(sol.rate)),
        "lambda_star": num(sol.lambda),
        "mu": nums(&sol.mu),
        "feasible_lambda_min": feasible.first().map(|&v| num(v)),
        "feasible_lambda_max": feasible.last().map(|&v| num(v)),
        "samples": samples,
    });
    let config = json!({ "lambda_grid_points": grid.len(), "lambda_grid_min": num(grid[0]), "lambda_grid_max": num(grid[grid.len() - 1]) });
    bundle("dual", problem, units, config, results)
}

/// Backward-tilt channel at `lambda0`, the affine distortion map, and an
/// equivalence table `R(D)` vs `R_ll(D̃)` at `points` distortions.
pub fn cmd_translate(problem: &Problem, units: LogBase, lambda0: f64, points: usize) -> Result<Value> {
    let p = &problem.source;
    let d = problem.distortion()?;
    let tr = translate_to_loglik(p, d, lambda0)?;
    let d_ll = loglik_distortion(&tr.channel)?;
    let (ll_min, ll_max) = d_ll.feasible_range(p)?;
    let (d_min, d_max) = d.feasible_range(p)?;
    let cfg = problem.ba_config();
    let mut table = Vec::new();
    for target in linspace(d_min, d_max, points.max(1)) {
        let classical = rd_at_distortion(p, d, target, &cfg)?;
        let d_tilde = tr.map.forward(target).clamp(ll_min, ll_max);
        let ll = rd_at_distortion(p, &d_ll, d_tilde, &cfg)?;
        table.push(json!({
            "d": num(target),
            "rate": num(units.from_nats(classical.rate)),
            "d_tilde": num(units.from_nats(d_tilde)),
            "rate_loglik": num(units.from_nats(ll.rate)),
            "gap": num(units.from_nats((classical.rate - ll.rate).abs())),
        }));
    }
    let results = json!({
        "channel": {
            "inputs": tr.channel.inputs(),
            "outputs": tr.channel.outputs(),
            "matrix": matrix_rows(tr.channel.matrix()),
        },
        "affine": {
            "lambda0": num(lambda0),
            "offset": num(units.from_nats(tr.map.offset)),
            "offset_nats": num(tr.map.offset),
        },
        "mu": nums(&tr.tilt.mu),
        "output_marginal": tr.tilt.q_y.as_ref().map(pmf_json),
        "equivalence": table,
    });
    bundle("translate", problem, units, json!({ "points": points }), results)
}

/// Whether `d` is `c·[x ≠ y]` for some `c > 0`.
fn hamming_scale(d: &DistortionMatrix) -> Option<f64> {
    let n = d.n_source();
    if n < 2 || d.n_recon() != n {
        return None;
    }
    let c = d.get(0, 1);
    let ok = c > 0.0
        && c.is_finite()
        && (0..n).all(|x| (0..n).all(|y| if x == y { d.get(x, y) == 0.0 } else { d.get(x, y) == c }));
    ok.then_some(c)
}

/// Perception-constrained rate, CP factorization, latent scheme and its
/// verification. The flag reports whether every scheme check passed.
pub fn cmd_rdp(problem: &Problem, units: LogBase, distortion: f64, seed: Option<u64>) -> Result<(Value, bool)> {
    let p = &problem.source;
    let d = problem.distortion()?;
    let sol = solve_perfect_perception(p, d, distortion, &PerceptionConfig::default())
        .map_err(|e| e.at_stage("perception"))?;

    let base: CpFactorization = (|| -> Result<CpFactorization> {
        match hamming_scale(d) {
            Some(c) if sol.lambda > 0.0 => hamming_cp_factor(d.n_source(), sol.lambda * c),
            _ => {
                let v = cp_exponential_matrix(d, sol.lambda)?;
                let mut cfg = NumericCpConfig::for_size(d.n_source());
                if sol.lambda == 0.0 {
                    cfg.rank = 1;
                }
                cfg.seed = seed.or(problem.spec.solver.seed).unwrap_or(0);
                if let Some(r) = problem.spec.solver.restarts {
                    cfg.restarts = r;
                }
                cp_factor_numeric(&v, &cfg)
            }
        }
    })()
    .map_err(|e| e.at_stage("factorization"))?;
    let scaled = scale_factorization_to_coupling(&sol.coupling, &base, &sol.potential)
        .map_err(|e| e.at_stage("factorization"))?;
    let scheme = construct_latent(&scaled, p.alphabet()).map_err(|e| e.at_stage("latent"))?;
    let report = crate::rdp::verify_scheme(&scheme, p, d, distortion, sol.rate).map_err(|e| e.at_stage("verify"))?;

    let checks: Vec<Value> = report
        .checks
        .iter()
        .map(|c| json!({ "name": c.name, "value": num(c.value), "bound": num(c.bound), "passed": c.passed }))
        .collect();
    let results = json!({
        "distortion": num(distortion),
        "achieved_distortion": num(sol.distortion),
        "rate": num(units.from_nats(sol.rate)),
        "lambda": num(sol.lambda),
        "coupling": matrix_rows(sol.coupling.matrix()),
        "potential": nums(&sol.potential),
        "cp": {
            "method": base.method,
            "rank": base.b.ncols(),
            "base_residual": num(base.residual),
            "residual": num(scaled.residual),
        },
        "latent": {
            "p_z": pmf_json(&scheme.p_z),
            "p_x_given_z": matrix_rows(scheme.p_x_given_z.matrix()),
            "target_distortion": num(units.from_nats(scheme.target_distortion)),
            "mixture_residual": num(scheme.mixture_residual),
        },
        "checks": checks,
        "all_passed": report.passed(),
    });
    let config = json!({ "seed": seed.or(problem.spec.solver.seed).unwrap_or(0) });
    Ok((bundle("rdp", problem, units, config, results)?, report.passed()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
        }
    }

    pub fn spec(self) -> ProblemSpec {
        match self {
            Figure::Fig2 => ProblemSpec::fig2(),
            Figure::Fig3 => ProblemSpec::fig3(),
        }
    }
}

/// A file produced by a command.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub contents: String,
}

pub const FIGURE_CURVE_POINTS: usize = 81;
pub const FIGURE_BOUND_POINTS: usize = 41;

/// `<figure>.csv` with both curves on a shared distortion grid, and
/// `<figure>.markers.json` with the reference scalars.
///
/// The grid is the union of `curve_points` distortions over `[D_min, D_max]`
/// and 41 over `[0, H(X)]`. Below `D_min` the log-likelihood rate is `inf`;
/// above `D_max` it is zero.
pub fn cmd_reproduce(figure: Figure, units: LogBase, curve_points: usize) -> Result<Vec<Artifact>> {
    let problem = figure.spec().validate()?;
    let p = &problem.source;
    let ch = problem.channel()?;
    let d = loglik_distortion(ch)?;
    let (d_min, d_max) = d.feasible_range(p)?;
    let h = entropy_nats(p.probs());

    let mut grid = linspace(d_min, d_max, curve_points.max(2));
    grid.extend(linspace(0.0, h, FIGURE_BOUND_POINTS));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);

    let cfg = problem.ba_config();
    let mut warm: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(grid.len());
    for &target in &grid {
        let bound = units.from_nats(logloss_rdf(p, target));
        let row = if target < d_min {
            CurveRow {
                d: units.from_nats(target),
                r_loglik: f64::INFINITY,
                r_logloss_bound: bound,
                slope: f64::INFINITY,
                converged: true,
            }
        } else if target > d_max {
            CurveRow {
                d: units.from_nats(target),
                r_loglik: 0.0,
                r_logloss_bound: bound,
                slope: 0.0,
                converged: true,
            }
        } else {
            let pt = rd_at_distortion(
                p,
                &d,
                target,
                &BaConfig {
                    init_q: warm.clone(),
                    ..cfg.clone()
                },
            )?;
            let n = pt.output.len() as f64;
            warm = Some(pt.output.probs().iter().map(|v| 0.999 * v + 0.001 / n).collect());
            CurveRow {
                d: units.from_nats(target),
                r_loglik: units.from_nats(pt.rate),
                r_logloss_bound: bound,
                slope: pt.slope,
                converged: pt.converged,
            }
        };
        rows.push(row);
    }

    let analysis = cmd_analyze(&problem, units)?;
    let r = &analysis["results"];
    let markers = json!({
        "figure": figure.name(),
        "units": units.label(),
        "d_min": r["d_min"],
        "d_max": r["d_max"],
        "h_x": r["h_x"],
        "d_star": r["d_star"],
        "d_star_interval": [r["consistency"]["d_star_interval"]["min"], r["consistency"]["d_star_interval"]["max"]],
        "version": VERSION,
    });
    check_output(&markers)?;
    Ok(vec![
        Artifact {
            file_name: format!("{}.csv", figure.name()),
            contents: write_csv(&rows)?,
        },
        Artifact {
            file_name: format!("{}.markers.json", figure.name()),
            contents: serde_json::to_string_pretty(&markers)? + "\n",
        },
    ])
}

#[derive(Debug, Parser)]
#[command(
    name = "llrd",
    version,
    about = "Rate-distortion toolkit for the log-likelihood distortion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Problem spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Reporting unit; defaults to the spec's `units`.
    #[arg(long)]
    pub units: Option<LogBase>,
    /// Output directory; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Feasible range, rate at D_min, consistency and the special point.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Rate-distortion curve as CSV.
    Curve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Single-parameter dual at one distortion.
    Dual {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        distortion: f64,
    },
    /// Recast a classical distortion as a log-likelihood problem.
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        lambda0: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
    },
    /// Perfect-perception rate and its latent log-likelihood scheme.
    Rdp {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        distortion: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the figure CSVs and marker files.
    Reproduce {
        /// Both figures when absent.
        #[arg(long)]
        figure: Option<Figure>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        units: Option<LogBase>,
        #[arg(long, default_value_t = FIGURE_CURVE_POINTS)]
        points: usize,
    },
}

/// What a command produced, before it is written out.
pub struct Report {
    pub artifacts: Vec<Artifact>,
    pub out: Option<PathBuf>,
    pub code: i32,
    pub message: Option<String>,
}

fn json_artifact(name: &str, v: &Value) -> Result<Artifact> {
    Ok(Artifact {
        file_name: format!("{name}.json"),
        contents: serde_json::to_string_pretty(v)? + "\n",
    })
}

fn load(common: &Common) -> Result<(Problem, LogBase)> {
    let problem = ProblemSpec::load(&common.spec)?.validate()?;
    let units = common.units.unwrap_or(problem.spec.units);
    Ok((problem, units))
}

pub fn execute(command: &Command) -> Result<Report> {
    let single = |common: &Common, artifact: Artifact| Report {
        artifacts: vec![artifact],
        out: common.out.clone(),
        code: 0,
        message: None,
    };
    Ok(match command {
        Command::Analyze { common } => {
            let (problem, units) = load(common)?;
            single(common, json_artifact("analyze", &cmd_analyze(&problem, units)?)?)
        }
        Command::Curve { common, points } => {
            let (problem, units) = load(common)?;
            let (csv, any) = cmd_curve(&problem, units, *points)?;
            let mut r = single(
                common,
                Artifact {
                    file_name: "curve.csv".into(),
                    contents: csv,
                },
            );
            if !any {
                r.code = 3;
                r.message = Some("no curve point converged".into());
            }
            r
        }
        Command::Dual { common, distortion } => {
            let (problem, units) = load(common)?;
            single(common, json_artifact("dual", &cmd_dual(&problem, units, *distortion)?)?)
        }
        Command::Translate {
            common,
            lambda0,
            points,
        } => {
            let (problem, units) = load(common)?;
            single(
                common,
                json_artifact("translate", &cmd_translate(&problem, units, *lambda0, *points)?)?,
            )
        }
        Command::Rdp {
            common,
            distortion,
            seed,
        } => {
            let (problem, units) = load(common)?;
            let (v, passed) = cmd_rdp(&problem, units, *distortion, *seed)?;
            let mut r = single(common, json_artifact("rdp", &v)?);
            if !passed {
                let failed: Vec<&str> = v["results"]["checks"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .filter(|c| c["passed"] == false)
                    .filter_map(|c| c["name"].as_str())
                    .collect();
                r.code = 1;
                r.message = Some(format!("scheme checks failed: {}", failed.join(", ")));
            }
            r
        }
        Command::Reproduce {
            figure,
            out,
            units,
            points,
        } => {
            let figures = match figure {
                Some(f) => vec![*f],
                None => vec![Figure::Fig2, Figure::Fig3],
            };
            let mut artifacts = Vec::new();
            for f in figures {
                let units = units.unwrap_or(f.spec().units);
                artifacts.extend(cmd_reproduce(f, units, *points)?);
            }
            Report {
                artifacts,
                out: Some(out.clone()),
                code: 0,
                message: None,
            }
        }
    })
}

/// Parse `args`, run the command, write its output and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let report = match execute(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    for a in &report.artifacts {
        match &report.out {
            Some(dir) => {
                let path = dir.join(&a.file_name);
                if let Err(e) = write_atomic(&path, a.contents.as_bytes()) {
                    eprintln!("error: {e}");
                    return exit_code(&e);
                }
                println!("{}", path.display());
            }
            None => print!("{}", a.contents),
        }
    }
    if let Some(m) = &report.message {
        eprintln!("error: {m}");
    }
    report.code
}
