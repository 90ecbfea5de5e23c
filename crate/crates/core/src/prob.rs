//! Finite probability primitives: distributions, channels, joints and the
//! information measures on them.
//!
//! Every quantity is computed in nats. [`LogBase`] converts at the reporting
//! boundary only. Zero-probability symbols stay in their alphabets so indices
//! are stable across operations; sums skip zero terms (`0 log 0 = 0`).

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability normalization.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Unit for reporting information quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    #[serde(alias = "natural")]
    Nats,
    Bits,
}

impl LogBase {
    /// Convert a value in nats into this unit.
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            LogBase::Nats => nats,
            LogBase::Bits => nats / std::f64::consts::LN_2,
        }
    }

    /// Convert a value in this unit into nats.
    pub fn to_nats(self, value: f64) -> f64 {
        match self {
            LogBase::Nats => value,
            LogBase::Bits => value * std::f64::consts::LN_2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LogBase::Nats => "nats",
            LogBase::Bits => "bits",
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nats" | "natural" => Ok(LogBase::Nats),
            "bits" => Ok(LogBase::Bits),
            other => Err(Error::validation("units", format!("unknown unit `{other}`"))),
        }
    }
}

/// Labels `"0"`, `"1"`, ... used when a caller does not name the symbols.
pub fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn check_labels(field: &str, labels: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        if !seen.insert(label.as_str()) {
            return Err(Error::validation(
                format!("{field}[{i}]"),
                format!("duplicate label `{label}`"),
            ));
        }
    }
    Ok(())
}

fn check_entry(field: impl FnOnce() -> String, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::validation(
            field(),
            format!("entry {v} is not a finite nonnegative number"),
        ));
    }
    Ok(())
}

fn ensure_same_alphabet(what: &str, a: &[String], b: &[String]) -> Result<()> {
    if a != b {
        return Err(Error::AlphabetMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// A probability vector over a labelled finite alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    alphabet: Vec<String>,
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(alphabet: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if alphabet.len() != probs.len() {
            return Err(Error::validation(
                "probs",
                format!("{} probabilities for {} symbols", probs.len(), alphabet.len()),
            ));
        }
        if probs.is_empty() {
            return Err(Error::validation("probs", "empty distribution"));
        }
        check_labels("alphabet", &alphabet)?;
        for (i, &p) in probs.iter().enumerate() {
            check_entry(|| format!("probs[{i}]"), p)?;
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::validation("probs", format!("sum is {total}, expected 1")));
        }
        Ok(Self { alphabet, probs })
    }

    /// Normalize nonnegative weights into a distribution.
    pub fn from_weights(alphabet: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        for (i, &w) in weights.iter().enumerate() {
            check_entry(|| format!("weights[{i}]"), w)?;
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::validation("weights", "total mass is zero"));
        }
        Self::new(alphabet, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        Self::new(default_labels(probs.len()), probs)
    }

    /// `Ber(p)` on `{"0", "1"}` with `P(1) = p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation("p", format!("{p} not in [0, 1]")));
        }
        Self::from_probs(vec![1.0 - p, p])
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_probs(vec![1.0 / n as f64; n])
    }

    /// Point mass on symbol `index`.
    pub fn delta(n: usize, index: usize) -> Result<Self> {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self::from_probs(probs)
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn max_abs_diff(&self, other: &Pmf) -> f64 {
        max_abs_diff(&self.probs, &other.probs)
    }
}

/// A conditional distribution `P(out | in)`, stored as an
/// `outputs x inputs` matrix whose columns each sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    inputs: Vec<String>,
    outputs: Vec<String>,
    matrix: DMatrix<f64>,
}

impl Channel {
    pub fn new(inputs: Vec<String>, outputs: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != outputs.len() || matrix.ncols() != inputs.len() {
            return Err(Error::validation(
                "matrix",
                format!(
                    "shape {}x{} does not match {} outputs x {} inputs",
                    matrix.nrows(),
                    matrix.ncols(),
                    outputs.len(),
                    inputs.len()
                ),
            ));
        }
        if inputs.is_empty() || outputs.is_empty() {
            return Err(Error::validation("matrix", "empty channel"));
        }
        check_labels("inputs", &inputs)?;
        check_labels("outputs", &outputs)?;
        for col in 0..matrix.ncols() {
            for row in 0..matrix.nrows() {
                check_entry(|| format!("matrix[{row}][{col}]"), matrix[(row, col)])?;
            }
            let total: f64 = matrix.column(col).sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::validation(
                    format!("matrix column {col}"),
                    format!("sums to {total}, expected 1"),
                ));
            }
        }
        Ok(Self {
            inputs,
            outputs,
            matrix,
        })
    }

    /// Build from row-major nested rows (row = output symbol), default labels.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let matrix = matrix_from_rows(rows)?;
        Self::new(default_labels(matrix.ncols()), default_labels(matrix.nrows()), matrix)
    }

    /// Normalize every column of a nonnegative weight matrix.
    pub fn from_weights(inputs: Vec<String>, outputs: Vec<String>, mut weights: DMatrix<f64>) -> Result<Self> {
        for col in 0..weights.ncols() {
            let total: f64 = weights.column(col).sum();
            if !(total > 0.0) {
                return Err(Error::validation(format!("weights column {col}"), "zero total mass"));
            }
            weights.column_mut(col).unscale_mut(total);
        }
        Self::new(inputs, outputs, weights)
    }

    /// Binary symmetric channel with crossover probability `eps`.
    pub fn bsc(eps: f64) -> Result<Self> {
        Self::from_rows(&[vec![1.0 - eps, eps], vec![eps, 1.0 - eps]])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(default_labels(n), default_labels(n), DMatrix::identity(n, n))
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `P(out | in)`.
    pub fn prob(&self, out: usize, input: usize) -> f64 {
        self.matrix[(out, input)]
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Conditional distribution of the output given input `input`.
    pub fn column(&self, input: usize) -> Vec<f64> {
        self.matrix.column(input).iter().copied().collect()
    }

    /// Output marginal when the input is distributed as `p_in`.
    pub fn push_forward(&self, p_in: &Pmf) -> Result<Pmf> {
        ensure_same_alphabet("channel input vs pmf", &self.inputs, p_in.alphabet())?;
        let out = &self.matrix * nalgebra::DVector::from_column_slice(p_in.probs());
        let weights: Vec<f64> = out.iter().map(|v| v.max(0.0)).collect();
        Pmf::from_weights(self.outputs.clone(), weights)
    }

    /// Row-major nested rows (row = output symbol).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.matrix)
    }
}

/// A joint distribution over `rows x cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    rows: Vec<String>,
    cols: Vec<String>,
    matrix: DMatrix<f64>,
}

impl Joint {
    pub fn new(rows: Vec<String>, cols: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != rows.len() || matrix.ncols() != cols.len() {
            return Err(Error::validation("matrix", "shape does not match alphabets"));
        }
        check_labels("rows", &rows)?;
        check_labels("cols", &cols)?;
        for r in 0..matrix.nrows() {
            for c in 0..matrix.ncols() {
                check_entry(|| format!("matrix[{r}][{c}]"), matrix[(r, c)])?;
            }
        }
        let total = matrix.sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::validation("matrix", format!("total mass {total}, expected 1")));
        }
        Ok(Self { rows, cols, matrix })
    }

    /// Normalize a nonnegative weight matrix into a joint.
    pub fn from_weights(rows: Vec<String>, cols: Vec<String>, weights: DMatrix<f64>) -> Result<Self> {
        let total = weights.sum();
        if !(total > 0.0) {
            return Err(Error::validation("weights", "total mass is zero"));
        }
        Self::new(rows, cols, weights / total)
    }

    /// Independent coupling `p_row ⊗ p_col`.
    pub fn product(p_row: &Pmf, p_col: &Pmf) -> Result<Self> {
        let m = DMatrix::from_fn(p_row.len(), p_col.len(), |r, c| p_row.prob(r) * p_col.prob(c));
        Self::from_weights(p_row.alphabet().to_vec(), p_col.alphabet().to_vec(), m)
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn prob(&self, r: usize, c: usize) -> f64 {
        self.matrix[(r, c)]
    }

    pub fn transpose(&self) -> Joint {
        Joint {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            matrix: self.matrix.transpose(),
        }
    }

    /// Distribution of the row variable.
    pub fn marginal_row(&self) -> Pmf {
        let w: Vec<f64> = self.matrix.row_iter().map(|r| r.sum()).collect();
        Pmf::from_weights(self.rows.clone(), w).expect("joint has positive mass")
    }

    /// Distribution of the column variable.
    pub fn marginal_col(&self) -> Pmf {
        let w: Vec<f64> = self.matrix.column_iter().map(|c| c.sum()).collect();
        Pmf::from_weights(self.cols.clone(), w).expect("joint has positive mass")
    }

    /// `H(row | col)` in `base`.
    pub fn conditional_entropy_rows(&self, base: LogBase) -> f64 {
        base.from_nats(conditional_entropy_nats(&self.matrix))
    }

    /// `H(col | row)` in `base`.
    pub fn conditional_entropy_cols(&self, base: LogBase) -> f64 {
        base.from_nats(conditional_entropy_nats(&self.matrix.transpose()))
    }

    pub fn max_abs_diff(&self, other: &Joint) -> f64 {
        (&self.matrix - &other.matrix).amax()
    }
}

/// Joint `(out, in)` with entry `ch(out|in) p_in(in)`.
pub fn joint_from(p_in: &Pmf, ch: &Channel) -> Result<Joint> {
    ensure_same_alphabet("channel input vs pmf", ch.inputs(), p_in.alphabet())?;
    let m = DMatrix::from_fn(ch.n_outputs(), ch.n_inputs(), |o, i| ch.prob(o, i) * p_in.prob(i));
    Joint::from_weights(ch.outputs().to_vec(), ch.inputs().to_vec(), m)
}

/// Result of Bayes-reversing a joint.
#[derive(Clone, Debug)]
pub struct Reversal {
    /// `P(col | row)` with the surviving row symbols as inputs.
    pub channel: Channel,
    /// Row symbols with zero marginal probability, removed from the inputs.
    pub dropped: Vec<String>,
}

/// Backward channel `P(col | row)` of a joint.
pub fn bayes_reverse(j: &Joint) -> Result<Reversal> {
    let marg = j.marginal_row();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (r, label) in j.rows().iter().enumerate() {
        if marg.prob(r) > 0.0 {
            kept.push(r);
        } else {
            dropped.push(label.clone());
        }
    }
    let weights = DMatrix::from_fn(j.cols().len(), kept.len(), |c, k| j.prob(kept[k], c));
    let inputs = kept.iter().map(|&r| j.rows()[r].clone()).collect();
    let channel = Channel::from_weights(inputs, j.cols().to_vec(), weights)?;
    Ok(Reversal { channel, dropped })
}

pub(crate) fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

pub(crate) fn entropy_nats(p: &[f64]) -> f64 {
    -p.iter().map(|&v| xlogx(v)).sum::<f64>()
}

/// `KL(p || q)` in nats; `+inf` when `p` is not absolutely continuous w.r.t. `q`.
pub(crate) fn kl_nats(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc.max(0.0)
}

/// `H(row | col)` of a nonnegative joint weight matrix, nats.
pub(crate) fn conditional_entropy_nats(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|col| {
            let mass: f64 = col.sum();
            if mass > 0.0 {
                -col.iter()
                    .map(|&v| if v > 0.0 { v * (v / mass).ln() } else { 0.0 })
                    .sum::<f64>()
            } else {
                0.0
            }
        })
        .sum()
}

/// `I(row; col)` of a nonnegative joint weight matrix, nats.
pub(crate) fn mutual_information_nats(m: &DMatrix<f64>) -> f64 {
    let rows: Vec<f64> = m.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = m.column_iter().map(|c| c.sum()).collect();
    let mut acc = 0.0;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if v > 0.0 {
                acc += v * (v / (rows[r] * cols[c])).ln();
            }
        }
    }
    acc.max(0.0)
}

/// Shannon entropy `-Σ p log p`.
pub fn entropy(p: &Pmf, base: LogBase) -> f64 {
    base.from_nats(entropy_nats(p.probs()))
}

/// Relative entropy `Σ p log(p/q)`; `+inf` when absolute continuity fails.
pub fn kl_divergence(p: &Pmf, q: &Pmf, base: LogBase) -> Result<f64> {
    ensure_same_alphabet("kl_divergence", p.alphabet(), q.alphabet())?;
    Ok(base.from_nats(kl_nats(p.probs(), q.probs())))
}

/// `H(p) + KL(p || q)`.
pub fn cross_entropy(p: &Pmf, q: &Pmf, base: LogBase) -> Result<f64> {
    Ok(entropy(p, base) + kl_divergence(p, q, base)?)
}

pub fn mutual_information(j: &Joint, base: LogBase) -> f64 {
    base.from_nats(mutual_information_nats(j.matrix()))
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::validation("matrix", "empty matrix"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::validation(format!("matrix[{i}]"), "ragged row"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
