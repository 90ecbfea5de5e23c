#![allow(dead_code)]

use llrd::loglik::DistortionMatrix;
use llrd::prob::{default_labels, Channel, Pmf};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Strictly positive weights, normalized.
pub fn pmf(n: usize) -> impl Strategy<Value = Pmf> {
    prop::collection::vec(0.02f64..1.0, n).prop_map(|w| Pmf::from_weights(default_labels(w.len()), w).unwrap())
}

pub fn pmf_any(max: usize) -> impl Strategy<Value = Pmf> {
    (2..=max).prop_flat_map(pmf)
}

/// `n_out × n_in` column-stochastic matrix with every entry positive.
pub fn channel(n_out: usize, n_in: usize) -> impl Strategy<Value = Channel> {
    prop::collection::vec(0.02f64..1.0, n_out * n_in).prop_map(move |w| {
        let m = DMatrix::from_vec(n_out, n_in, w);
        Channel::from_weights(default_labels(n_in), default_labels(n_out), m).unwrap()
    })
}

/// Channel with some exact zeros; every row and column keeps a positive entry.
pub fn sparse_channel(n_out: usize, n_in: usize) -> impl Strategy<Value = Channel> {
    prop::collection::vec((0.02f64..1.0, prop::bool::weighted(0.3)), n_out * n_in).prop_map(move |w| {
        let mut m = DMatrix::from_fn(n_out, n_in, |r, c| {
            let (v, zero) = w[c * n_out + r];
            if zero {
                0.0
            } else {
                v
            }
        });
        for c in 0..n_in {
            if m.column(c).sum() == 0.0 {
                m[(c % n_out, c)] = 1.0;
            }
        }
        for r in 0..n_out {
            if m.row(r).sum() == 0.0 {
                m[(r, r % n_in)] = 1.0;
            }
        }
        Channel::from_weights(default_labels(n_in), default_labels(n_out), m).unwrap()
    })
}

/// Nonnegative finite distortion with a zero in every row.
pub fn distortion(nx: usize, ny: usize) -> impl Strategy<Value = DistortionMatrix> {
    (
        prop::collection::vec(0.0f64..3.0, nx * ny),
        prop::collection::vec(0..ny, nx),
    )
        .prop_map(move |(w, zeros)| {
            let mut m = DMatrix::from_vec(nx, ny, w);
            for (x, &y) in zeros.iter().enumerate() {
                m[(x, y)] = 0.0;
            }
            DistortionMatrix::new(default_labels(nx), default_labels(ny), m).unwrap()
        })
}

/// Symmetric nonnegative distortion with zero diagonal.
pub fn symmetric_distortion(n: usize) -> impl Strategy<Value = DistortionMatrix> {
    prop::collection::vec(0.1f64..3.0, n * n).prop_map(move |w| {
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[i.min(j) * n + i.max(j)] });
        DistortionMatrix::new(default_labels(n), default_labels(n), m).unwrap()
    })
}

pub fn hb(x: f64) -> f64 {
    let f = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
    f(x) + f(1.0 - x)
}

/// Mutual information of a 2×2 joint, nats.
pub fn mi2(w: [[f64; 2]; 2]) -> f64 {
    let r = [w[0][0] + w[0][1], w[1][0] + w[1][1]];
    let c = [w[0][0] + w[1][0], w[0][1] + w[1][1]];
    let mut acc = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            if w[i][j] > 0.0 {
                acc += w[i][j] * (w[i][j] / (r[i] * c[j])).ln();
            }
        }
    }
    acc
}

/// `min I(X;Y)` over 2×2 couplings with both marginals `Ber(p)` and
/// `E[Hamming] <= D`, by a fine scan of the single free parameter.
pub fn perception_scan(p: f64, dist: f64) -> f64 {
    let n = 200_000;
    let t_max = (dist / 2.0).min(p.min(1.0 - p));
    (0..=n)
        .map(|k| {
            let t = t_max * k as f64 / n as f64;
            mi2([[1.0 - p - t, t], [t, p - t]])
        })
        .fold(f64::INFINITY, f64::min)
}

/// `min I(X;Y)` over every 2×2 test channel with `E[Hamming] <= D`, by grid.
pub fn hamming_rd_scan(p: f64, dist: f64) -> f64 {
    let n = 2000;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let a = i as f64 / n as f64; // W(1|0)
        for j in 0..=n {
            let b = j as f64 / n as f64; // W(0|1)
            if (1.0 - p) * a + p * b <= dist {
                best = best.min(mi2([[(1.0 - p) * (1.0 - a), (1.0 - p) * a], [p * b, p * (1.0 - b)]]));
            }
        }
    }
    best
}
