//! Non-uniform offset grid.
//!
//! Bin `n` of `N + 1` maps to a relative offset `W(n)`. The grid is dense
//! around zero and coarse towards `±2a`, so well-placed boxes get fine
//! corrections while badly placed ones can still move far:
//!
//! ```text
//! W(0)             = -2a
//! W(n), 1 <= n < N/2    =  c - c (a/c + 1)^((N - 2n) / (N - 2))
//! W(n), N/2 <= n <= N-1 = -c + c (a/c + 1)^((2n - N) / (N - 2))
//! W(N)             =  2a
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_A: f64 = 0.5;
pub const DEFAULT_C: f64 = 0.25;
pub const DEFAULT_BINS: usize = 32;

/// Grid parameters plus the precomputed knot table `W(0..=N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingSpec {
    a: f64,
    c: f64,
    n_bins: usize,
    knots: Vec<f64>,
}

/// The two knots adjacent to an offset and their interpolation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub n_left: usize,
    pub n_right: usize,
    pub w_left: f64,
    pub w_right: f64,
}

impl Default for WeightingSpec {
    fn default() -> Self {
        build_spec(DEFAULT_A, DEFAULT_C, DEFAULT_BINS).expect("default weighting is valid")
    }
}

pub fn build_spec(a: f64, c: f64, n_bins: usize) -> Result<WeightingSpec> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Configuration(format!("a must be positive, got {a}")));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Configuration(format!("c must be positive, got {c}")));
    }
    if n_bins < 4 || !n_bins.is_multiple_of(2) {
        return Err(Error::Configuration(format!("n_bins must be even and at least 4, got {n_bins}")));
    }
    let n = n_bins as f64;
    let base = a / c + 1.0;
    let knots: Vec<f64> = (0..=n_bins)
        .map(|i| {
            if i == 0 {
                -2.0 * a
            } else if i == n_bins {
                2.0 * a
            } else if 2 * i < n_bins {
                c - c * base.powf((n - 2.0 * i as f64) / (n - 2.0))
            } else {
                -c + c * base.powf((2.0 * i as f64 - n) / (n - 2.0))
            }
        })
        .collect();
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Configuration(format!(
            "knot table for a={a}, c={c}, N={n_bins} is not strictly increasing"
        )));
    }
    Ok(WeightingSpec { a, c, n_bins, knots })
}

impl WeightingSpec {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `N`; distributions have `N + 1` bins.
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_count(&self) -> usize {
        self.n_bins + 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn min_offset(&self) -> f64 {
        self.knots[0]
    }

    pub fn max_offset(&self) -> f64 {
        self.knots[self.n_bins]
    }
}

pub fn eval_w(spec: &WeightingSpec, n: usize) -> Result<f64> {
    spec.knots.get(n).copied().ok_or(Error::Index { index: n, len: spec.knots.len() })
}

/// Clamps `phi` into `[W(0), W(N)]` and locates its neighbouring knots.
///
/// A `phi` sitting exactly on knot `m < N` yields `(m, m + 1, 1, 0)`;
/// `phi = W(N)` yields `(N - 1, N, 0, 1)`.
pub fn bracket(spec: &WeightingSpec, phi: f64) -> Result<Bracket> {
    if !phi.is_finite() {
        return Err(Error::InvalidInput(format!("offset must be finite, got {phi}")));
    }
    let knots = &spec.knots;
    let n = spec.n_bins;
    let phi = phi.clamp(knots[0], knots[n]);
    if phi >= knots[n] {
        return Ok(Bracket { n_left: n - 1, n_right: n, w_left: 0.0, w_right: 1.0 });
    }
    // Last knot <= phi.
    let n_left = knots.partition_point(|&k| k <= phi) - 1;
    let n_right = n_left + 1;
    let w_right = (phi - knots[n_left]) / (knots[n_right] - knots[n_left]);
    Ok(Bracket { n_left, n_right, w_left: 1.0 - w_right, w_right })
}
