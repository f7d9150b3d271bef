//! Renewal structure of finite-memory paths: renewal times, the restricted
//! window built from them, sliding-window counts and the stochastic distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::Direction;
use crate::model::ModelParams;
use crate::stream::EventStream;
use crate::window::piecewise_integral;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalDecomposition {
    /// Renewal times in `]0, T]`.
    pub taus: Vec<f64>,
    /// `[τ_n, χ_n]` for every renewal time but the last; their union is the
    /// restricted window.
    pub segments: Vec<Segment>,
}

impl RenewalDecomposition {
    pub fn restricted_window_length(&self) -> f64 {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.taus.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Scans left to right for events `t*` followed by a quiet stretch
/// `]t*, t*+A]`; each gives the renewal time `τ = t* + A`.
pub fn renewal_decomposition(stream: &EventStream, a: f64, horizon: f64) -> RenewalDecomposition {
    let times = stream.times();
    let mut taus = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let tau = renewal_point(t, a);
        if tau <= 0.0 || tau > horizon {
            continue;
        }
        let quiet = times.get(i + 1).is_none_or(|&next| next > tau);
        if quiet {
            taus.push(tau);
        }
    }
    let mut segments = Vec::with_capacity(taus.len().saturating_sub(1));
    for w in taus.windows(2) {
        let (tau, next_tau) = (w[0], w[1]);
        let first = stream.upper_bound(tau);
        let end = times.get(first + 1).map_or(next_tau, |&u2| u2.min(next_tau));
        segments.push(Segment { start: tau, end });
    }
    RenewalDecomposition { taus, segments }
}

/// `t* + A`, nudged by a few ulps so that `τ − A` recovers `t*` exactly in
/// floating point whenever such a `τ` exists.
fn renewal_point(t: f64, a: f64) -> f64 {
    let guess = t + a;
    if guess - a == t {
        return guess;
    }
    let mut lo = guess;
    let mut hi = guess;
    for _ in 0..8 {
        lo = lo.next_down();
        hi = hi.next_up();
        if lo - a == t {
            return lo;
        }
        if hi - a == t {
            return hi;
        }
    }
    guess
}

/// `max_{t ∈ [0,T]} N([t−A, t[)`.
///
/// The count only jumps up right after an event, so the supremum over
/// `[0,T]` is the count at `0`, at `T`, or of `]u−A, u]` for an event
/// `u ∈ [0, T[`.
pub fn max_window_count(stream: &EventStream, a: f64, horizon: f64) -> usize {
    max_count_over(stream.times(), a, horizon)
}

/// Per-mark version of [`max_window_count`].
pub fn max_window_count_by_mark(stream: &EventStream, a: f64, horizon: f64) -> Vec<usize> {
    (0..stream.marks_count())
        .map(|k| {
            let times: Vec<f64> = stream.iter().filter(|&(_, m)| m == k).map(|(t, _)| t).collect();
            max_count_over(&times, a, horizon)
        })
        .collect()
}

fn max_count_over(times: &[f64], a: f64, horizon: f64) -> usize {
    let count_at = |t: f64| {
        let lo = times.partition_point(|&s| s < t - a);
        let hi = times.partition_point(|&s| s < t);
        hi - lo
    };
    let mut best = count_at(0.0).max(count_at(horizon));
    for &u in times {
        if (0.0..horizon).contains(&u) {
            let lo = times.partition_point(|&s| s <= u - a);
            let hi = times.partition_point(|&s| s <= u);
            best = best.max(hi - lo);
        }
    }
    best
}

/// `d_T(f, f')`: `(1/T) Σ_k Σ_n ∫_{τ_n}^{χ_n} λ̃_t^k(f_k − f'_k)² dt`, square
/// rooted. Integrated exactly over the piecewise-constant pieces.
pub fn stochastic_distance(
    f: &ModelParams,
    f_prime: &ModelParams,
    stream: &EventStream,
    decomposition: &RenewalDecomposition,
    horizon: f64,
) -> Result<f64> {
    if f.dim() != f_prime.dim() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    f.kernel(0, 0).check_same_grid(f_prime.kernel(0, 0))?;
    let diff = Direction::from_params(f).axpy(-1.0, &Direction::from_params(f_prime))?;
    let grid = [(diff.support_end(), diff.cells())];
    let mut total = 0.0;
    for seg in &decomposition.segments {
        total += piecewise_integral(stream, seg.start, seg.end, &grid, |t| {
            (0..diff.dim())
                .map(|k| {
                    let v = diff.tilde_intensity(stream, t, k);
                    v * v
                })
                .sum()
        });
    }
    Ok((total / horizon).sqrt())
}

/// Domination constant `η` with `d_T² ≤ η ‖f − f'‖₂²` for this path.
///
/// On `[τ_n, χ_n]` at most one event lies in the memory window, so
/// `λ̃² ≤ 2Δν² + 2Δh(·)²` there and each segment contributes at most
/// `2 max(1, χ_n − τ_n)` times the squared distance.
pub fn domination_constant(decomposition: &RenewalDecomposition, horizon: f64) -> f64 {
    2.0 / horizon
        * decomposition
            .segments
            .iter()
            .map(|s| s.len().max(1.0))
            .sum::<f64>()
}
