//! Helpers over the memory window `[t − A, t)` of a path.

use crate::stream::EventStream;

/// Index range of events in `[t − a, t)`.
#[inline]
pub(crate) fn window_range(stream: &EventStream, t: f64, a: f64) -> std::ops::Range<usize> {
    stream.lower_bound(t - a)..stream.lower_bound(t)
}

/// Exact `∫_{t0}^{t1} F(t) dt` for integrands built from grid functions of
/// the window: between consecutive breakpoints `u + cδ` the integrand is
/// constant, so it is evaluated once at each piece midpoint.
///
/// `grids` lists `(A, m)` for every grid the integrand reads.
pub(crate) fn piecewise_integral(
    stream: &EventStream,
    t0: f64,
    t1: f64,
    grids: &[(f64, usize)],
    mut integrand: impl FnMut(f64) -> f64,
) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let points = breakpoints(stream, t0, t1, grids);
    points
        .windows(2)
        .map(|w| {
            let len = w[1] - w[0];
            if len <= 0.0 {
                0.0
            } else {
                len * integrand(0.5 * (w[0] + w[1]))
            }
        })
        .sum()
}

/// Sorted breakpoints of window-driven piecewise-constant integrands in
/// `[t0, t1]`, endpoints included.
pub(crate) fn breakpoints(stream: &EventStream, t0: f64, t1: f64, grids: &[(f64, usize)]) -> Vec<f64> {
    let reach = grids.iter().map(|g| g.0).fold(0.0, f64::max);
    let lo = stream.lower_bound(t0 - reach);
    let hi = stream.lower_bound(t1);
    let mut points = vec![t0, t1];
    for &u in &stream.times()[lo..hi] {
        for &(a, m) in grids {
            let w = a / m as f64;
            for c in 0..=m {
                let p = u + c as f64 * w;
                if p > t0 && p < t1 {
                    points.push(p);
                }
            }
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_window_counts_exactly() {
        // N([t-1, t)) integrated over [0, 3] equals total overlap length.
        let s = EventStream::new(vec![(-0.5, 0), (0.4, 0), (2.7, 0)], 1, -1.0, 3.0).unwrap();
        let v = piecewise_integral(&s, 0.0, 3.0, &[(1.0, 1)], |t| window_range(&s, t, 1.0).len() as f64);
        let expected = 0.5 + 1.0 + 0.3;
        assert!((v - expected).abs() < 1e-12);
    }
}
