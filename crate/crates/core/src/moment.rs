//! Palm first-moment density of a stationary linear Hawkes process.
//!
//! The reduced covariance density `Υ` solves, for `t > 0`,
//! `Υ(t) = hᵀ(t) D(μ) + ∫_0^A hᵀ(s) Υ(t − s) ds` with `Υ(−t) = Υ(t)ᵀ`.
//! It is discretised by cell averages on a grid of width `δ = A/m`; with
//! piecewise-constant `h` and `Υ`, the double average of the convolution over
//! a pair of cells is exactly `(δ/2)(Ῡ_{i−c−1} + Ῡ_{i−c})`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{spectral_radius, stationary_rates, ModelKind, ModelParams};

const MAX_SWEEPS: usize = 20_000;
const MAX_CELLS: usize = 1 << 22;
/// Relative mass allowed in the last window of width `A` before the grid is
/// extended.
pub const TAIL_TOLERANCE: f64 = 1e-6;

/// Cell averages of `Υ` on `[0, Lδ]`, zero beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentDensity {
    dim: usize,
    cell_width: f64,
    mu: Vec<f64>,
    /// `values[(i * K + a) * K + b] = Ῡ_{a,b}` on cell `i`.
    values: Vec<f64>,
}

impl MomentDensity {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    /// Number of cells on the positive half-line.
    #[inline]
    pub fn cells(&self) -> usize {
        self.values.len() / (self.dim * self.dim)
    }

    /// Extent of the computed support, `Lδ`.
    pub fn reach(&self) -> f64 {
        self.cells() as f64 * self.cell_width
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    #[inline]
    fn cell(&self, i: usize, a: usize, b: usize) -> f64 {
        self.values[(i * self.dim + a) * self.dim + b]
    }

    /// `Υ_{a,b}(t)` for any real `t`.
    pub fn upsilon(&self, a: usize, b: usize, t: f64) -> f64 {
        let (a, b, t) = if t < 0.0 { (b, a, -t) } else { (a, b, t) };
        let i = (t / self.cell_width) as usize;
        if i >= self.cells() {
            0.0
        } else {
            self.cell(i, a, b)
        }
    }

    /// Density at lag `t` of mark-`k` points given a mark-`l` point at the
    /// origin (the atom at the origin excluded): `μ_k + Υ_{k,l}(t)/μ_l`.
    pub fn palm_density(&self, l: usize, k: usize, t: f64) -> f64 {
        self.mu[k] + self.upsilon(k, l, t) / self.mu[l]
    }

    /// `sup_t m_{l,k}(t)`.
    pub fn palm_density_sup(&self, l: usize, k: usize) -> f64 {
        let extreme = (0..self.cells())
            .flat_map(|i| [self.cell(i, k, l), self.cell(i, l, k)])
            .fold(0.0f64, f64::max);
        self.mu[k] + extreme / self.mu[l]
    }
}

/// Solves for `Υ` on a grid of `cells` cells per support length `A`.
///
/// The grid starts at `4A` and doubles until the last window of width `A`
/// carries less than [`TAIL_TOLERANCE`] of the peak value.
pub fn solve_moment_density(f0: &ModelParams, cells: usize) -> Result<MomentDensity> {
    if f0.kind() != ModelKind::Linear {
        return Err(Error::InvalidInput("the moment density needs the linear model".into()));
    }
    if cells == 0 {
        return Err(Error::InvalidInput("grid needs at least one cell".into()));
    }
    f0.validate()?;
    let r = spectral_radius(&f0.rho())?;
    if r >= 1.0 {
        return Err(Error::NotStationary(r));
    }
    let dim = f0.dim();
    let mu = stationary_rates(f0)?;
    let delta = f0.support_end() / cells as f64;

    // ht[c][(a, b)] = h_{b,a} on cell c, i.e. hᵀ.
    let ht: Vec<Vec<f64>> = (0..cells)
        .map(|c| {
            let mut m = vec![0.0; dim * dim];
            for a in 0..dim {
                for b in 0..dim {
                    let h = f0.kernel(b, a);
                    let x0 = c as f64 * delta;
                    m[a * dim + b] = h.integral_between(x0, x0 + delta) / delta;
                }
            }
            m
        })
        .collect();

    let mut len = 4 * cells;
    let mut values = vec![0.0; len * dim * dim];
    loop {
        sweep_until_converged(&ht, &mu, dim, delta, len, &mut values)?;
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tail = values[(len - cells) * dim * dim..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 || tail <= TAIL_TOLERANCE * peak {
            break;
        }
        if 2 * len > MAX_CELLS {
            return Err(Error::Numerical(format!(
                "moment density tail still {tail:.3e} after {len} cells"
            )));
        }
        len *= 2;
        values.resize(len * dim * dim, 0.0);
    }
    Ok(MomentDensity {
        dim,
        cell_width: delta,
        mu,
        values,
    })
}

fn sweep_until_converged(
    ht: &[Vec<f64>],
    mu: &[f64],
    dim: usize,
    delta: f64,
    len: usize,
    values: &mut [f64],
) -> Result<()> {
    let kk = dim * dim;
    let cells = ht.len();
    let mut next = vec![0.0; kk];
    let read = |values: &[f64], n: isize, a: usize, b: usize| -> f64 {
        if n >= 0 {
            let n = n as usize;
            if n < len {
                values[n * kk + a * dim + b]
            } else {
                0.0
            }
        } else {
            let n = (-n - 1) as usize;
            if n < len {
                values[n * kk + b * dim + a]
            } else {
                0.0
            }
        }
    };
    for _ in 0..MAX_SWEEPS {
        let mut change = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..len {
            for a in 0..dim {
                for b in 0..dim {
                    let mut v = if i < cells { ht[i][a * dim + b] * mu[b] } else { 0.0 };
                    for (c, h) in ht.iter().enumerate() {
                        let n = i as isize - c as isize;
                        for j in 0..dim {
                            let w = h[a * dim + j];
                            if w != 0.0 {
                                v += 0.5 * delta * w * (read(values, n - 1, j, b) + read(values, n, j, b));
                            }
                        }
                    }
                    next[a * dim + b] = v;
                }
            }
            let slot = &mut values[i * kk..(i + 1) * kk];
            for (old, new) in slot.iter_mut().zip(&next) {
                change = change.max((new - *old).abs());
                scale = scale.max(new.abs());
                *old = *new;
            }
        }
        if change <= 1e-13 * scale.max(1e-300) {
            return Ok(());
        }
        if !change.is_finite() {
            break;
        }
    }
    Err(Error::Numerical("moment density iteration did not converge".into()))
}

/// Empirical Palm density `m_{l,k}` on `bins` equal bins of `]0, reach]`
/// from pair counts of a stationary path on `[0, T]`, with batch-means
/// standard errors over `n_batches` consecutive blocks of anchors.
pub fn empirical_palm_density(
    stream: &crate::stream::EventStream,
    l: usize,
    k: usize,
    reach: f64,
    bins: usize,
    horizon: f64,
    n_batches: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if bins == 0 || n_batches < 2 || !(reach > 0.0) || reach >= horizon {
        return Err(Error::InvalidInput("invalid pair-count histogram settings".into()));
    }
    let width = reach / bins as f64;
    let times = stream.times();
    let marks = stream.marks();
    let span = horizon - reach;
    let mut counts = vec![vec![0.0; bins]; n_batches];
    let mut anchors = vec![0usize; n_batches];
    for (i, (&t, &m)) in times.iter().zip(marks).enumerate() {
        if m != l || t < 0.0 || t > span {
            continue;
        }
        let batch = (((t / span) * n_batches as f64) as usize).min(n_batches - 1);
        anchors[batch] += 1;
        for (&s, &mk) in times[i + 1..].iter().zip(&marks[i + 1..]) {
            let lag = s - t;
            if lag > reach {
                break;
            }
            if mk == k && lag > 0.0 {
                let bin = ((lag / width) as usize).min(bins - 1);
                counts[batch][bin] += 1.0;
            }
        }
    }
    let means: Vec<Vec<f64>> = counts
        .iter()
        .zip(&anchors)
        .map(|(c, &n)| c.iter().map(|v| v / (n.max(1) as f64 * width)).collect())
        .collect();
    let total: usize = anchors.iter().sum();
    if total == 0 {
        return Err(Error::TooFewAnchors {
            mark: l + 1,
            count: 0,
            required: 1,
        });
    }
    let nb = n_batches as f64;
    let mut estimate = vec![0.0; bins];
    let mut se = vec![0.0; bins];
    for b in 0..bins {
        let pooled: f64 = counts.iter().map(|c| c[b]).sum::<f64>() / (total as f64 * width);
        let avg = means.iter().map(|m| m[b]).sum::<f64>() / nb;
        let var = means.iter().map(|m| (m[b] - avg).powi(2)).sum::<f64>() / (nb - 1.0);
        estimate[b] = pooled;
        se[b] = (var / nb).sqrt();
    }
    Ok((estimate, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridFunction;

    #[test]
    fn poisson_has_flat_density() {
        let f0 = ModelParams::poisson(vec![1.5, 0.5], 1.0, 4);
        let m = solve_moment_density(&f0, 8).unwrap();
        for t in [-0.7, 0.0, 0.3, 2.0] {
            assert_eq!(m.upsilon(0, 1, t), 0.0);
            assert_eq!(m.palm_density(0, 1, t), 0.5);
        }
    }

    #[test]
    fn box_kernel_plateau() {
        // ν = 1, h = 0.5 on [0, 1]: Υ ≡ 2 on ]0, 1], total mass μ/(1−ρ)² − μ = 6.
        let f0 = ModelParams::new(
            vec![1.0],
            vec![GridFunction::constant(1.0, 1, 0.5)],
            ModelKind::Linear,
        )
        .unwrap();
        let m = solve_moment_density(&f0, 64).unwrap();
        for i in 0..64 {
            let t = (i as f64 + 0.5) / 64.0;
            assert!((m.upsilon(0, 0, t) - 2.0).abs() < 1e-9, "{t}: {}", m.upsilon(0, 0, t));
        }
        let delta = m.cell_width();
        let mass: f64 = 2.0 * (0..m.cells()).map(|i| m.upsilon(0, 0, (i as f64 + 0.5) * delta)).sum::<f64>() * delta;
        assert!((mass - 6.0).abs() < 1e-4, "{mass}");
        assert!((m.palm_density(0, 0, 0.5) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn one_way_excitation() {
        // Only mark 0 excites mark 1: Palm density of mark 1 after a mark-0
        // point is μ₁ + h₀₁, and mark 0 stays Poisson.
        let h = vec![
            GridFunction::zeros(1.0, 2),
            GridFunction::new(1.0, vec![0.6, 0.2]).unwrap(),
            GridFunction::zeros(1.0, 2),
            GridFunction::zeros(1.0, 2),
        ];
        let f0 = ModelParams::new(vec![1.0, 0.5], h, ModelKind::Linear).unwrap();
        let m = solve_moment_density(&f0, 2).unwrap();
        let mu1 = 0.5 + 0.4;
        assert!((m.palm_density(0, 1, 0.25) - (mu1 + 0.6)).abs() < 1e-12);
        assert!((m.palm_density(0, 1, 0.75) - (mu1 + 0.2)).abs() < 1e-12);
        assert!((m.palm_density(0, 0, 0.25) - 1.0).abs() < 1e-12);
        // Looking back from a mark-1 point, mark-0 points are over-represented.
        assert!((m.palm_density(1, 0, 0.25) - 1.0).abs() < 1e-12);
        assert!((m.palm_density(1, 0, -0.25) - (1.0 + 0.6 / mu1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_explosive_model() {
        let f0 = ModelParams::new(vec![1.0], vec![GridFunction::constant(1.0, 2, 1.5)], ModelKind::Linear).unwrap();
        assert!(solve_moment_density(&f0, 4).is_err());
    }
}
