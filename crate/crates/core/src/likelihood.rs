//! Conditional intensities, the log-likelihood on `[0, T]`, and the local
//! asymptotic normality (LAN) statistics around a reference parameter.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::{ModelKind, ModelParams};
use crate::simulate::{simulate_thinning, DEFAULT_BURN_IN_FACTOR};
use crate::stream::EventStream;
use crate::window::{piecewise_integral, window_range};

/// A perturbation `(ξ, g)` of the parameters: `ξ ∈ ℝ^K` shifts the background
/// rates, `g` is a `K×K` matrix of grid functions (row-major over `(l, k)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    xi: Vec<f64>,
    g: Vec<GridFunction>,
}

impl Direction {
    pub fn new(xi: Vec<f64>, g: Vec<GridFunction>) -> Result<Self> {
        let k = xi.len();
        if k == 0 || g.len() != k * k {
            return Err(Error::InvalidInput(format!(
                "direction needs K = {k} rates and K² kernels, got {}",
                g.len()
            )));
        }
        for f in &g[1..] {
            g[0].check_same_grid(f)?;
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite direction".into()));
        }
        Ok(Self { xi, g })
    }

    pub fn zeros(dim: usize, support_end: f64, cells: usize) -> Self {
        Self {
            xi: vec![0.0; dim],
            g: vec![GridFunction::zeros(support_end, cells); dim * dim],
        }
    }

    /// `(ν, h)` viewed as a direction.
    pub fn from_params(params: &ModelParams) -> Self {
        Self {
            xi: params.nu().to_vec(),
            g: params.kernels().to_vec(),
        }
    }

    /// Direction with `ξ = 0` and a single nonzero kernel slot.
    pub fn single_kernel(dim: usize, l: usize, k: usize, g: GridFunction) -> Self {
        let mut kernels = vec![GridFunction::zeros(g.support_end(), g.cells()); dim * dim];
        kernels[l * dim + k] = g;
        Self {
            xi: vec![0.0; dim],
            g: kernels,
        }
    }

    pub fn unit_rate(dim: usize, k: usize, support_end: f64, cells: usize) -> Self {
        let mut d = Self::zeros(dim, support_end, cells);
        d.xi[k] = 1.0;
        d
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    #[inline]
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn xi_mut(&mut self) -> &mut [f64] {
        &mut self.xi
    }

    #[inline]
    pub fn g(&self, l: usize, k: usize) -> &GridFunction {
        &self.g[l * self.dim() + k]
    }

    pub fn g_mut(&mut self, l: usize, k: usize) -> &mut GridFunction {
        let dim = self.dim();
        &mut self.g[l * dim + k]
    }

    pub fn kernels(&self) -> &[GridFunction] {
        &self.g
    }

    #[inline]
    pub fn support_end(&self) -> f64 {
        self.g[0].support_end()
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.g[0].cells()
    }

    pub fn is_zero(&self) -> bool {
        self.xi.iter().all(|&v| v == 0.0) && self.g.iter().all(|f| f.values().iter().all(|&v| v == 0.0))
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &Direction) -> Result<Direction> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput("direction dimension mismatch".into()));
        }
        Ok(Direction {
            xi: self.xi.iter().zip(&other.xi).map(|(a, b)| a + factor * b).collect(),
            g: self
                .g
                .iter()
                .zip(&other.g)
                .map(|(a, b)| a.axpy(factor, b))
                .collect::<Result<_>>()?,
        })
    }

    pub fn scaled(&self, factor: f64) -> Direction {
        Direction {
            xi: self.xi.iter().map(|v| v * factor).collect(),
            g: self.g.iter().map(|f| f.scaled(factor)).collect(),
        }
    }

    /// `⟨·,·⟩₂ = ξ·ξ' + Σ ∫ g g'`, exact even across grids.
    pub fn inner_l2(&self, other: &Direction) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput("direction dimension mismatch".into()));
        }
        let mut total: f64 = self.xi.iter().zip(&other.xi).map(|(a, b)| a * b).sum();
        for (a, b) in self.g.iter().zip(&other.g) {
            total += a.inner(b)?;
        }
        Ok(total)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>() + self.g.iter().map(GridFunction::l2_norm_sq).sum::<f64>()
    }

    pub fn sup_norm(&self) -> f64 {
        self.xi
            .iter()
            .map(|v| v.abs())
            .chain(self.g.iter().map(GridFunction::sup_norm))
            .fold(0.0, f64::max)
    }

    /// `λ̃_t^k(ξ, g) = ξ_k + Σ_l Σ_{u ∈ [t−A, t), mark l} g_{l,k}(t − u)`.
    pub fn tilde_intensity(&self, stream: &EventStream, t: f64, k: usize) -> f64 {
        let a = self.support_end();
        let mut value = self.xi[k];
        for i in window_range(stream, t, a) {
            value += self.g(stream.marks()[i], k).eval(t - stream.times()[i]);
        }
        value
    }

    /// Exact `∫_0^T λ̃_t^k dt`.
    pub fn tilde_compensator(&self, stream: &EventStream, k: usize, horizon: f64) -> f64 {
        let a = self.support_end();
        let mut total = self.xi[k] * horizon;
        let lo = stream.lower_bound(-a);
        let hi = stream.lower_bound(horizon);
        for i in lo..hi {
            let u = stream.times()[i];
            total += self.g(stream.marks()[i], k).integral_between(u.max(0.0) - u, horizon - u);
        }
        total
    }

    /// Flattened coordinates `(ξ, g_{0,0} cells, g_{0,1} cells, …)`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = self.xi.clone();
        for f in &self.g {
            out.extend_from_slice(f.values());
        }
        out
    }

    /// Inverse of [`Direction::coefficients`].
    pub fn from_coefficients(dim: usize, support_end: f64, cells: usize, coefficients: &[f64]) -> Result<Self> {
        if coefficients.len() != dim + dim * dim * cells {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                dim + dim * dim * cells,
                coefficients.len()
            )));
        }
        let g = coefficients[dim..]
            .chunks(cells)
            .map(|c| GridFunction::new(support_end, c.to_vec()))
            .collect::<Result<_>>()?;
        Direction::new(coefficients[..dim].to_vec(), g)
    }

    pub fn to_params(&self, kind: ModelKind) -> Result<ModelParams> {
        ModelParams::new(self.xi.clone(), self.g.clone(), kind)
    }
}

/// Intensity before the ReLU clamp.
fn raw_intensity_at_index(params: &ModelParams, stream: &EventStream, t: f64, end: usize, k: usize) -> f64 {
    let a = params.support_end();
    let lo = stream.lower_bound(t - a);
    let mut value = params.nu()[k];
    for i in lo..end {
        value += params.kernel(stream.marks()[i], k).eval(t - stream.times()[i]);
    }
    value
}

#[inline]
fn link(params: &ModelParams, raw: f64) -> f64 {
    match params.kind() {
        ModelKind::Linear => raw,
        ModelKind::Relu => raw.max(0.0),
    }
}

/// `λ_t^k(f)`: `ν_k + Σ_l Σ_{u ∈ [t−A, t)} h_{l,k}(t − u)`, clamped at zero for
/// the ReLU model.
pub fn intensity_at(params: &ModelParams, stream: &EventStream, t: f64, k: usize) -> Result<f64> {
    let a = params.support_end();
    if k >= params.dim() {
        return Err(Error::InvalidInput(format!("mark {} out of range", k + 1)));
    }
    if t > stream.horizon() || t - a < stream.window_start() - 1e-12 {
        return Err(Error::InvalidInput(format!(
            "t = {t} needs history on [{}, {t}) inside the observed window [{}, {}]",
            t - a,
            stream.window_start(),
            stream.horizon()
        )));
    }
    let end = stream.lower_bound(t);
    Ok(link(params, raw_intensity_at_index(params, stream, t, end, k)))
}

/// Intensities of every event in `]0, T]` at its own arrival time, in stream
/// order, paired with the event mark.
fn event_intensities<'a>(
    params: &'a ModelParams,
    stream: &'a EventStream,
    horizon: f64,
) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    let first = stream.upper_bound(0.0);
    let last = stream.upper_bound(horizon);
    (first..last).map(move |i| {
        let t = stream.times()[i];
        let k = stream.marks()[i];
        (i, k, link(params, raw_intensity_at_index(params, stream, t, i, k)))
    })
}

/// Whether the unclamped intensity may dip below zero on this path, which is
/// only possible for ReLU models with negative kernel values.
fn may_clamp(params: &ModelParams) -> bool {
    params.kind() == ModelKind::Relu && params.kernels().iter().any(|g| g.values().iter().any(|&v| v < 0.0))
}

/// Exact `∫_0^T λ_t^k(f) dt` for every mark.
pub fn compensators(params: &ModelParams, stream: &EventStream, horizon: f64) -> Vec<f64> {
    let dim = params.dim();
    if may_clamp(params) {
        let grid = [(params.support_end(), params.cells())];
        return (0..dim)
            .map(|k| {
                piecewise_integral(stream, 0.0, horizon, &grid, |t| {
                    let end = stream.lower_bound(t);
                    raw_intensity_at_index(params, stream, t, end, k).max(0.0)
                })
            })
            .collect();
    }
    Direction::from_params(params).compensators(stream, horizon)
}

impl Direction {
    fn compensators(&self, stream: &EventStream, horizon: f64) -> Vec<f64> {
        (0..self.dim()).map(|k| self.tilde_compensator(stream, k, horizon)).collect()
    }
}

/// `L_T(f) = Σ_k [Σ_{events k ∈ ]0,T]} log λ^k − ∫_0^T λ^k dt]`, conditional on
/// the history in `[−A, 0]`. Returns `−∞` when some event has a nonpositive
/// intensity.
pub fn log_likelihood(params: &ModelParams, stream: &EventStream, horizon: f64) -> f64 {
    let mut total = 0.0;
    for (_, _, lambda) in event_intensities(params, stream, horizon) {
        if !(lambda > 0.0) {
            return f64::NEG_INFINITY;
        }
        total += lambda.ln();
    }
    total - compensators(params, stream, horizon).iter().sum::<f64>()
}

/// `∂L_T/∂ν_k = Σ_{events k} 1/λ^k − |{t ∈ [0,T] : λ^k_t > 0}|`.
pub fn grad_loglik_nu(params: &ModelParams, stream: &EventStream, horizon: f64) -> Result<Vec<f64>> {
    let dim = params.dim();
    let mut grad = vec![0.0; dim];
    for (i, k, lambda) in event_intensities(params, stream, horizon) {
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveIntensity(stream.times()[i]));
        }
        grad[k] += 1.0 / lambda;
    }
    if may_clamp(params) {
        let grid = [(params.support_end(), params.cells())];
        for (k, g) in grad.iter_mut().enumerate() {
            *g -= piecewise_integral(stream, 0.0, horizon, &grid, |t| {
                let end = stream.lower_bound(t);
                if raw_intensity_at_index(params, stream, t, end, k) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            });
        }
    } else {
        grad.iter_mut().for_each(|g| *g -= horizon);
    }
    Ok(grad)
}

/// `W_T(ξ, g) = T^{-1/2} Σ_k ∫_0^T λ̃^k/λ^k(f⁰) (dN^k − λ^k(f⁰) dt)`.
pub fn w_statistic(direction: &Direction, f0: &ModelParams, stream: &EventStream, horizon: f64) -> Result<f64> {
    check_compatible(direction, f0)?;
    let mut total = 0.0;
    for (i, k, lambda) in event_intensities(f0, stream, horizon) {
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveIntensity(stream.times()[i]));
        }
        total += direction.tilde_intensity(stream, stream.times()[i], k) / lambda;
    }
    total -= direction.compensators(stream, horizon).iter().sum::<f64>();
    Ok(total / horizon.sqrt())
}

/// Observed second-order LAN term `Σ_k Σ_{events k} (λ̃^k/λ^k)²`; its mean is
/// `T ‖(ξ, g)‖²_L`.
pub fn lan_observed_quadratic(
    direction: &Direction,
    f0: &ModelParams,
    stream: &EventStream,
    horizon: f64,
) -> Result<f64> {
    check_compatible(direction, f0)?;
    let mut total = 0.0;
    for (i, k, lambda) in event_intensities(f0, stream, horizon) {
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveIntensity(stream.times()[i]));
        }
        let r = direction.tilde_intensity(stream, stream.times()[i], k) / lambda;
        total += r * r;
    }
    Ok(total)
}

fn check_compatible(direction: &Direction, f0: &ModelParams) -> Result<()> {
    if direction.dim() != f0.dim() {
        return Err(Error::InvalidInput("direction and model dimensions differ".into()));
    }
    if direction.support_end() != f0.support_end() {
        return Err(Error::GridMismatch("direction and model supports differ".into()));
    }
    Ok(())
}

/// Monte Carlo budget for ergodic estimates on a simulated stationary path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    /// Number of batch-means windows.
    pub n_windows: usize,
    /// Length of the simulated path.
    pub horizon: f64,
    pub seed: u64,
}

/// Gram matrix of LAN inner products with batch-means standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LanProducts {
    pub gram: DMatrix<f64>,
    pub mc_se: DMatrix<f64>,
    /// Gram matrix of each batch window.
    pub batches: Vec<DMatrix<f64>>,
}

/// `⟨d_i, d_j⟩_L = Σ_k E₀[λ̃^k(d_i) λ̃^k(d_j) / λ^k(f⁰)]` for every pair, as the
/// time average over `[0, T]` of the observed path. The integral is exact on
/// the piecewise-constant pieces; standard errors come from `n_windows`
/// batch means.
pub fn lan_gram_on_path(
    directions: &[Direction],
    f0: &ModelParams,
    stream: &EventStream,
    horizon: f64,
    n_windows: usize,
) -> Result<LanProducts> {
    if n_windows < 2 {
        return Err(Error::InvalidInput("need at least two batch windows".into()));
    }
    for d in directions {
        check_compatible(d, f0)?;
    }
    let dim = f0.dim();
    let nd = directions.len();
    let a = f0.support_end();
    let mut grids = vec![(a, f0.cells())];
    for d in directions {
        if !grids.contains(&(a, d.cells())) {
            grids.push((a, d.cells()));
        }
    }

    let batch_len = horizon / n_windows as f64;
    let mut batches = Vec::with_capacity(n_windows);
    let mut tilde = vec![0.0; nd];
    let mut acc = vec![0.0; nd * nd];
    for b in 0..n_windows {
        let (t0, t1) = (b as f64 * batch_len, (b + 1) as f64 * batch_len);
        acc.iter_mut().for_each(|v| *v = 0.0);
        let points = crate::window::breakpoints(stream, t0, t1, &grids);
        for w in points.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let t = 0.5 * (w[0] + w[1]);
            let range = window_range(stream, t, a);
            for k in 0..dim {
                let mut lambda = f0.nu()[k];
                for i in range.clone() {
                    lambda += f0.kernel(stream.marks()[i], k).eval(t - stream.times()[i]);
                }
                if !(lambda > 0.0) {
                    return Err(Error::NonPositiveIntensity(t));
                }
                for (slot, d) in tilde.iter_mut().zip(directions) {
                    let mut v = d.xi()[k];
                    for i in range.clone() {
                        v += d.g(stream.marks()[i], k).eval(t - stream.times()[i]);
                    }
                    *slot = v;
                }
                let weight = len / lambda;
                for i in 0..nd {
                    let wi = weight * tilde[i];
                    for j in i..nd {
                        acc[i * nd + j] += wi * tilde[j];
                    }
                }
            }
        }
        batches.push(acc.iter().map(|v| v / batch_len).collect::<Vec<_>>());
    }

    let mut gram = DMatrix::zeros(nd, nd);
    let mut se = DMatrix::zeros(nd, nd);
    let nb = n_windows as f64;
    let batch_grams = batches
        .iter()
        .map(|b| DMatrix::from_fn(nd, nd, |i, j| b[i.min(j) * nd + i.max(j)]))
        .collect();
    for i in 0..nd {
        for j in i..nd {
            let idx = i * nd + j;
            let mean = batches.iter().map(|b| b[idx]).sum::<f64>() / nb;
            let var = batches.iter().map(|b| (b[idx] - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            let err = (var / nb).sqrt();
            gram[(i, j)] = mean;
            gram[(j, i)] = mean;
            se[(i, j)] = err;
            se[(j, i)] = err;
        }
    }
    Ok(LanProducts {
        gram,
        mc_se: se,
        batches: batch_grams,
    })
}

/// Simulates a stationary path of `f⁰` under `budget` for ergodic estimates.
pub fn simulate_for_budget(f0: &ModelParams, budget: &McBudget) -> Result<EventStream> {
    simulate_thinning(
        f0,
        budget.horizon,
        DEFAULT_BURN_IN_FACTOR * f0.support_end(),
        budget.seed,
    )
}

pub fn lan_gram(directions: &[Direction], f0: &ModelParams, budget: &McBudget) -> Result<LanProducts> {
    let stream = simulate_for_budget(f0, budget)?;
    lan_gram_on_path(directions, f0, &stream, budget.horizon, budget.n_windows)
}

/// `(⟨d₁, d₂⟩_L, standard error)`.
pub fn lan_inner_product(d1: &Direction, d2: &Direction, f0: &ModelParams, budget: &McBudget) -> Result<(f64, f64)> {
    let products = lan_gram(&[d1.clone(), d2.clone()], f0, budget)?;
    Ok((products.gram[(0, 1)], products.mc_se[(0, 1)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(times: &[f64], horizon: f64) -> EventStream {
        EventStream::new(times.iter().map(|&t| (t, 0)).collect(), 1, -1.0, horizon).unwrap()
    }

    fn box_model(nu: f64, height: f64, cells: usize, kind: ModelKind) -> ModelParams {
        ModelParams::new(vec![nu], vec![GridFunction::constant(1.0, cells, height)], kind).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let p = box_model(0.5, 1.0, 4, ModelKind::Linear);
        let s = single(&[0.2, 0.5], 1.0);
        assert_eq!(intensity_at(&p, &s, 0.8, 0).unwrap(), 2.5);

        let poisson = ModelParams::poisson(vec![0.7], 1.0, 3);
        for t in [0.0, 0.3, 0.99] {
            assert_eq!(intensity_at(&poisson, &s, t, 0).unwrap(), 0.7);
        }

        let relu = box_model(0.5, -1.0, 2, ModelKind::Relu);
        let s = single(&[0.2], 1.0);
        assert_eq!(intensity_at(&relu, &s, 0.8, 0).unwrap(), 0.0);
    }

    #[test]
    fn intensity_outside_window_is_an_error() {
        let p = ModelParams::poisson(vec![1.0], 1.0, 2);
        let s = single(&[0.2], 1.0);
        assert!(intensity_at(&p, &s, 1.5, 0).is_err());
        assert!(intensity_at(&p, &s, -0.5, 0).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let p = ModelParams::poisson(vec![2.0], 1.0, 2);
        let s = single(&[0.3, 0.7], 1.0);
        let want = 2.0 * 2f64.ln() - 2.0;
        assert!((log_likelihood(&p, &s, 1.0) - want).abs() < 1e-12);
        assert!((log_likelihood(&p, &single(&[], 1.0), 1.0) + 2.0).abs() < 1e-12);

        let p = box_model(1.0, 0.5, 4, ModelKind::Linear);
        let got = log_likelihood(&p, &single(&[0.3], 1.0), 1.0);
        assert!((got + 1.35).abs() < 1e-12, "{got}");
    }

    #[test]
    fn likelihood_sentinel_for_zero_intensity() {
        let relu = box_model(0.5, -1.0, 2, ModelKind::Relu);
        let s = single(&[0.2, 0.8], 1.0);
        assert_eq!(log_likelihood(&relu, &s, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn relu_compensator_matches_clamped_integral() {
        // One event at 0.2 suppresses the rate to zero on (0.2, 1.2].
        let relu = box_model(0.5, -1.0, 2, ModelKind::Relu);
        let s = single(&[0.2], 2.0);
        let comp = compensators(&relu, &s, 2.0)[0];
        assert!((comp - 0.5 * 1.0).abs() < 1e-12, "{comp}");
    }

    #[test]
    fn gradient_examples() {
        let p = ModelParams::poisson(vec![2.0], 1.0, 2);
        let g = grad_loglik_nu(&p, &single(&[0.3, 0.7], 1.0), 1.0).unwrap();
        assert!(g[0].abs() < 1e-12);
        let g = grad_loglik_nu(&p, &single(&[], 1.0), 1.0).unwrap();
        assert_eq!(g[0], -1.0);
    }

    #[test]
    fn w_statistic_examples() {
        let p = ModelParams::poisson(vec![1.0], 1.0, 2);
        let s = single(&[0.4], 1.0);
        let zero = Direction::zeros(1, 1.0, 2);
        assert_eq!(w_statistic(&zero, &p, &s, 1.0).unwrap(), 0.0);
        let d = Direction::unit_rate(1, 0, 1.0, 2);
        assert!(w_statistic(&d, &p, &s, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn direction_algebra() {
        let d = Direction::new(vec![1.0], vec![GridFunction::new(1.0, vec![1.0, 3.0]).unwrap()]).unwrap();
        assert_eq!(d.l2_norm_sq(), 1.0 + 0.5 + 4.5);
        assert_eq!(d.inner_l2(&d).unwrap(), d.l2_norm_sq());
        let z = d.axpy(-1.0, &d).unwrap();
        assert!(z.is_zero());
        assert!(Direction::new(vec![1.0, 2.0], vec![GridFunction::zeros(1.0, 1)]).is_err());
    }

    #[test]
    fn lan_gram_is_exactly_symmetric() {
        let f0 = box_model(1.0, 0.4, 4, ModelKind::Linear);
        let d1 = Direction::new(vec![0.3], vec![GridFunction::new(1.0, vec![1.0, -0.5, 0.2, 0.0]).unwrap()]).unwrap();
        let d2 = Direction::new(vec![-1.0], vec![GridFunction::new(1.0, vec![0.1, 0.5]).unwrap()]).unwrap();
        let budget = McBudget {
            n_windows: 5,
            horizon: 200.0,
            seed: 3,
        };
        let (a, _) = lan_inner_product(&d1, &d2, &f0, &budget).unwrap();
        let (b, _) = lan_inner_product(&d2, &d1, &f0, &budget).unwrap();
        assert_eq!(a, b);
        let zero = Direction::zeros(1, 1.0, 4);
        let (z, se) = lan_inner_product(&zero, &zero, &f0, &budget).unwrap();
        assert_eq!((z, se), (0.0, 0.0));
    }
}
