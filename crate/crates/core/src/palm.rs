//! Ergodic Palm estimators and the information operator `Γ = S*S`.
//!
//! With `μ` the stationary rates, `p_{l,k}` and `ζ_{l,j,k}` the Palm
//! quantities, `Γ(ξ, g) = (ξ', g')` reads
//!
//! ```text
//! ξ'_k     = ξ_k E[1/λ^k] + Σ_l μ_l ⟨g_{l,k}, p_{l,k}⟩₂
//! g'_{l,k} = μ_l (ξ_k p_{l,k} + g_{l,k} p_{l,k} + Σ_j ζ_{l,j,k}(g_{j,k}))
//! ```
//!
//! The second term of `ξ'_k` is `E[λ̃^k(0, g_k)/λ^k]` rewritten with Campbell's
//! formula, so both rows share one set of Palm estimates.
//!
//! Palm expectations are averages over observed mark-`l` anchors `t_i` of a
//! stationary path, evaluated at `t_i + x`. Each anchor contributes one
//! evaluation per grid cell at a uniformly drawn offset inside the cell, so
//! the estimates are unbiased for cell averages. Because `g` is piecewise
//! constant, `ζ_{l,j,k}` acts as an `m × m` matrix that is stored per batch
//! and reused by every fixed-point iteration.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::functionals::{eval_functional, FunctionalSpec};
use crate::grid::GridFunction;
use crate::likelihood::{lan_gram_on_path, w_statistic, Direction};
use crate::model::{stationary_rates, ModelKind, ModelParams};
use crate::moment::MomentDensity;
use crate::rng::{derive_seed, seeded_rng};
use crate::simulate::{simulate_thinning, DEFAULT_BURN_IN_FACTOR};
use crate::stream::EventStream;
use crate::window::{piecewise_integral, window_range};

/// Simulation budget for the Palm ensemble: `n_batches` independent
/// stationary paths of length `horizon / n_batches`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmBudget {
    pub horizon: f64,
    pub n_batches: usize,
    pub seed: u64,
    /// Fewer anchors than this for some mark is an error.
    #[serde(default = "default_min_anchors")]
    pub min_anchors: usize,
}

fn default_min_anchors() -> usize {
    200
}

impl PalmBudget {
    pub fn new(horizon: f64, n_batches: usize, seed: u64) -> Self {
        Self {
            horizon,
            n_batches,
            seed,
            min_anchors: default_min_anchors(),
        }
    }
}

/// Palm sufficient statistics of one batch (or of the pooled ensemble).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalmBatch {
    /// Anchor count per mark.
    pub anchors: Vec<usize>,
    /// `E[1/λ^k]` per mark.
    pub inv_lambda: Vec<f64>,
    /// `p_{l,k}` cell values, row-major over `(l, k)`.
    pub p: Vec<Vec<f64>>,
    /// `ζ_{l,j,k}` as row-major `m × m` matrices, indexed `(l·K + j)·K + k`.
    pub zeta: Vec<Vec<f64>>,
}

impl PalmBatch {
    fn zeros(dim: usize, cells: usize) -> Self {
        Self {
            anchors: vec![0; dim],
            inv_lambda: vec![0.0; dim],
            p: vec![vec![0.0; cells]; dim * dim],
            zeta: vec![vec![0.0; cells * cells]; dim * dim * dim],
        }
    }
}

/// Ergodic Palm estimates for `f⁰` on a grid of `m` cells over `[0, A]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalmEstimates {
    dim: usize,
    support_end: f64,
    cells: usize,
    mu: Vec<f64>,
    mean: PalmBatch,
    batches: Vec<PalmBatch>,
}

impl PalmEstimates {
    /// Analytic values for a homogeneous Poisson `f⁰`: `p ≡ 1/ν_k`,
    /// `ζ_{l,j,k}(g) ≡ (ν_j/ν_k) ∫g`, `E[1/λ^k] = 1/ν_k`, `μ = ν`.
    pub fn poisson(nu: &[f64], support_end: f64, cells: usize) -> Result<Self> {
        if nu.is_empty() || nu.iter().any(|&v| !(v > 0.0)) || cells == 0 {
            return Err(Error::InvalidInput("Poisson Palm values need positive rates".into()));
        }
        let dim = nu.len();
        let delta = support_end / cells as f64;
        let mut mean = PalmBatch::zeros(dim, cells);
        for k in 0..dim {
            mean.inv_lambda[k] = 1.0 / nu[k];
            for l in 0..dim {
                mean.p[l * dim + k] = vec![1.0 / nu[k]; cells];
                for j in 0..dim {
                    mean.zeta[(l * dim + j) * dim + k] = vec![nu[j] / nu[k] * delta; cells * cells];
                }
            }
        }
        Ok(Self {
            dim,
            support_end,
            cells,
            mu: nu.to_vec(),
            mean,
            batches: Vec::new(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn pooled(&self) -> &PalmBatch {
        &self.mean
    }

    pub fn batches(&self) -> &[PalmBatch] {
        &self.batches
    }

    pub fn anchors(&self) -> &[usize] {
        &self.mean.anchors
    }

    pub fn p(&self, l: usize, k: usize) -> GridFunction {
        GridFunction::new(self.support_end, self.mean.p[l * self.dim + k].clone()).expect("finite Palm estimate")
    }

    /// Batch-means standard error of `p_{l,k}`, cell by cell.
    pub fn p_se(&self, l: usize, k: usize) -> GridFunction {
        let values = (0..self.cells)
            .map(|a| batch_se(self.batches.iter().map(|b| b.p[l * self.dim + k][a])))
            .collect();
        GridFunction::new(self.support_end, values).expect("finite standard error")
    }

    pub fn inv_lambda(&self, k: usize) -> f64 {
        self.mean.inv_lambda[k]
    }

    pub fn inv_lambda_se(&self, k: usize) -> f64 {
        batch_se(self.batches.iter().map(|b| b.inv_lambda[k]))
    }

    pub fn zeta_matrix(&self, l: usize, j: usize, k: usize) -> &[f64] {
        &self.mean.zeta[(l * self.dim + j) * self.dim + k]
    }

    fn check_grid(&self, g: &GridFunction) -> Result<()> {
        if g.cells() != self.cells || g.support_end() != self.support_end {
            return Err(Error::GridMismatch(format!(
                "function on {} cells over [0, {}] against a Palm ensemble on {} cells over [0, {}]",
                g.cells(),
                g.support_end(),
                self.cells,
                self.support_end
            )));
        }
        Ok(())
    }

    fn check_direction(&self, d: &Direction) -> Result<()> {
        if d.dim() != self.dim {
            return Err(Error::InvalidInput("direction and Palm ensemble dimensions differ".into()));
        }
        self.check_grid(&d.kernels()[0])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Cache key: SHA-256 of the model JSON, the budget and the grid.
    pub fn cache_key(f0: &ModelParams, budget: &PalmBudget, cells: usize) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(f0.to_json()?.as_bytes());
        hasher.update(serde_json::to_string(budget)?.as_bytes());
        hasher.update(cells.to_le_bytes());
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Reads `palm_<key>.json` from `dir` or estimates and stores it.
    pub fn load_or_estimate(f0: &ModelParams, budget: &PalmBudget, cells: usize, dir: &Path) -> Result<Self> {
        let key = Self::cache_key(f0, budget, cells)?;
        let path = dir.join(format!("palm_{key}.json"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            match Self::from_json(&text) {
                Ok(cached) => return Ok(cached),
                Err(err) => log::warn!("ignoring unreadable Palm cache {}: {err}", path.display()),
            }
        }
        let estimates = estimate_palm(f0, budget, cells)?;
        std::fs::create_dir_all(dir)?;
        crate::io::write_atomic(&path, estimates.to_json()?.as_bytes())?;
        Ok(estimates)
    }
}

fn batch_se(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Builds the anchor ensemble: `p`, `ζ` and `E[1/λ]` on `cells` cells.
pub fn estimate_palm(f0: &ModelParams, budget: &PalmBudget, cells: usize) -> Result<PalmEstimates> {
    if f0.kind() != ModelKind::Linear {
        return Err(Error::InvalidInput("Palm estimates need the linear model".into()));
    }
    if budget.n_batches < 2 || cells == 0 {
        return Err(Error::InvalidInput("Palm budget needs at least two batches and one cell".into()));
    }
    let a = f0.support_end();
    let batch_len = budget.horizon / budget.n_batches as f64;
    if !(batch_len > 2.0 * a) {
        return Err(Error::InvalidInput(format!(
            "Palm batches of length {batch_len} are too short for memory A = {a}"
        )));
    }
    let mu = stationary_rates(f0)?;
    let batches: Vec<PalmBatch> = (0..budget.n_batches)
        .into_par_iter()
        .map(|b| {
            let seed = derive_seed(budget.seed, b as u64);
            let stream = simulate_thinning(f0, batch_len, DEFAULT_BURN_IN_FACTOR * a, seed)?;
            Ok(accumulate_batch(f0, &stream, batch_len, cells, seed))
        })
        .collect::<Result<_>>()?;

    let dim = f0.dim();
    let mut mean = PalmBatch::zeros(dim, cells);
    for batch in &batches {
        for l in 0..dim {
            let n = batch.anchors[l] as f64;
            mean.anchors[l] += batch.anchors[l];
            for k in 0..dim {
                for (m, v) in mean.p[l * dim + k].iter_mut().zip(&batch.p[l * dim + k]) {
                    *m += n * v;
                }
                for j in 0..dim {
                    let idx = (l * dim + j) * dim + k;
                    for (m, v) in mean.zeta[idx].iter_mut().zip(&batch.zeta[idx]) {
                        *m += n * v;
                    }
                }
            }
        }
        for k in 0..dim {
            mean.inv_lambda[k] += batch.inv_lambda[k] / budget.n_batches as f64;
        }
    }
    for l in 0..dim {
        let n = mean.anchors[l];
        if n < budget.min_anchors {
            return Err(Error::TooFewAnchors {
                mark: l + 1,
                count: n,
                required: budget.min_anchors,
            });
        }
        let inv = 1.0 / n as f64;
        for k in 0..dim {
            mean.p[l * dim + k].iter_mut().for_each(|v| *v *= inv);
            for j in 0..dim {
                mean.zeta[(l * dim + j) * dim + k].iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    Ok(PalmEstimates {
        dim,
        support_end: a,
        cells,
        mu,
        mean,
        batches,
    })
}

fn accumulate_batch(f0: &ModelParams, stream: &EventStream, horizon: f64, cells: usize, seed: u64) -> PalmBatch {
    let dim = f0.dim();
    let a = f0.support_end();
    let delta = a / cells as f64;
    let mut out = PalmBatch::zeros(dim, cells);
    let mut rng = seeded_rng(seed, 1);
    let mut lambda = vec![0.0; dim];
    let times = stream.times();
    let marks = stream.marks();
    let first = stream.lower_bound(0.0);
    let last = stream.upper_bound(horizon - a);
    for i in first..last {
        let (t, l) = (times[i], marks[i]);
        out.anchors[l] += 1;
        for cell in 0..cells {
            let tau = t + (cell as f64 + rng.random::<f64>()) * delta;
            let range = window_range(stream, tau, a);
            lambda.copy_from_slice(f0.nu());
            for s in range.clone() {
                for (k, lam) in lambda.iter_mut().enumerate() {
                    *lam += f0.kernel(marks[s], k).eval(tau - times[s]);
                }
            }
            for k in 0..dim {
                out.p[l * dim + k][cell] += 1.0 / lambda[k];
            }
            for s in range {
                if s == i || times[s] == t {
                    continue;
                }
                let j = marks[s];
                let b = ((tau - times[s]) / delta).min(cells as f64 - 1.0) as usize;
                for k in 0..dim {
                    out.zeta[(l * dim + j) * dim + k][cell * cells + b] += 1.0 / lambda[k];
                }
            }
        }
    }
    for l in 0..dim {
        let n = out.anchors[l].max(1) as f64;
        for k in 0..dim {
            out.p[l * dim + k].iter_mut().for_each(|v| *v /= n);
            for j in 0..dim {
                out.zeta[(l * dim + j) * dim + k].iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    let grid = [(a, f0.cells())];
    for k in 0..dim {
        out.inv_lambda[k] = piecewise_integral(stream, 0.0, horizon, &grid, |t| {
            let mut lam = f0.nu()[k];
            for s in window_range(stream, t, a) {
                lam += f0.kernel(marks[s], k).eval(t - times[s]);
            }
            1.0 / lam
        }) / horizon;
    }
    out
}

/// `p_{l,k}` estimates with their standard errors, row-major over `(l, k)`.
pub fn estimate_palm_p(
    f0: &ModelParams,
    budget: &PalmBudget,
    cells: usize,
) -> Result<Vec<(GridFunction, GridFunction)>> {
    let palm = estimate_palm(f0, budget, cells)?;
    let dim = palm.dim();
    Ok((0..dim * dim).map(|i| (palm.p(i / dim, i % dim), palm.p_se(i / dim, i % dim))).collect())
}

fn apply_zeta_matrix(matrix: &[f64], g: &[f64], out: &mut [f64]) {
    let m = g.len();
    for (a, o) in out.iter_mut().enumerate() {
        *o = matrix[a * m..(a + 1) * m].iter().zip(g).map(|(z, v)| z * v).sum();
    }
}

/// `ζ_{l,j,k}(g_{j,k})` for every `(l, j, k)`, indexed `(l·K + j)·K + k`.
pub fn apply_palm_zeta(g: &[GridFunction], palm: &PalmEstimates) -> Result<Vec<GridFunction>> {
    let dim = palm.dim();
    if g.len() != dim * dim {
        return Err(Error::InvalidInput("ζ needs K² functions".into()));
    }
    for f in g {
        palm.check_grid(f)?;
    }
    let mut out = Vec::with_capacity(dim * dim * dim);
    let mut buf = vec![0.0; palm.cells()];
    for l in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                apply_zeta_matrix(palm.zeta_matrix(l, j, k), g[j * dim + k].values(), &mut buf);
                out.push(GridFunction::new(palm.support_end(), buf.clone())?);
            }
        }
    }
    Ok(out)
}

/// `Γ(ξ, g)` with its batch-means standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorImage {
    pub value: Direction,
    pub std_error: Direction,
}

fn gamma_on(batch: &PalmBatch, mu: &[f64], dir: &Direction) -> Result<Direction> {
    let dim = dir.dim();
    let cells = dir.cells();
    let delta = dir.support_end() / cells as f64;
    let mut xi = vec![0.0; dim];
    let mut g = Vec::with_capacity(dim * dim);
    let mut buf = vec![0.0; cells];
    for k in 0..dim {
        xi[k] = dir.xi()[k] * batch.inv_lambda[k];
        for l in 0..dim {
            let p = &batch.p[l * dim + k];
            xi[k] += mu[l] * delta * dir.g(l, k).values().iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    for l in 0..dim {
        for k in 0..dim {
            let p = &batch.p[l * dim + k];
            let mut out: Vec<f64> = (0..cells).map(|a| (dir.xi()[k] + dir.g(l, k).values()[a]) * p[a]).collect();
            for j in 0..dim {
                apply_zeta_matrix(&batch.zeta[(l * dim + j) * dim + k], dir.g(j, k).values(), &mut buf);
                out.iter_mut().zip(&buf).for_each(|(o, z)| *o += z);
            }
            out.iter_mut().for_each(|o| *o *= mu[l]);
            g.push(GridFunction::new(dir.support_end(), out)?);
        }
    }
    Direction::new(xi, g)
}

pub fn info_operator_apply(dir: &Direction, palm: &PalmEstimates) -> Result<OperatorImage> {
    palm.check_direction(dir)?;
    let value = gamma_on(&palm.mean, &palm.mu, dir)?;
    let per_batch = info_operator_apply_batches(dir, palm)?;
    let coords: Vec<Vec<f64>> = per_batch.iter().map(Direction::coefficients).collect();
    let se: Vec<f64> = (0..value.coefficients().len())
        .map(|i| batch_se(coords.iter().map(|c| c[i])))
        .collect();
    let std_error = Direction::from_coefficients(palm.dim, palm.support_end, palm.cells, &se)?;
    Ok(OperatorImage { value, std_error })
}

/// `Γ(ξ, g)` evaluated on each batch of the ensemble separately.
pub fn info_operator_apply_batches(dir: &Direction, palm: &PalmEstimates) -> Result<Vec<Direction>> {
    palm.check_direction(dir)?;
    palm.batches.iter().map(|b| gamma_on(b, &palm.mu, dir)).collect()
}

/// Fixed-point solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvertOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial under-relaxation `ω ∈ (0, 1]`.
    pub omega: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            omega: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub direction: Direction,
    /// `‖Γ(direction) − target‖_∞` under the pooled estimates.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub omega: f64,
}

/// Solves `Γ(ξ, g) = target` by the relaxed fixed point
///
/// ```text
/// ξ_k     ← E[1/λ^k]⁻¹ (ξ'_k − Σ_l μ_l ⟨g_{l,k}, p_{l,k}⟩₂)
/// g_{l,k} ← (g'_{l,k} − μ_l Σ_j ζ_{l,j,k}(g_{j,k})) / (μ_l p_{l,k}) − ξ_k
/// ```
///
/// with the updated `ξ` fed into the `g` step. `ω` halves whenever the
/// update size grows twice in a row. Non-convergence is reported through
/// [`Inversion::converged`], with the best iterate.
pub fn info_operator_invert(target: &Direction, palm: &PalmEstimates, options: InvertOptions) -> Result<Inversion> {
    palm.check_direction(target)?;
    if !(options.omega > 0.0 && options.omega <= 1.0) || !(options.tol > 0.0) {
        return Err(Error::InvalidInput("relaxation must lie in (0, 1] and tolerance be positive".into()));
    }
    let dim = palm.dim;
    let cells = palm.cells;
    let delta = palm.support_end / cells as f64;
    let batch = &palm.mean;
    let mu = &palm.mu;
    for (i, p) in batch.p.iter().enumerate() {
        if p.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Singular(format!("p_{{{},{}}} is not positive", i / dim + 1, i % dim + 1)));
        }
    }

    let n = dim + dim * dim * cells;
    let goal = target.coefficients();
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut buf = vec![0.0; cells];
    let mut omega = options.omega;
    let mut last_change = f64::INFINITY;
    let mut growth = 0;
    let mut best = (f64::INFINITY, x.clone());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        iterations += 1;
        let g_at = |l: usize, k: usize| -> std::ops::Range<usize> {
            let start = dim + (l * dim + k) * cells;
            start..start + cells
        };
        for k in 0..dim {
            let mut v = goal[k];
            for l in 0..dim {
                let p = &batch.p[l * dim + k];
                v -= mu[l] * delta * x[g_at(l, k)].iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
            }
            next[k] = v / batch.inv_lambda[k];
        }
        for l in 0..dim {
            for k in 0..dim {
                let p = &batch.p[l * dim + k];
                let range = g_at(l, k);
                let mut acc = vec![0.0; cells];
                for j in 0..dim {
                    apply_zeta_matrix(&batch.zeta[(l * dim + j) * dim + k], &x[g_at(j, k)], &mut buf);
                    acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                }
                for (c, idx) in range.enumerate() {
                    next[idx] = (goal[idx] - mu[l] * acc[c]) / (mu[l] * p[c]) - next[k];
                }
            }
        }
        let change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if !change.is_finite() {
            break;
        }
        if change < best.0 {
            best = (change, x.clone());
        }
        if change <= options.tol * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            x.clone_from(&next);
            converged = true;
            break;
        }
        if change > last_change {
            growth += 1;
            if growth >= 2 {
                omega *= 0.5;
                growth = 0;
            }
        } else {
            growth = 0;
        }
        last_change = change;
        for (xi, ni) in x.iter_mut().zip(&next) {
            *xi += omega * (ni - *xi);
        }
    }
    if !converged {
        x = best.1;
    }
    let direction = Direction::from_coefficients(dim, palm.support_end, cells, &x)?;
    let image = gamma_on(batch, mu, &direction)?;
    let residual = image
        .coefficients()
        .iter()
        .zip(&goal)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Inversion {
        direction,
        residual,
        iterations,
        converged,
        omega,
    })
}

/// Dense matrix of `Γ` in the coordinates of [`Direction::coefficients`].
pub fn info_operator_matrix(palm: &PalmEstimates) -> Result<DMatrix<f64>> {
    let n = palm.dim + palm.dim * palm.dim * palm.cells;
    let mut matrix = DMatrix::zeros(n, n);
    let mut unit = vec![0.0; n];
    for c in 0..n {
        unit[c] = 1.0;
        let d = Direction::from_coefficients(palm.dim, palm.support_end, palm.cells, &unit)?;
        let image = gamma_on(&palm.mean, &palm.mu, &d)?.coefficients();
        matrix.set_column(c, &DVector::from_vec(image));
        unit[c] = 0.0;
    }
    Ok(matrix)
}

/// Direct LU solve of `Γ(ξ, g) = target`.
pub fn info_operator_solve_dense(target: &Direction, palm: &PalmEstimates) -> Result<Direction> {
    palm.check_direction(target)?;
    let matrix = info_operator_matrix(palm)?;
    let rhs = DVector::from_vec(target.coefficients());
    let solution = matrix
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("information operator matrix".into()))?;
    Direction::from_coefficients(palm.dim, palm.support_end, palm.cells, solution.as_slice())
}

/// `‖ψ̃_L‖²_L = ⟨ψ̃_L, ψ̃₂⟩₂` for `ψ̃₂ = Γ ψ̃_L`.
pub fn optimal_variance(psi_l: &Direction, psi_2: &Direction) -> Result<f64> {
    psi_l.inner_l2(psi_2)
}

/// Oracle efficient estimator `ψ(f⁰) + W_T(ψ̃_L)/√T`.
pub fn efficient_estimate(
    psi: &FunctionalSpec,
    f0: &ModelParams,
    psi_l: &Direction,
    stream: &EventStream,
    horizon: f64,
) -> Result<f64> {
    Ok(eval_functional(psi, f0)? + w_statistic(psi_l, f0, stream, horizon)? / horizon.sqrt())
}

/// Lower and upper bounds on `p_{l,k}`, row-major over `(l, k)`:
/// `c_{l,k} = (2‖f⁰‖_∞ + ‖h⁰_k‖_∞ (1 + A Σ_j ‖m_{l,j}‖_∞))⁻¹` and `2/ν_k`.
pub fn palm_p_bounds(f0: &ModelParams, moment: &MomentDensity) -> Vec<(f64, f64)> {
    let dim = f0.dim();
    let a = f0.support_end();
    let f_sup = f0
        .nu()
        .iter()
        .copied()
        .chain(f0.kernels().iter().map(GridFunction::sup_norm))
        .fold(0.0, f64::max);
    let mut out = Vec::with_capacity(dim * dim);
    for l in 0..dim {
        let m_sum: f64 = (0..dim).map(|j| moment.palm_density_sup(l, j)).sum();
        for k in 0..dim {
            let h_k = (0..dim).map(|i| f0.kernel(i, k).sup_norm()).fold(0.0, f64::max);
            let lower = 1.0 / (2.0 * f_sup + h_k * (1.0 + a * m_sum));
            out.push((lower, 2.0 / f0.nu()[k]));
        }
    }
    out
}

/// `B_J = −⟨f̃⁰ − P f̃⁰, ψ̃_L − P ψ̃_L⟩_L` for the LAN-orthogonal projection
/// `P` onto the span of the background directions and the kernel basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasTerm {
    pub value: f64,
    pub std_error: f64,
    /// `‖f̃⁰ − P f̃⁰‖_L`.
    pub residual_norm_f: f64,
    /// `‖ψ̃_L − P ψ̃_L‖_L`.
    pub residual_norm_psi: f64,
    /// Whether the basis Gram matrix needed the ridge.
    pub regularized: bool,
}

const BIAS_RIDGE: f64 = 1e-10;

/// Evaluates [`BiasTerm`] with LAN products estimated on `stream`.
pub fn bias_term(
    f0: &ModelParams,
    basis: &[GridFunction],
    psi_l: &Direction,
    stream: &EventStream,
    horizon: f64,
    n_windows: usize,
) -> Result<BiasTerm> {
    let dim = f0.dim();
    let mut dirs = Vec::new();
    for k in 0..dim {
        dirs.push(Direction::unit_rate(dim, k, f0.support_end(), 1));
    }
    for l in 0..dim {
        for k in 0..dim {
            for b in basis {
                dirs.push(Direction::single_kernel(dim, l, k, b.clone()));
            }
        }
    }
    let nb = dirs.len();
    dirs.push(Direction::from_params(f0));
    dirs.push(psi_l.clone());
    let products = lan_gram_on_path(&dirs, f0, stream, horizon, n_windows)?;
    let (pooled, regularized) = residual_products(&products.gram, nb)?;
    let values: Vec<f64> = products
        .batches
        .iter()
        .map(|g| residual_products(g, nb).map(|r| -r.0[1]))
        .collect::<Result<_>>()?;
    Ok(BiasTerm {
        value: -pooled[1],
        std_error: batch_se(values.into_iter()),
        residual_norm_f: pooled[0].max(0.0).sqrt(),
        residual_norm_psi: pooled[2].max(0.0).sqrt(),
        regularized,
    })
}

/// Residual Gram entries `(ff, fψ, ψψ)` after projecting the last two
/// directions onto the first `nb`.
fn residual_products(gram: &DMatrix<f64>, nb: usize) -> Result<([f64; 3], bool)> {
    let gbb = gram.view((0, 0), (nb, nb)).into_owned();
    let cross = gram.view((0, nb), (nb, 2)).into_owned();
    let (solved, regularized) = match gbb.clone().cholesky() {
        Some(ch) => (ch.solve(&cross), false),
        None => {
            let scale = gbb.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            let ridged = gbb + DMatrix::identity(nb, nb) * (BIAS_RIDGE * scale);
            let ch = ridged
                .cholesky()
                .ok_or_else(|| Error::Singular("basis LAN Gram matrix".into()))?;
            (ch.solve(&cross), true)
        }
    };
    let reduced = gram.view((nb, nb), (2, 2)).into_owned() - cross.transpose() * solved;
    Ok(([reduced[(0, 0)], reduced[(0, 1)], reduced[(1, 1)]], regularized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment::solve_moment_density;

    fn box_model() -> ModelParams {
        ModelParams::new(vec![1.0], vec![GridFunction::constant(1.0, 4, 0.5)], ModelKind::Linear).unwrap()
    }

    #[test]
    fn poisson_apply_closed_form() {
        let palm = PalmEstimates::poisson(&[1.0], 1.0, 4).unwrap();
        let d = Direction::new(vec![0.0], vec![GridFunction::constant(1.0, 4, 1.0)]).unwrap();
        let image = info_operator_apply(&d, &palm).unwrap().value;
        assert!((image.xi()[0] - 1.0).abs() < 1e-12);
        for v in image.g(0, 0).values() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        let zero = Direction::zeros(1, 1.0, 4);
        assert!(info_operator_apply(&zero, &palm).unwrap().value.is_zero());
    }

    #[test]
    fn poisson_inversion_matches_dense_solve() {
        let palm = PalmEstimates::poisson(&[2.0, 0.5], 1.0, 3).unwrap();
        let coeffs: Vec<f64> = (0..2 + 4 * 3).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let d = Direction::from_coefficients(2, 1.0, 3, &coeffs).unwrap();
        let target = info_operator_apply(&d, &palm).unwrap().value;
        let inv = info_operator_invert(&target, &palm, InvertOptions::default()).unwrap();
        assert!(inv.converged);
        let dense = info_operator_solve_dense(&target, &palm).unwrap();
        for ((a, b), c) in inv.direction.coefficients().iter().zip(dense.coefficients()).zip(coeffs) {
            assert!((a - c).abs() < 1e-8 && (b - c).abs() < 1e-8, "{a} {b} {c}");
        }
    }

    #[test]
    fn estimated_palm_respects_bounds() {
        let f0 = box_model();
        let palm = estimate_palm(&f0, &PalmBudget::new(2000.0, 8, 11), 4).unwrap();
        let moment = solve_moment_density(&f0, 4).unwrap();
        let (lo, hi) = palm_p_bounds(&f0, &moment)[0];
        for v in palm.p(0, 0).values() {
            assert!(*v >= lo && *v <= hi && *v <= 1.0, "{lo} {v} {hi}");
        }
        assert!(palm.anchors()[0] > 1000);
    }

    #[test]
    fn too_few_anchors() {
        let f0 = ModelParams::poisson(vec![0.05], 1.0, 2);
        let err = estimate_palm(&f0, &PalmBudget::new(100.0, 4, 1), 2).unwrap_err();
        assert!(matches!(err, Error::TooFewAnchors { .. }));
    }

    #[test]
    fn zeta_is_linear_on_a_fixed_ensemble() {
        let f0 = box_model();
        let palm = estimate_palm(&f0, &PalmBudget::new(400.0, 4, 2), 4).unwrap();
        let g1 = GridFunction::new(1.0, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let g2 = GridFunction::new(1.0, vec![0.25, 0.0, -1.0, 2.0]).unwrap();
        let sum = g1.axpy(1.0, &g2).unwrap();
        let z1 = &apply_palm_zeta(&[g1], &palm).unwrap()[0];
        let z2 = &apply_palm_zeta(&[g2], &palm).unwrap()[0];
        let zs = &apply_palm_zeta(&[sum], &palm).unwrap()[0];
        for ((a, b), c) in z1.values().iter().zip(z2.values()).zip(zs.values()) {
            assert!((a + b - c).abs() < 1e-12);
        }
        let zero = apply_palm_zeta(&[GridFunction::zeros(1.0, 4)], &palm).unwrap();
        assert_eq!(zero[0].sup_norm(), 0.0);
    }

    #[test]
    fn cache_round_trip() {
        let f0 = box_model();
        let dir = tempfile::tempdir().unwrap();
        let budget = PalmBudget::new(300.0, 3, 5);
        let a = PalmEstimates::load_or_estimate(&f0, &budget, 4, dir.path()).unwrap();
        let b = PalmEstimates::load_or_estimate(&f0, &budget, 4, dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
