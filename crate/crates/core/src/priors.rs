//! Random-series priors on `(ν, J, θ)`: `h_{l,k} = φ(θ_{l,k}ᵀ B_J)` with a
//! random dimension `J`, restricted to the stable ReLU parameter set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::{spectral_radius, ModelKind, ModelParams};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Indicators of `J` equal bins of `[0, A]`.
    Histogram,
    /// Haar wavelets up to resolution `J`: `2^{J+1}` functions.
    Haar,
}

/// A finite family of basis functions, each represented on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFamily {
    kind: BasisKind,
    level: usize,
    functions: Vec<GridFunction>,
}

impl BasisFamily {
    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// `J` for histograms, the resolution `I` for Haar.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[GridFunction] {
        &self.functions
    }

    pub fn support_end(&self) -> f64 {
        self.functions[0].support_end()
    }

    /// Cells of the common grid.
    pub fn cells(&self) -> usize {
        self.functions[0].cells()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            self.functions[i].inner(&self.functions[j]).expect("basis functions share a grid")
        })
    }

    /// `θᵀ B` on the common grid.
    pub fn series(&self, theta: &[f64]) -> Result<GridFunction> {
        if theta.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} coefficients for a basis of {} functions",
                theta.len(),
                self.len()
            )));
        }
        if self.kind == BasisKind::Histogram {
            return GridFunction::new(self.support_end(), theta.to_vec());
        }
        let mut values = vec![0.0; self.cells()];
        for (c, f) in theta.iter().zip(&self.functions) {
            values.iter_mut().zip(f.values()).for_each(|(v, b)| *v += c * b);
        }
        GridFunction::new(self.support_end(), values)
    }
}

pub fn histogram_basis(j: usize, support_end: f64) -> Result<BasisFamily> {
    if j == 0 || !(support_end > 0.0) {
        return Err(Error::InvalidInput("histogram basis needs j ≥ 1 and A > 0".into()));
    }
    let functions = (0..j)
        .map(|i| {
            let mut v = vec![0.0; j];
            v[i] = 1.0;
            GridFunction::new(support_end, v)
        })
        .collect::<Result<_>>()?;
    Ok(BasisFamily {
        kind: BasisKind::Histogram,
        level: j,
        functions,
    })
}

/// Orthonormal Haar family on `[0, A]` up to resolution `level`: the scaling
/// function and the wavelets `ψ_{i,s}`, `0 ≤ i ≤ level`, `s < 2^i`.
pub fn haar_basis(level: usize, support_end: f64) -> Result<BasisFamily> {
    if level > 20 || !(support_end > 0.0) {
        return Err(Error::InvalidInput("Haar resolution must be at most 20 and A > 0".into()));
    }
    let cells = 1usize << (level + 1);
    let mut functions = vec![GridFunction::constant(support_end, cells, 1.0 / support_end.sqrt())];
    for i in 0..=level {
        let blocks = 1usize << i;
        let width = cells / blocks;
        let height = (blocks as f64 / support_end).sqrt();
        for s in 0..blocks {
            let mut v = vec![0.0; cells];
            for (c, slot) in v[s * width..(s + 1) * width].iter_mut().enumerate() {
                *slot = if c < width / 2 { height } else { -height };
            }
            functions.push(GridFunction::new(support_end, v)?);
        }
    }
    Ok(BasisFamily {
        kind: BasisKind::Haar,
        level,
        functions,
    })
}

pub fn basis(kind: BasisKind, level: usize, support_end: f64) -> Result<BasisFamily> {
    match kind {
        BasisKind::Histogram => histogram_basis(level, support_end),
        BasisKind::Haar => haar_basis(level, support_end),
    }
}

/// Coefficients of the `L₂` projection of `g` onto the span of `basis`.
pub fn project_l2(g: &GridFunction, basis: &BasisFamily) -> Result<Vec<f64>> {
    if g.support_end() != basis.support_end() {
        return Err(Error::GridMismatch("function and basis supports differ".into()));
    }
    if basis.kind == BasisKind::Histogram {
        let w = basis.support_end() / basis.len() as f64;
        return Ok((0..basis.len())
            .map(|i| g.integral_between(i as f64 * w, (i + 1) as f64 * w) / w)
            .collect());
    }
    let rhs = DVector::from_iterator(
        basis.len(),
        basis.functions.iter().map(|b| b.inner(g)).collect::<Result<Vec<_>>>()?,
    );
    let chol = basis
        .gram()
        .cholesky()
        .ok_or_else(|| Error::Singular("basis Gram matrix".into()))?;
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// Coefficient prior `π_θ`, shared by every coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ThetaPrior {
    /// `rate · e^{−rate(θ−κ)}` on `[κ, ∞)`.
    ShiftedExponential { kappa: f64, rate: f64 },
    /// `N(0, σ²)` truncated to `[κ, ∞)`.
    TruncatedGaussian { kappa: f64, sigma: f64 },
    Gaussian { sigma: f64 },
}

impl ThetaPrior {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            Self::ShiftedExponential { kappa, rate } => kappa.is_finite() && rate > 0.0,
            Self::TruncatedGaussian { kappa, sigma } => kappa.is_finite() && sigma > 0.0,
            Self::Gaussian { sigma } => sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid coefficient prior {self:?}")))
        }
    }

    pub fn log_density(&self, theta: f64) -> f64 {
        match *self {
            Self::ShiftedExponential { kappa, rate } => {
                if theta < kappa {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * (theta - kappa)
                }
            }
            Self::TruncatedGaussian { kappa, sigma } => {
                if theta < kappa {
                    f64::NEG_INFINITY
                } else {
                    let tail = 1.0 - std_normal().cdf(kappa / sigma);
                    gaussian_log_density(theta, sigma) - tail.ln()
                }
            }
            Self::Gaussian { sigma } => gaussian_log_density(theta, sigma),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::ShiftedExponential { kappa, rate } => kappa + Exp::new(rate).expect("positive rate").sample(rng),
            Self::TruncatedGaussian { kappa, sigma } => {
                let lo = std_normal().cdf(kappa / sigma);
                let u: f64 = rng.random();
                let p = (lo + u * (1.0 - lo)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                (sigma * std_normal().inverse_cdf(p)).max(kappa)
            }
            Self::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
        }
    }

    /// Whether coefficients can be negative.
    pub fn allows_negative(&self) -> bool {
        match *self {
            Self::ShiftedExponential { kappa, .. } | Self::TruncatedGaussian { kappa, .. } => kappa < 0.0,
            Self::Gaussian { .. } => true,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn gaussian_log_density(x: f64, sigma: f64) -> f64 {
    -0.5 * (x / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Prior on each background rate `ν_k`, with a polynomial or lighter tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NuPrior {
    Gamma { shape: f64, rate: f64 },
    /// Pareto II: density `(a/s)(1 + x/s)^{−(a+1)}`, tail exponent `a > 1`.
    Lomax { shape: f64, scale: f64 },
}

impl NuPrior {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            Self::Gamma { shape, rate } => shape > 0.0 && rate > 0.0,
            Self::Lomax { shape, scale } => shape > 1.0 && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid background-rate prior {self:?}")))
        }
    }

    pub fn log_density(&self, nu: f64) -> f64 {
        if !(nu > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Self::Gamma { shape, rate } => {
                shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * nu.ln() - rate * nu
            }
            Self::Lomax { shape, scale } => (shape / scale).ln() - (shape + 1.0) * (nu / scale).ln_1p(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng),
            Self::Lomax { shape, scale } => {
                let u: f64 = rng.random();
                scale * ((1.0 - u).powf(-1.0 / shape) - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    /// `φ(x) = log(1 + eˣ)`.
    Softplus,
}

impl Link {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }
}

/// Full prior specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub basis: BasisKind,
    /// Decay `c₁` of `Π_J(j) ∝ e^{−c₁ j log j}`.
    pub c1: f64,
    pub theta: ThetaPrior,
    pub nu: NuPrior,
    pub link: Link,
    /// Largest `J` (histogram bins, or Haar resolution).
    pub j_max: usize,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            basis: BasisKind::Histogram,
            c1: 1.0,
            theta: ThetaPrior::ShiftedExponential { kappa: -0.5, rate: 1.0 },
            nu: NuPrior::Gamma { shape: 2.0, rate: 1.0 },
            link: Link::Identity,
            j_max: 32,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.theta.check()?;
        self.nu.check()?;
        if !(self.c1 > 0.0) {
            return Err(Error::Config("c1 must be positive".into()));
        }
        if self.j_max < self.j_min() {
            return Err(Error::Config("j_max is below the smallest dimension".into()));
        }
        if self.basis == BasisKind::Haar && self.j_max > 20 {
            return Err(Error::Config("Haar resolution is capped at 20".into()));
        }
        Ok(())
    }

    /// Smallest admissible `J`: one histogram bin, or Haar resolution 0.
    pub fn j_min(&self) -> usize {
        match self.basis {
            BasisKind::Histogram => 1,
            BasisKind::Haar => 0,
        }
    }

    /// Number of coefficients per kernel at dimension index `j`.
    pub fn coefficients(&self, j: usize) -> usize {
        match self.basis {
            BasisKind::Histogram => j,
            BasisKind::Haar => 1 << (j + 1),
        }
    }

    /// Unnormalised `log Π_J(j) = −c₁ n log n` with `n` the number of
    /// coefficients.
    pub fn log_dimension_prior(&self, j: usize) -> f64 {
        if j < self.j_min() || j > self.j_max {
            return f64::NEG_INFINITY;
        }
        let n = self.coefficients(j) as f64;
        -self.c1 * n * n.ln()
    }

    /// Normalised `(j, Π_J(j))` over `[j_min, j_max]`.
    pub fn dimension_pmf(&self) -> Vec<(usize, f64)> {
        let logs: Vec<(usize, f64)> = (self.j_min()..=self.j_max)
            .map(|j| (j, self.log_dimension_prior(j)))
            .collect();
        let top = logs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|p| (p.1 - top).exp()).sum();
        logs.into_iter().map(|(j, l)| (j, (l - top).exp() / total)).collect()
    }
}

/// A point `(ν, J, θ)` of the prior support; `theta[l·K + k]` holds the
/// coefficients of `h_{l,k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesState {
    pub nu: Vec<f64>,
    pub j: usize,
    pub theta: Vec<Vec<f64>>,
}

impl SeriesState {
    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    /// Kernel values `φ(θᵀB_J)` on the basis grid, row-major over `(l, k)`.
    pub fn kernels(&self, spec: &PriorSpec, support_end: f64) -> Result<Vec<GridFunction>> {
        let family = basis(spec.basis, self.j, support_end)?;
        self.theta
            .iter()
            .map(|t| Ok(family.series(t)?.map(|v| spec.link.apply(v))))
            .collect()
    }

    /// The Hawkes parameters of this state: linear when every kernel is
    /// nonnegative, ReLU otherwise.
    pub fn to_params(&self, spec: &PriorSpec, support_end: f64) -> Result<ModelParams> {
        let h = self.kernels(spec, support_end)?;
        let kind = if h.iter().any(|g| g.values().iter().any(|&v| v < 0.0)) {
            ModelKind::Relu
        } else {
            ModelKind::Linear
        };
        ModelParams::new(self.nu.clone(), h, kind)
    }

    fn check_shape(&self, spec: &PriorSpec) -> Result<()> {
        let dim = self.dim();
        let n = spec.coefficients(self.j);
        if dim == 0 || self.theta.len() != dim * dim || self.theta.iter().any(|t| t.len() != n) {
            return Err(Error::InvalidInput(format!(
                "state needs K² blocks of {n} coefficients for J = {}",
                self.j
            )));
        }
        Ok(())
    }
}

/// Membership in `ℱ_R¹`: positive rates, the ReLU margin
/// `min_k(ν_k − max_l ‖h⁻_{l,k}‖_∞) > 0`, `r(ρ₊) < 1` and `max (ρ₊)_{l,k} < 1`.
pub fn in_support(params: &ModelParams) -> bool {
    if params.nu().iter().any(|&v| !(v > 0.0)) || !(params.relu_margin() > 0.0) {
        return false;
    }
    let rho_plus = params.rho_plus();
    if rho_plus.iter().any(|&v| !(v < 1.0)) {
        return false;
    }
    matches!(spectral_radius(&rho_plus), Ok(r) if r < 1.0)
}

/// Unnormalised log prior density; `−∞` outside the support.
pub fn log_prior(state: &SeriesState, spec: &PriorSpec, support_end: f64) -> f64 {
    if state.check_shape(spec).is_err() {
        return f64::NEG_INFINITY;
    }
    let mut total = spec.log_dimension_prior(state.j);
    if total == f64::NEG_INFINITY {
        return total;
    }
    for &v in &state.nu {
        total += spec.nu.log_density(v);
    }
    for block in &state.theta {
        for &t in block {
            total += spec.theta.log_density(t);
        }
    }
    if !total.is_finite() {
        return f64::NEG_INFINITY;
    }
    match state.to_params(spec, support_end) {
        Ok(params) if in_support(&params) => total,
        _ => f64::NEG_INFINITY,
    }
}

const REJECTION_CAP: usize = 10_000;

/// Draws `(ν, J, θ)` from the prior restricted to `ℱ_R¹`.
pub fn sample_prior(spec: &PriorSpec, dim: usize, support_end: f64, seed: u64) -> Result<SeriesState> {
    spec.validate()?;
    let mut rng = seeded_rng(seed, 0);
    sample_prior_with(spec, dim, support_end, &mut rng)
}

pub fn sample_prior_with<R: Rng + ?Sized>(
    spec: &PriorSpec,
    dim: usize,
    support_end: f64,
    rng: &mut R,
) -> Result<SeriesState> {
    let pmf = spec.dimension_pmf();
    for _ in 0..REJECTION_CAP {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = pmf.last().map_or(spec.j_min(), |p| p.0);
        for &(candidate, p) in &pmf {
            acc += p;
            if u < acc {
                j = candidate;
                break;
            }
        }
        let n = spec.coefficients(j);
        let state = SeriesState {
            nu: (0..dim).map(|_| spec.nu.sample(rng)).collect(),
            j,
            theta: (0..dim * dim)
                .map(|_| (0..n).map(|_| spec.theta.sample(rng)).collect())
                .collect(),
        };
        if log_prior(&state, spec, support_end).is_finite() {
            return Ok(state);
        }
    }
    Err(Error::RejectionCap(REJECTION_CAP))
}

/// Proportionality constants of the rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub c_eps: f64,
    pub c_j: f64,
    pub j0: f64,
}

impl Default for RateConstants {
    fn default() -> Self {
        Self {
            c_eps: 1.0,
            c_j: 1.0,
            j0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    /// `ε̄_T = c T^{−β/(2β+1)} log(T)^{β/(2β+1)}`.
    pub eps_bar: f64,
    /// `J̄_T = c T^{1/(2β+1)} log(T)^{(3β+1)/(2β+1)}`.
    pub j_bar: f64,
    /// `ε_T = log(T) ε̄_T`.
    pub eps: f64,
    /// `J_T = J₀ J̄_T`.
    pub j_t: f64,
    /// Set when `β ≤ 1/2`, where the Bernstein–von Mises conditions fail.
    pub below_bvm_regime: bool,
}

pub fn rate_schedule(beta: f64, horizon: f64, constants: RateConstants) -> Result<RateSchedule> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("smoothness β = {beta} must be positive")));
    }
    if !(horizon > std::f64::consts::E) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("rate schedule needs T > e, got {horizon}")));
    }
    let below = beta <= 0.5;
    if below {
        log::warn!("β = {beta} ≤ 1/2: the Bernstein–von Mises conditions do not hold");
    }
    let log_t = horizon.ln();
    let denom = 2.0 * beta + 1.0;
    let eps_bar = constants.c_eps * horizon.powf(-beta / denom) * log_t.powf(beta / denom);
    let j_bar = constants.c_j * horizon.powf(1.0 / denom) * log_t.powf((3.0 * beta + 1.0) / denom);
    Ok(RateSchedule {
        eps_bar,
        j_bar,
        eps: log_t * eps_bar,
        j_t: constants.j0 * j_bar,
        below_bvm_regime: below,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_examples() {
        let b = histogram_basis(1, 1.0).unwrap();
        assert_eq!(b.functions()[0].values(), &[1.0]);
        let g = histogram_basis(2, 1.0).unwrap().gram();
        assert_eq!(g, DMatrix::from_diagonal_element(2, 2, 0.5));
        assert!(histogram_basis(0, 1.0).is_err());
    }

    #[test]
    fn haar_is_orthonormal() {
        for level in 0..4 {
            let b = haar_basis(level, 2.0).unwrap();
            assert_eq!(b.len(), 1 << (level + 1));
            let gram = b.gram();
            assert!((gram - DMatrix::identity(b.len(), b.len())).abs().max() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let g = GridFunction::from_fn(1.0, 64, |x| x);
        let c = project_l2(&g, &histogram_basis(2, 1.0).unwrap()).unwrap();
        assert!((c[0] - 0.25).abs() < 1e-12 && (c[1] - 0.75).abs() < 1e-12);

        let haar = haar_basis(2, 1.0).unwrap();
        let theta = [0.3, -1.0, 0.5, 0.0, 2.0, 0.1, -0.2, 0.7];
        let back = project_l2(&haar.series(&theta).unwrap(), &haar).unwrap();
        for (a, b) in back.iter().zip(theta) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn density_examples() {
        let spec = PriorSpec::default();
        assert!((spec.log_dimension_prior(2) - spec.log_dimension_prior(1) + 2.0 * 2f64.ln()).abs() < 1e-12);
        let exp = ThetaPrior::ShiftedExponential { kappa: 0.0, rate: 1.0 };
        assert_eq!(exp.log_density(0.5), -0.5);
        assert_eq!(exp.log_density(-0.1), f64::NEG_INFINITY);
        let tg = ThetaPrior::TruncatedGaussian { kappa: 0.0, sigma: 1.0 };
        assert!((tg.log_density(0.0) - (2.0 / (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
        let lomax = NuPrior::Lomax { shape: 2.0, scale: 1.0 };
        assert!((lomax.log_density(1.0) - (2f64.ln() - 3.0 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn support_truncation() {
        let spec = PriorSpec::default();
        let explosive = SeriesState {
            nu: vec![1.0],
            j: 1,
            theta: vec![vec![1.5]],
        };
        assert_eq!(log_prior(&explosive, &spec, 1.0), f64::NEG_INFINITY);
        let fine = SeriesState {
            nu: vec![1.0],
            j: 2,
            theta: vec![vec![0.5, -0.2]],
        };
        assert!(log_prior(&fine, &spec, 1.0).is_finite());
        let wrong_shape = SeriesState {
            nu: vec![1.0],
            j: 2,
            theta: vec![vec![0.5]],
        };
        assert_eq!(log_prior(&wrong_shape, &spec, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn sampling_is_deterministic_and_supported() {
        let spec = PriorSpec {
            j_max: 6,
            ..PriorSpec::default()
        };
        let a = sample_prior(&spec, 2, 1.0, 9).unwrap();
        assert_eq!(a, sample_prior(&spec, 2, 1.0, 9).unwrap());
        for seed in 0..50 {
            let s = sample_prior(&spec, 2, 1.0, seed).unwrap();
            let p = s.to_params(&spec, 1.0).unwrap();
            assert!(spectral_radius(&p.rho_plus()).unwrap() < 1.0);
            assert!(p.rho_plus().max() < 1.0);
        }
    }

    #[test]
    fn rate_schedule_values() {
        let r = rate_schedule(1.0, 1e4, RateConstants::default()).unwrap();
        assert!((r.eps_bar - 0.097_295_307_131_861_56).abs() < 1e-14);
        assert!((r.eps_bar / 0.09736 - 1.0).abs() < 1e-3);
        assert!((r.eps - 1e4f64.ln() * r.eps_bar).abs() < 1e-15);
        assert!((r.j_bar - 415.943_402_427_828_86).abs() < 1e-9);
        let seq: Vec<f64> = [1e3, 1e4, 1e5]
            .iter()
            .map(|&t| rate_schedule(1.0, t, RateConstants::default()).unwrap().eps_bar)
            .collect();
        assert!(seq[0] > seq[1] && seq[1] > seq[2]);
        assert!(rate_schedule(0.4, 1e4, RateConstants::default()).unwrap().below_bvm_regime);
        assert!(rate_schedule(1.0, 2.0, RateConstants::default()).is_err());
    }
}
