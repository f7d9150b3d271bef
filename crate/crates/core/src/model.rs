//! Model parameterization `f = (ν, h)` and its stationarity checks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Relu,
}

/// Background rates and interaction kernels of a `K`-variate Hawkes process.
///
/// `h[l * K + k]` is `h_{l,k}`, the effect of mark `l` events on the
/// intensity of mark `k`. All kernels share one grid of `[0, A]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct ModelParams {
    nu: Vec<f64>,
    h: Vec<GridFunction>,
    kind: ModelKind,
}

impl ModelParams {
    /// Builds parameters after shape checks only; see [`ModelParams::validate`]
    /// for model membership.
    pub fn new(nu: Vec<f64>, h: Vec<GridFunction>, kind: ModelKind) -> Result<Self> {
        let k = nu.len();
        if k == 0 {
            return Err(Error::InvalidInput("need at least one mark".into()));
        }
        if h.len() != k * k {
            return Err(Error::InvalidInput(format!(
                "expected {} kernels for K = {k}, got {}",
                k * k,
                h.len()
            )));
        }
        for g in &h[1..] {
            h[0].check_same_grid(g)?;
        }
        if let Some(v) = nu.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite background rate {v}")));
        }
        Ok(Self { nu, h, kind })
    }

    /// Pure background process: all kernels zero.
    pub fn poisson(nu: Vec<f64>, support_end: f64, cells: usize) -> Self {
        let k = nu.len();
        let h = vec![GridFunction::zeros(support_end, cells); k * k];
        Self {
            nu,
            h,
            kind: ModelKind::Linear,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    #[inline]
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn nu_mut(&mut self) -> &mut [f64] {
        &mut self.nu
    }

    #[inline]
    pub fn kernel(&self, l: usize, k: usize) -> &GridFunction {
        &self.h[l * self.dim() + k]
    }

    pub fn kernel_mut(&mut self, l: usize, k: usize) -> &mut GridFunction {
        let dim = self.dim();
        &mut self.h[l * dim + k]
    }

    pub fn kernels(&self) -> &[GridFunction] {
        &self.h
    }

    #[inline]
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    #[inline]
    pub fn support_end(&self) -> f64 {
        self.h[0].support_end()
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.h[0].cells()
    }

    /// `ρ_{l,k} = ∫ h_{l,k}`.
    pub fn rho(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |l, j| self.kernel(l, j).integral())
    }

    /// `(ρ₊)_{l,k} = ∫ h⁺_{l,k}`.
    pub fn rho_plus(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |l, j| self.kernel(l, j).positive_part().integral())
    }

    /// Checks membership in the model: positive rates, nonnegative kernels for
    /// the linear model (or the ReLU background margin), and `r(ρ₊) < 1`.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.nu.iter().find(|&&v| v <= 0.0) {
            return Err(Error::InvalidInput(format!("background rate {v} is not positive")));
        }
        match self.kind {
            ModelKind::Linear => {
                if self.h.iter().any(|g| g.values().iter().any(|&v| v < 0.0)) {
                    return Err(Error::InvalidInput(
                        "linear model requires nonnegative kernels".into(),
                    ));
                }
            }
            ModelKind::Relu => {
                if self.relu_margin() <= 0.0 {
                    return Err(Error::InvalidInput(
                        "ReLU model requires nu_k > max_l sup h^-_{l,k}".into(),
                    ));
                }
            }
        }
        let r = spectral_radius(&self.rho_plus())?;
        if r >= 1.0 {
            return Err(Error::NotStationary(r));
        }
        Ok(())
    }

    /// `min_k (ν_k − max_l ‖h⁻_{l,k}‖_∞)`.
    pub fn relu_margin(&self) -> f64 {
        (0..self.dim())
            .map(|k| {
                let worst = (0..self.dim())
                    .map(|l| self.kernel(l, k).negative_part().sup_norm())
                    .fold(0.0, f64::max);
                self.nu[k] - worst
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Squared `L₂` distance `Σ(ν−ν')² + Σ‖h−h'‖²`, exact across grids.
    pub fn l2_distance_sq(&self, other: &ModelParams) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        let mut total: f64 = self
            .nu
            .iter()
            .zip(&other.nu)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        for (a, b) in self.h.iter().zip(&other.h) {
            total += a.l2_distance_sq(b)?;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// On-disk layout: `{K, A, m, kind, nu: [...], h: [[...], ...]}` with `h`
/// listed row-major over `(l, k)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "A")]
    pub a: f64,
    pub m: usize,
    pub kind: ModelKind,
    pub nu: Vec<f64>,
    pub h: Vec<Vec<f64>>,
}

impl From<&ModelParams> for ModelFile {
    fn from(p: &ModelParams) -> Self {
        ModelFile {
            k: p.dim(),
            a: p.support_end(),
            m: p.cells(),
            kind: p.kind,
            nu: p.nu.clone(),
            h: p.h.iter().map(|g| g.values().to_vec()).collect(),
        }
    }
}

impl From<ModelParams> for ModelFile {
    fn from(p: ModelParams) -> Self {
        ModelFile::from(&p)
    }
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.nu.len() != file.k {
            return Err(Error::InvalidInput(format!(
                "K = {} but nu has {} entries",
                file.k,
                file.nu.len()
            )));
        }
        if file.h.iter().any(|row| row.len() != file.m) {
            return Err(Error::InvalidInput(format!("every kernel must have m = {} values", file.m)));
        }
        let h = file
            .h
            .into_iter()
            .map(|values| GridFunction::new(file.a, values))
            .collect::<Result<Vec<_>>>()?;
        ModelParams::new(file.nu, h, file.kind)
    }
}

/// Spectral radius of a nonnegative square matrix.
///
/// Power iteration runs on `M + I`, whose Perron root `r + 1` strictly
/// dominates for nonnegative `M`, with Collatz–Wielandt bounds as the stopping
/// rule. Reducible matrices that stall fall back to a Schur decomposition.
pub fn spectral_radius(matrix: &DMatrix<f64>) -> Result<f64> {
    if !matrix.is_square() {
        return Err(Error::InvalidInput(format!(
            "spectral radius needs a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("spectral radius expects finite nonnegative entries".into()));
    }
    let n = matrix.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if matrix.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    const MAX_ITER: usize = 10_000;
    const TOL: f64 = 1e-12;

    let shifted = matrix + DMatrix::<f64>::identity(n, n);
    let mut x = nalgebra::DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..MAX_ITER {
        let y = &shifted * &x;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut positive = true;
        for i in 0..n {
            if x[i] <= 0.0 {
                positive = false;
                break;
            }
            let ratio = y[i] / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if !positive {
            break;
        }
        if hi - lo <= TOL * hi {
            return Ok(0.5 * (lo + hi) - 1.0);
        }
        let norm = y.sum();
        x = y / norm;
    }
    // Reducible structure can leave zero components or slow convergence.
    let eig = matrix.clone().complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Stationary mean intensities `μ = (I − ρᵀ)⁻¹ ν` of a linear model.
pub fn stationary_rates(params: &ModelParams) -> Result<Vec<f64>> {
    if params.kind() != ModelKind::Linear {
        return Err(Error::InvalidInput(
            "closed-form stationary rates need the linear model".into(),
        ));
    }
    let rho = params.rho();
    let r = spectral_radius(&rho)?;
    if r >= 1.0 {
        return Err(Error::NotStationary(r));
    }
    let n = params.dim();
    let system = DMatrix::<f64>::identity(n, n) - rho.transpose();
    let rhs = nalgebra::DVector::from_column_slice(params.nu());
    let mu = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("I - rho^T".into()))?;
    Ok(mu.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_model(nu: f64, height: f64) -> ModelParams {
        ModelParams::new(
            vec![nu],
            vec![GridFunction::constant(1.0, 4, height)],
            ModelKind::Linear,
        )
        .unwrap()
    }

    #[test]
    fn spectral_radius_examples() {
        let one = DMatrix::from_row_slice(1, 1, &[0.5]);
        assert_eq!(spectral_radius(&one).unwrap(), 0.5);
        assert_eq!(spectral_radius(&DMatrix::zeros(2, 2)).unwrap(), 0.0);
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.1, 0.3]);
        let expected = (0.8 + 0.12f64.sqrt()) / 2.0;
        let got = spectral_radius(&m).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn spectral_radius_periodic_and_reducible() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0]);
        assert!((spectral_radius(&swap).unwrap() - 0.7).abs() < 1e-10);
        let triangular = DMatrix::from_row_slice(2, 2, &[0.2, 0.9, 0.0, 0.4]);
        assert!((spectral_radius(&triangular).unwrap() - 0.4).abs() < 1e-10);
        let nilpotent = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&nilpotent).unwrap().abs() < 1e-10);
    }

    #[test]
    fn spectral_radius_rejects_non_square() {
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
        assert!(spectral_radius(&DMatrix::from_row_slice(1, 1, &[-0.1])).is_err());
    }

    #[test]
    fn stationary_rate_examples() {
        assert_eq!(stationary_rates(&box_model(1.0, 0.0)).unwrap(), vec![1.0]);
        let mu = stationary_rates(&box_model(1.0, 0.5)).unwrap();
        assert!((mu[0] - 2.0).abs() < 1e-12);

        let h = vec![
            GridFunction::constant(1.0, 2, 0.5),
            GridFunction::zeros(1.0, 2),
            GridFunction::zeros(1.0, 2),
            GridFunction::constant(1.0, 2, 0.5),
        ];
        let p = ModelParams::new(vec![1.0, 1.0], h, ModelKind::Linear).unwrap();
        let mu = stationary_rates(&p).unwrap();
        assert!((mu[0] - 2.0).abs() < 1e-12 && (mu[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_rates_reject_explosive() {
        assert!(matches!(
            stationary_rates(&box_model(1.0, 1.2)),
            Err(Error::NotStationary(_))
        ));
    }

    #[test]
    fn validate_membership() {
        assert!(box_model(1.0, 0.5).validate().is_ok());
        assert!(box_model(1.0, -0.1).validate().is_err());
        let relu = ModelParams::new(
            vec![0.5],
            vec![GridFunction::new(1.0, vec![-0.4, 0.3]).unwrap()],
            ModelKind::Relu,
        )
        .unwrap();
        assert!(relu.validate().is_ok());
        let bad = ModelParams::new(
            vec![0.5],
            vec![GridFunction::new(1.0, vec![-0.6, 0.3]).unwrap()],
            ModelKind::Relu,
        )
        .unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let h = vec![
            GridFunction::new(2.0, vec![0.1, 0.2]).unwrap(),
            GridFunction::new(2.0, vec![0.0, 0.3]).unwrap(),
            GridFunction::new(2.0, vec![0.05, 0.0]).unwrap(),
            GridFunction::new(2.0, vec![0.2, 0.2]).unwrap(),
        ];
        let p = ModelParams::new(vec![1.0, 0.5], h, ModelKind::Linear).unwrap();
        let text = p.to_json().unwrap();
        assert!(text.contains("\"K\""));
        let back = ModelParams::from_json(&text).unwrap();
        assert_eq!(p, back);
        assert_eq!(back.kernel(0, 1).values(), &[0.0, 0.3]);
    }
}
