//! Piecewise-constant functions on a uniform grid of `[0, A]`.
//!
//! Every interaction function, perturbation direction and basis element in
//! the crate is stored this way, which keeps integrals and inner products
//! exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A function on `[0, A]`, constant on each of `m` equal cells.
///
/// Cell `c` covers `[cδ, (c+1)δ)` with `δ = A/m`; the last cell is closed at
/// `A`. Outside `[0, A]` the function is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    support_end: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(support_end: f64, values: Vec<f64>) -> Result<Self> {
        if !(support_end > 0.0 && support_end.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "support end must be positive and finite, got {support_end}"
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one cell".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite grid value {v}")));
        }
        Ok(Self {
            support_end,
            values,
        })
    }

    pub fn zeros(support_end: f64, cells: usize) -> Self {
        Self::constant(support_end, cells, 0.0)
    }

    pub fn constant(support_end: f64, cells: usize, value: f64) -> Self {
        assert!(support_end > 0.0 && cells > 0);
        Self {
            support_end,
            values: vec![value; cells],
        }
    }

    /// Samples `f` at cell midpoints.
    pub fn from_fn(support_end: f64, cells: usize, f: impl Fn(f64) -> f64) -> Self {
        let width = support_end / cells as f64;
        let values = (0..cells).map(|c| f((c as f64 + 0.5) * width)).collect();
        Self {
            support_end,
            values,
        }
    }

    #[inline]
    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn cell_width(&self) -> f64 {
        self.support_end / self.values.len() as f64
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Index of the cell holding `x`, or `None` outside `[0, A]`.
    #[inline]
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(0.0..=self.support_end).contains(&x) {
            return None;
        }
        let c = (x / self.cell_width()) as usize;
        Some(c.min(self.values.len() - 1))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.cell_of(x).map_or(0.0, |c| self.values[c])
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.cells() == other.cells() && self.support_end == other.support_end
    }

    pub fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[0,{}] with {} cells vs [0,{}] with {} cells",
                self.support_end,
                self.cells(),
                other.support_end,
                other.cells()
            )))
        }
    }

    pub fn integral(&self) -> f64 {
        self.cell_width() * self.values.iter().sum::<f64>()
    }

    /// Exact `∫_a^b f(x) dx` for any `a <= b`; the part outside `[0, A]`
    /// contributes nothing.
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(0.0);
        let hi = b.min(self.support_end);
        if hi <= lo {
            return 0.0;
        }
        let w = self.cell_width();
        let m = self.values.len();
        let first = ((lo / w) as usize).min(m - 1);
        let last = ((hi / w) as usize).min(m - 1);
        if first == last {
            return self.values[first] * (hi - lo);
        }
        let mut total = self.values[first] * ((first + 1) as f64 * w - lo);
        for c in first + 1..last {
            total += self.values[c] * w;
        }
        total + self.values[last] * (hi - last as f64 * w)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.cell_width() * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn positive_part(&self) -> GridFunction {
        self.map(|v| v.max(0.0))
    }

    pub fn negative_part(&self) -> GridFunction {
        self.map(|v| (-v).max(0.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            support_end: self.support_end,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> GridFunction {
        self.map(|v| v * factor)
    }

    /// `self + factor * other` on a shared grid.
    pub fn axpy(&self, factor: f64, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_grid(other)?;
        Ok(GridFunction {
            support_end: self.support_end,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + factor * b)
                .collect(),
        })
    }

    /// Exact `∫ f g` for piecewise-constant functions on possibly different
    /// grids of the same support, by walking the merged breakpoints.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        self.merged_integral(other, |a, b| a * b)
    }

    /// Exact `∫ (f - g)²` across grids of the same support.
    pub fn l2_distance_sq(&self, other: &GridFunction) -> Result<f64> {
        self.merged_integral(other, |a, b| (a - b) * (a - b))
    }

    fn merged_integral(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        if self.support_end != other.support_end {
            return Err(Error::GridMismatch(format!(
                "supports [0,{}] and [0,{}]",
                self.support_end, other.support_end
            )));
        }
        if self.cells() == other.cells() {
            let w = self.cell_width();
            return Ok(w * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .sum::<f64>());
        }
        let (m1, m2) = (self.cells(), other.cells());
        let (w1, w2) = (self.cell_width(), other.cell_width());
        let (mut i, mut j) = (0usize, 0usize);
        let mut pos = 0.0;
        let mut total = 0.0;
        while i < m1 && j < m2 {
            let end1 = if i + 1 == m1 { self.support_end } else { (i + 1) as f64 * w1 };
            let end2 = if j + 1 == m2 { self.support_end } else { (j + 1) as f64 * w2 };
            let end = end1.min(end2);
            total += f(self.values[i], other.values[j]) * (end - pos);
            pos = end;
            // Advance every grid whose cell ends here; compare on the integer
            // lattice to avoid rounding drift.
            let adv1 = (i + 1) * m2 <= (j + 1) * m1;
            let adv2 = (j + 1) * m1 <= (i + 1) * m2;
            if adv1 {
                i += 1;
            }
            if adv2 {
                j += 1;
            }
        }
        Ok(total)
    }

    /// Resamples onto `cells` cells by exact cell averages.
    pub fn resample(&self, cells: usize) -> GridFunction {
        let w = self.support_end / cells as f64;
        let values = (0..cells)
            .map(|c| self.integral_between(c as f64 * w, (c + 1) as f64 * w) / w)
            .collect();
        GridFunction {
            support_end: self.support_end,
            values,
        }
    }
}
