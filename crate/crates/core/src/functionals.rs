//! Smooth functionals `ψ(f)` and their `L₂` Riesz representors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::likelihood::Direction;
use crate::model::ModelParams;

/// Indices are 0-based; the text form uses 1-based marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalSpec {
    /// `ψ = ν_k`.
    Background { k: usize },
    /// `ψ = ∫ h_{l,k}²`.
    SquaredL2 { l: usize, k: usize },
    /// `ψ = ∫ a · h_{l,k}`.
    Linear { l: usize, k: usize, a: GridFunction },
}

impl FunctionalSpec {
    /// Parses `background k`, `squared_l2 l k` or `linear l k [a₁ … a_n]`.
    ///
    /// For `linear` the optional values are the cells of `a` on `[0, A]`;
    /// without them `a ≡ 1`.
    pub fn parse(text: &str, support_end: f64) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let index = |i: usize| -> Result<usize> {
            let w = words
                .get(i)
                .ok_or_else(|| Error::Config(format!("functional `{text}` is missing an index")))?;
            let v: usize = w
                .parse()
                .map_err(|_| Error::Config(format!("bad mark index `{w}` in functional `{text}`")))?;
            if v == 0 {
                return Err(Error::Config("functional marks are 1-based".into()));
            }
            Ok(v - 1)
        };
        match words.first().copied() {
            Some("background") if words.len() == 2 => Ok(Self::Background { k: index(1)? }),
            Some("squared_l2") if words.len() == 3 => Ok(Self::SquaredL2 {
                l: index(1)?,
                k: index(2)?,
            }),
            Some("linear") if words.len() >= 3 => {
                let values = if words.len() == 3 {
                    vec![1.0]
                } else {
                    words[3..]
                        .iter()
                        .map(|w| {
                            w.parse::<f64>()
                                .map_err(|_| Error::Config(format!("bad weight `{w}` in functional `{text}`")))
                        })
                        .collect::<Result<_>>()?
                };
                Ok(Self::Linear {
                    l: index(1)?,
                    k: index(2)?,
                    a: GridFunction::new(support_end, values)?,
                })
            }
            _ => Err(Error::Config(format!("unrecognised functional `{text}`"))),
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        let dim = params.dim();
        let ok = match self {
            Self::Background { k } => *k < dim,
            Self::SquaredL2 { l, k } | Self::Linear { l, k, .. } => *l < dim && *k < dim,
        };
        if !ok {
            return Err(Error::InvalidInput(format!("functional `{self}` refers to a mark beyond K = {dim}")));
        }
        if let Self::Linear { a, .. } = self {
            if a.support_end() != params.support_end() {
                return Err(Error::GridMismatch("weight and kernel supports differ".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Background { k } => write!(f, "background {}", k + 1),
            Self::SquaredL2 { l, k } => write!(f, "squared_l2 {} {}", l + 1, k + 1),
            Self::Linear { l, k, a } => {
                write!(f, "linear {} {}", l + 1, k + 1)?;
                if a.cells() != 1 || a.values()[0] != 1.0 {
                    for v in a.values() {
                        write!(f, " {v}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

pub fn eval_functional(spec: &FunctionalSpec, params: &ModelParams) -> Result<f64> {
    spec.check(params)?;
    match spec {
        FunctionalSpec::Background { k } => Ok(params.nu()[*k]),
        FunctionalSpec::SquaredL2 { l, k } => Ok(params.kernel(*l, *k).l2_norm_sq()),
        FunctionalSpec::Linear { l, k, a } => a.inner(params.kernel(*l, *k)),
    }
}

/// `ψ̃⁰₂`: `(e_k, 0)`, `(0, 2h⁰_{l,k} E_{l,k})` or `(0, a E_{l,k})`.
///
/// The direction lives on the model grid, except for a weight whose grid does
/// not refine into it, in which case the weight grid is used.
pub fn riesz_representor(spec: &FunctionalSpec, f0: &ModelParams) -> Result<Direction> {
    spec.check(f0)?;
    let dim = f0.dim();
    let (a_end, cells) = (f0.support_end(), f0.cells());
    Ok(match spec {
        FunctionalSpec::Background { k } => Direction::unit_rate(dim, *k, a_end, cells),
        FunctionalSpec::SquaredL2 { l, k } => Direction::single_kernel(dim, *l, *k, f0.kernel(*l, *k).scaled(2.0)),
        FunctionalSpec::Linear { l, k, a } => {
            let g = if cells % a.cells() == 0 {
                GridFunction::from_fn(a_end, cells, |x| a.eval(x))
            } else {
                a.clone()
            };
            Direction::single_kernel(dim, *l, *k, g)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn model(nu: Vec<f64>, h: f64) -> ModelParams {
        let dim = nu.len();
        ModelParams::new(nu, vec![GridFunction::constant(1.0, 2, h); dim * dim], ModelKind::Linear).unwrap()
    }

    #[test]
    fn evaluation_examples() {
        let p = model(vec![2.0, 3.0], 1.0);
        assert_eq!(eval_functional(&FunctionalSpec::Background { k: 0 }, &p).unwrap(), 2.0);
        assert_eq!(eval_functional(&FunctionalSpec::SquaredL2 { l: 0, k: 1 }, &p).unwrap(), 1.0);
        let p = model(vec![1.0], 0.5);
        let lin = FunctionalSpec::Linear {
            l: 0,
            k: 0,
            a: GridFunction::constant(1.0, 1, 0.5),
        };
        assert_eq!(eval_functional(&lin, &p).unwrap(), 0.25);
    }

    #[test]
    fn representors() {
        let p = model(vec![2.0, 3.0], 0.5);
        let d = riesz_representor(&FunctionalSpec::Background { k: 1 }, &p).unwrap();
        assert_eq!(d.xi(), &[0.0, 1.0]);
        assert!(d.kernels().iter().all(|g| g.sup_norm() == 0.0));

        let d = riesz_representor(&FunctionalSpec::SquaredL2 { l: 1, k: 0 }, &p).unwrap();
        assert_eq!(d.g(1, 0).values(), &[1.0, 1.0]);
        assert_eq!(d.g(0, 0).sup_norm(), 0.0);

        let a = GridFunction::new(1.0, vec![0.0, 3.0]).unwrap();
        let d = riesz_representor(&FunctionalSpec::Linear { l: 0, k: 1, a: a.clone() }, &p).unwrap();
        assert_eq!(d.g(0, 1), &a);
    }

    #[test]
    fn parsing() {
        assert_eq!(
            FunctionalSpec::parse("squared_l2 1 2", 1.0).unwrap(),
            FunctionalSpec::SquaredL2 { l: 0, k: 1 }
        );
        let lin = FunctionalSpec::parse("linear 1 1", 2.0).unwrap();
        assert_eq!(lin.to_string(), "linear 1 1");
        let weighted = FunctionalSpec::parse("linear 2 1 0.5 1.5", 1.0).unwrap();
        assert_eq!(FunctionalSpec::parse(&weighted.to_string(), 1.0).unwrap(), weighted);
        for bad in ["", "background", "background 0", "linear 1", "median 1", "linear 1 1 x"] {
            assert!(FunctionalSpec::parse(bad, 1.0).is_err(), "{bad}");
        }
        let p = model(vec![1.0], 0.5);
        assert!(eval_functional(&FunctionalSpec::Background { k: 3 }, &p).is_err());
    }
}
