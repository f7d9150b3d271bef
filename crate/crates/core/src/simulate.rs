//! Exact simulation of stationary Hawkes paths.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::model::{spectral_radius, ModelKind, ModelParams};
use crate::rng::seeded_rng;
use crate::stream::EventStream;

/// Burn-in used when callers do not pick one, in units of `A`.
pub const DEFAULT_BURN_IN_FACTOR: f64 = 50.0;

const BOUND_LIMIT: f64 = 1e12;

/// Ogata thinning on `[−A − burn_in, T]`; events before `−A` are discarded.
///
/// The dominating rate between events is `Σ_k ν_k + Σ_{recent} max h⁺`, which
/// is valid because kernels of events older than `A` vanish.
pub fn simulate_thinning(
    params: &ModelParams,
    horizon: f64,
    burn_in: f64,
    seed: u64,
) -> Result<EventStream> {
    params.validate()?;
    if !(horizon >= 0.0) || !(burn_in >= 0.0) {
        return Err(Error::InvalidInput("horizon and burn-in must be nonnegative".into()));
    }
    let dim = params.dim();
    let a = params.support_end();
    let start = -a - burn_in;
    let mut rng = seeded_rng(seed, 0);

    // max h⁺_{l,k}, summed over k: jump of the dominating rate per mark-l event.
    let bump: Vec<f64> = (0..dim)
        .map(|l| {
            (0..dim)
                .map(|k| params.kernel(l, k).positive_part().sup_norm())
                .sum()
        })
        .collect();
    let base: f64 = params.nu().iter().sum();

    let mut recent: VecDeque<(f64, usize)> = VecDeque::new();
    let mut events = Vec::new();
    let mut t = start;
    let mut lambda = vec![0.0; dim];
    loop {
        while let Some(&(u, _)) = recent.front() {
            if u < t - a {
                recent.pop_front();
            } else {
                break;
            }
        }
        let bound = base + recent.iter().map(|&(_, l)| bump[l]).sum::<f64>();
        if !bound.is_finite() || bound > BOUND_LIMIT {
            return Err(Error::BoundOverflow(bound));
        }
        let wait = Exp::new(bound)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sample(&mut rng);
        t += wait;
        if t > horizon {
            break;
        }
        let mut total = 0.0;
        for (k, slot) in lambda.iter_mut().enumerate() {
            let mut value = params.nu()[k];
            for &(u, l) in &recent {
                value += params.kernel(l, k).eval(t - u);
            }
            if params.kind() == ModelKind::Relu {
                value = value.max(0.0);
            }
            *slot = value;
            total += value;
        }
        let draw = rng.random::<f64>() * bound;
        if draw < total {
            let mut acc = 0.0;
            let mut mark = dim - 1;
            for (k, &v) in lambda.iter().enumerate() {
                acc += v;
                if draw < acc {
                    mark = k;
                    break;
                }
            }
            recent.push_back((t, mark));
            if t >= -a {
                events.push((t, mark));
            }
        }
    }
    EventStream::new(events, dim, -a, horizon)
}

/// Cluster (immigrant–offspring) simulation of a linear model.
///
/// Immigrants of mark `k` arrive as Poisson(ν_k) on an enlarged window
/// `[−A − 10A/(1 − r(ρ)), T]`; each point of mark `l` has Poisson(ρ_{l,k})
/// children of mark `k`, displaced by the density `h_{l,k}/ρ_{l,k}`.
pub fn simulate_cluster(params: &ModelParams, horizon: f64, seed: u64) -> Result<EventStream> {
    if params.kind() != ModelKind::Linear {
        return Err(Error::InvalidInput("cluster simulation needs the linear model".into()));
    }
    params.validate()?;
    let dim = params.dim();
    let a = params.support_end();
    let rho = params.rho();
    let r = spectral_radius(&rho)?;
    let start = -a - 10.0 * a / (1.0 - r);
    let mut rng = seeded_rng(seed, 1);

    let mut pending: Vec<(f64, usize)> = Vec::new();
    for k in 0..dim {
        let mean = params.nu()[k] * (horizon - start);
        let n = poisson_count(mean, &mut rng)?;
        for _ in 0..n {
            pending.push((rng.random_range(start..horizon), k));
        }
    }

    let offspring: Vec<Option<(Poisson<f64>, WeightedIndex<f64>)>> = (0..dim * dim)
        .map(|idx| {
            let (l, k) = (idx / dim, idx % dim);
            let mass = rho[(l, k)];
            if mass <= 0.0 {
                return Ok(None);
            }
            let poisson = Poisson::new(mass).map_err(|e| Error::Numerical(e.to_string()))?;
            let cells = WeightedIndex::new(params.kernel(l, k).values())
                .map_err(|e| Error::Numerical(e.to_string()))?;
            Ok(Some((poisson, cells)))
        })
        .collect::<Result<_>>()?;
    let width = params.kernel(0, 0).cell_width();

    let mut events = Vec::new();
    while let Some((t, l)) = pending.pop() {
        if t >= -a {
            events.push((t, l));
        }
        for k in 0..dim {
            let Some((poisson, cells)) = &offspring[l * dim + k] else {
                continue;
            };
            let n = poisson.sample(&mut rng) as usize;
            for _ in 0..n {
                let c = cells.sample(&mut rng);
                let child = t + (c as f64 + rng.random::<f64>()) * width;
                if child <= horizon {
                    pending.push((child, k));
                }
            }
        }
    }
    EventStream::new(events, dim, -a, horizon)
}

fn poisson_count<R: Rng>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(d.sample(rng) as usize)
}
