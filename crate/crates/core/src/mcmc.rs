//! Reversible-jump Metropolis–Hastings sampler over `(ν, J, θ)`.
//!
//! One sweep updates every `ν_k` by a log-scale random walk, every
//! coefficient block `θ_{l,k}` by a Gaussian random walk and, with
//! probability `p_J`, proposes a change of dimension. Histogram dimension
//! moves go between regular partitions with `j` and `j + 1` bins: the
//! birth map averages the current step function over the finer bins and
//! adds one fresh coordinate along the direction the averaging cannot
//! reach. Haar moves add or drop the finest resolution level.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::functionals::{eval_functional, FunctionalSpec};
use crate::likelihood::log_likelihood;
use crate::model::{ModelKind, ModelParams};
use crate::priors::{log_prior, sample_prior_with, BasisKind, PriorSpec, SeriesState};
use crate::renewal::max_window_count_by_mark;
use crate::rng::seeded_rng;
use crate::stats::{mean_sd, quantile};
use crate::stream::EventStream;

/// Per-path data reused by every likelihood evaluation.
///
/// For each event in `]0, T]` it stores the marks and lags of the events in
/// its memory window; per-mark exposures `Σ_u |cell_c ∩ [−u, T−u]|` are
/// computed once per grid size. Together they give the exact log-likelihood
/// of any piecewise-constant model whose intensity cannot be clamped.
#[derive(Debug)]
pub struct LikelihoodCache {
    stream: EventStream,
    support_end: f64,
    event_marks: Vec<usize>,
    offsets: Vec<usize>,
    past_marks: Vec<usize>,
    past_lags: Vec<f64>,
    /// `(mark, lag range)` of every event that feeds the compensator.
    sources: Vec<(usize, f64, f64)>,
    max_counts: Vec<usize>,
    exposures: Mutex<HashMap<usize, Arc<Vec<Vec<f64>>>>>,
}

impl LikelihoodCache {
    pub fn new(stream: &EventStream, support_end: f64) -> Result<Self> {
        if !(support_end > 0.0) {
            return Err(Error::InvalidInput("memory length must be positive".into()));
        }
        if stream.window_start() > -support_end + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "stream starts at {} but the history needs [−{support_end}, 0]",
                stream.window_start()
            )));
        }
        let horizon = stream.horizon();
        let times = stream.times();
        let marks = stream.marks();
        let first = stream.upper_bound(0.0);
        let last = stream.upper_bound(horizon);
        let mut event_marks = Vec::with_capacity(last - first);
        let mut offsets = vec![0];
        let mut past_marks = Vec::new();
        let mut past_lags = Vec::new();
        for i in first..last {
            let t = times[i];
            event_marks.push(marks[i]);
            for p in stream.lower_bound(t - support_end)..i {
                past_marks.push(marks[p]);
                past_lags.push(t - times[p]);
            }
            offsets.push(past_marks.len());
        }
        let sources = (stream.lower_bound(-support_end)..stream.lower_bound(horizon))
            .map(|i| {
                let u = times[i];
                (marks[i], u.max(0.0) - u, horizon - u)
            })
            .collect();
        Ok(Self {
            max_counts: max_window_count_by_mark(stream, support_end, horizon),
            stream: stream.clone(),
            support_end,
            event_marks,
            offsets,
            past_marks,
            past_lags,
            sources,
            exposures: Mutex::new(HashMap::new()),
        })
    }

    pub fn stream(&self) -> &EventStream {
        &self.stream
    }

    pub fn horizon(&self) -> f64 {
        self.stream.horizon()
    }

    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    pub fn dim(&self) -> usize {
        self.stream.marks_count()
    }

    fn exposures(&self, cells: usize) -> Arc<Vec<Vec<f64>>> {
        let mut map = self.exposures.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(cells)
            .or_insert_with(|| {
                let width = self.support_end / cells as f64;
                let mut out = vec![vec![0.0; cells]; self.dim()];
                for &(l, lo, hi) in &self.sources {
                    let hi = hi.min(self.support_end);
                    if hi <= lo {
                        continue;
                    }
                    let c0 = ((lo / width) as usize).min(cells - 1);
                    let c1 = ((hi / width) as usize).min(cells - 1);
                    for c in c0..=c1 {
                        let start = if c == c0 { lo } else { c as f64 * width };
                        let end = if c == c1 { hi } else { (c + 1) as f64 * width };
                        out[l][c] += (end - start).max(0.0);
                    }
                }
                Arc::new(out)
            })
            .clone()
    }

    /// Whether the ReLU clamp may bind somewhere on `[0, T]`.
    fn may_clamp(&self, params: &ModelParams) -> bool {
        if params.kind() != ModelKind::Relu {
            return false;
        }
        let dim = params.dim();
        (0..dim).any(|k| {
            let worst: f64 = (0..dim)
                .map(|l| self.max_counts[l] as f64 * params.kernel(l, k).negative_part().sup_norm())
                .sum();
            params.nu()[k] - worst <= 0.0
        })
    }

    /// Exact `L_T(f)`, with `−∞` for a nonpositive intensity at an event.
    pub fn log_likelihood(&self, params: &ModelParams) -> f64 {
        if params.dim() != self.dim() || params.support_end() != self.support_end {
            return f64::NEG_INFINITY;
        }
        if self.may_clamp(params) {
            return log_likelihood(params, &self.stream, self.horizon());
        }
        let dim = params.dim();
        let mut total = 0.0;
        for (e, &k) in self.event_marks.iter().enumerate() {
            let mut lambda = params.nu()[k];
            for p in self.offsets[e]..self.offsets[e + 1] {
                lambda += params.kernel(self.past_marks[p], k).eval(self.past_lags[p]);
            }
            if !(lambda > 0.0) {
                return f64::NEG_INFINITY;
            }
            total += lambda.ln();
        }
        let exposure = self.exposures(params.cells());
        let mut compensator: f64 = params.nu().iter().sum::<f64>() * self.horizon();
        for l in 0..dim {
            for k in 0..dim {
                compensator += params
                    .kernel(l, k)
                    .values()
                    .iter()
                    .zip(&exposure[l])
                    .map(|(h, x)| h * x)
                    .sum::<f64>();
            }
        }
        total - compensator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub nu: Vec<f64>,
    pub j: usize,
    pub theta: Vec<Vec<f64>>,
    pub log_lik: f64,
    pub log_prior: f64,
}

impl ChainState {
    /// Scores `series` against the data; the likelihood is skipped outside
    /// the prior support.
    pub fn evaluate(series: SeriesState, cache: &LikelihoodCache, prior: &PriorSpec) -> Self {
        let lp = log_prior(&series, prior, cache.support_end());
        let ll = if lp.is_finite() {
            series
                .to_params(prior, cache.support_end())
                .map_or(f64::NEG_INFINITY, |p| cache.log_likelihood(&p))
        } else {
            f64::NEG_INFINITY
        };
        Self {
            nu: series.nu,
            j: series.j,
            theta: series.theta,
            log_lik: ll,
            log_prior: lp,
        }
    }

    pub fn log_posterior(&self) -> f64 {
        let v = self.log_lik + self.log_prior;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    pub fn series(&self) -> SeriesState {
        SeriesState {
            nu: self.nu.clone(),
            j: self.j,
            theta: self.theta.clone(),
        }
    }
}

fn default_thin() -> usize {
    5
}
fn default_p_jump() -> f64 {
    0.2
}
fn default_split_sd() -> f64 {
    0.25
}
fn default_step() -> f64 {
    0.1
}
fn default_target() -> f64 {
    0.3
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    /// Defaults to 20% of `iterations`.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub seed: u64,
    #[serde(default = "default_p_jump")]
    pub p_jump: f64,
    /// Standard deviation of the auxiliary coordinate in dimension moves.
    #[serde(default = "default_split_sd")]
    pub split_sd: f64,
    #[serde(default = "default_step")]
    pub nu_step: f64,
    #[serde(default = "default_step")]
    pub theta_step: f64,
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    #[serde(default = "default_true")]
    pub update_nu: bool,
    #[serde(default)]
    pub initial: Option<SeriesState>,
}

impl McmcConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in: None,
            thin: default_thin(),
            seed,
            p_jump: default_p_jump(),
            split_sd: default_split_sd(),
            nu_step: default_step(),
            theta_step: default_step(),
            target_acceptance: default_target(),
            update_nu: true,
            initial: None,
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.burn_in() > self.iterations {
            return Err(Error::Config("need thin ≥ 1 and burn_in ≤ iterations".into()));
        }
        if !(0.0..=1.0).contains(&self.p_jump) || !(self.split_sd > 0.0) {
            return Err(Error::Config("p_jump must lie in [0, 1] and split_sd be positive".into()));
        }
        if !(self.nu_step > 0.0 && self.theta_step > 0.0) {
            return Err(Error::Config("proposal steps must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub nu: MoveStats,
    pub theta: MoveStats,
    pub birth: MoveStats,
    pub death: MoveStats,
}

impl Acceptance {
    pub fn named(&self) -> [(&'static str, MoveStats); 4] {
        [
            ("nu", self.nu),
            ("theta", self.theta),
            ("birth", self.birth),
            ("death", self.death),
        ]
    }
}

/// Proposal scales and move statistics carried across sweeps.
#[derive(Debug, Clone)]
pub struct Tuning {
    pub nu_log_step: Vec<f64>,
    pub theta_log_step: Vec<f64>,
    pub p_jump: f64,
    pub split_sd: f64,
    pub target: f64,
    pub update_nu: bool,
    /// Robbins–Monro adaptation switch; off after burn-in.
    pub adapt: bool,
    pub acceptance: Acceptance,
    nu_visits: Vec<u64>,
    theta_visits: Vec<u64>,
}

impl Tuning {
    pub fn new(dim: usize, config: &McmcConfig) -> Self {
        Self {
            nu_log_step: vec![config.nu_step.ln(); dim],
            theta_log_step: vec![config.theta_step.ln(); dim * dim],
            p_jump: config.p_jump,
            split_sd: config.split_sd,
            target: config.target_acceptance,
            update_nu: config.update_nu,
            adapt: false,
            acceptance: Acceptance::default(),
            nu_visits: vec![0; dim],
            theta_visits: vec![0; dim * dim],
        }
    }

    fn adapt_step(log_step: &mut f64, visits: &mut u64, accepted: bool, target: f64) {
        *visits += 1;
        let gain = (*visits as f64 + 1.0).powf(-0.6);
        *log_step = (*log_step + gain * (f64::from(u8::from(accepted)) - target)).clamp(-12.0, 3.0);
    }
}

fn metropolis<R: Rng + ?Sized>(current: &ChainState, proposal: &ChainState, log_extra: f64, rng: &mut R) -> bool {
    let target = proposal.log_posterior();
    if target == f64::NEG_INFINITY {
        return false;
    }
    let log_alpha = target - current.log_posterior() + log_extra;
    if log_alpha.is_nan() {
        return false;
    }
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One sweep of the sampler.
pub fn mcmc_step<R: Rng + ?Sized>(
    state: ChainState,
    cache: &LikelihoodCache,
    prior: &PriorSpec,
    tuning: &mut Tuning,
    rng: &mut R,
) -> ChainState {
    let dim = state.nu.len();
    let mut state = state;

    if tuning.update_nu {
        for k in 0..dim {
            let step = tuning.nu_log_step[k].exp();
            let mut series = state.series();
            let log_ratio = step * normal(rng);
            series.nu[k] *= log_ratio.exp();
            let proposal = ChainState::evaluate(series, cache, prior);
            let accepted = metropolis(&state, &proposal, log_ratio, rng);
            tuning.acceptance.nu.record(accepted);
            if tuning.adapt {
                Tuning::adapt_step(&mut tuning.nu_log_step[k], &mut tuning.nu_visits[k], accepted, tuning.target);
            }
            if accepted {
                state = proposal;
            }
        }
    }

    for b in 0..dim * dim {
        let step = tuning.theta_log_step[b].exp();
        let mut series = state.series();
        series.theta[b].iter_mut().for_each(|t| *t += step * normal(rng));
        let proposal = ChainState::evaluate(series, cache, prior);
        let accepted = metropolis(&state, &proposal, 0.0, rng);
        tuning.acceptance.theta.record(accepted);
        if tuning.adapt {
            Tuning::adapt_step(&mut tuning.theta_log_step[b], &mut tuning.theta_visits[b], accepted, tuning.target);
        }
        if accepted {
            state = proposal;
        }
    }

    if tuning.p_jump > 0.0 && rng.random::<f64>() < tuning.p_jump {
        state = dimension_move(state, cache, prior, tuning, rng);
    }
    state
}

/// `(q_birth, q_death)` at dimension index `j`.
fn move_probabilities(prior: &PriorSpec, j: usize) -> (f64, f64) {
    let (lo, hi) = (prior.j_min(), prior.j_max);
    match (j <= lo, j >= hi) {
        (true, true) => (0.0, 0.0),
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        (false, false) => (0.5, 0.5),
    }
}

fn dimension_move<R: Rng + ?Sized>(
    state: ChainState,
    cache: &LikelihoodCache,
    prior: &PriorSpec,
    tuning: &mut Tuning,
    rng: &mut R,
) -> ChainState {
    let (q_birth, q_death) = move_probabilities(prior, state.j);
    if q_birth + q_death == 0.0 {
        return state;
    }
    let sd = tuning.split_sd;
    let birth = rng.random::<f64>() < q_birth;
    let mut series = state.series();
    let (log_extra, accepted) = if birth {
        let target = state.j + 1;
        let blocks = series.theta.len();
        let u: Vec<Vec<f64>> = match prior.basis {
            BasisKind::Histogram => (0..blocks).map(|_| vec![sd * normal(rng)]).collect(),
            BasisKind::Haar => {
                let extra = prior.coefficients(target) - prior.coefficients(state.j);
                (0..blocks).map(|_| (0..extra).map(|_| sd * normal(rng)).collect()).collect()
            }
        };
        let log_jac = match grow(prior.basis, state.j, &mut series.theta, &u) {
            Ok(v) => v,
            Err(_) => return state,
        };
        series.j = target;
        let log_q_u: f64 = u.iter().flatten().map(|&x| gaussian_log_pdf(x, sd)).sum();
        let (_, q_back) = move_probabilities(prior, target);
        let extra = q_back.ln() - q_birth.ln() - log_q_u + log_jac;
        let proposal = ChainState::evaluate(series, cache, prior);
        let ok = metropolis(&state, &proposal, extra, rng);
        tuning.acceptance.birth.record(ok);
        (proposal, ok)
    } else {
        let target = state.j - 1;
        let (u, log_jac) = match shrink(prior.basis, target, &mut series.theta) {
            Ok(v) => v,
            Err(_) => return state,
        };
        series.j = target;
        let log_q_u: f64 = u.iter().flatten().map(|&x| gaussian_log_pdf(x, sd)).sum();
        let (q_back, _) = move_probabilities(prior, target);
        let extra = q_back.ln() - q_death.ln() + log_q_u - log_jac;
        let proposal = ChainState::evaluate(series, cache, prior);
        let ok = metropolis(&state, &proposal, extra, rng);
        tuning.acceptance.death.record(ok);
        (proposal, ok)
    };
    if accepted {
        log_extra
    } else {
        state
    }
}

fn gaussian_log_pdf(x: f64, sd: f64) -> f64 {
    -0.5 * (x / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Linear birth map between histograms with `j` and `j + 1` regular bins.
#[derive(Debug, Clone)]
pub struct SplitMap {
    /// `M[r][i] = |bin'_r ∩ bin_i| / |bin'_r|`: finer-bin averages.
    pub averaging: DMatrix<f64>,
    /// Unit vector spanning the orthogonal complement of `range(M)`.
    pub fresh: DVector<f64>,
    /// `(MᵀM)⁻¹Mᵀ`, the inverse on `range(M)`.
    pub left_inverse: DMatrix<f64>,
    /// `log |det [M e]|`.
    pub log_det: f64,
}

pub fn split_map(j: usize) -> Result<SplitMap> {
    if j == 0 {
        return Err(Error::InvalidInput("split map needs j ≥ 1".into()));
    }
    let n = j + 1;
    // Work on the integer lattice [0, j(j+1)]: old bin i is [i(j+1), (i+1)(j+1)],
    // new bin r is [rj, (r+1)j].
    let averaging = DMatrix::from_fn(n, j, |r, i| {
        let lo = (r * j).max(i * n);
        let hi = ((r + 1) * j).min((i + 1) * n);
        hi.saturating_sub(lo) as f64 / j as f64
    });
    let mtm = averaging.transpose() * &averaging;
    let left_inverse = mtm
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("split map normal equations".into()))?
        .solve(&averaging.transpose());
    let projector = DMatrix::identity(n, n) - &averaging * &left_inverse;
    let col = (0..n)
        .max_by(|&a, &b| projector[(a, a)].total_cmp(&projector[(b, b)]))
        .expect("nonempty");
    let mut fresh = projector.column(col).into_owned();
    fresh /= fresh.norm();
    let lead = fresh.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
    if lead < 0.0 {
        fresh = -fresh;
    }
    let mut full = DMatrix::zeros(n, n);
    full.view_mut((0, 0), (n, j)).copy_from(&averaging);
    full.set_column(j, &fresh);
    let det = full.lu().determinant();
    if !(det.abs() > 0.0) {
        return Err(Error::Singular("split map".into()));
    }
    Ok(SplitMap {
        averaging,
        fresh,
        left_inverse,
        log_det: det.abs().ln(),
    })
}

/// Applies the birth map at index `j` to every block in place and returns
/// the log-Jacobian of `(θ, u) ↦ θ'` over all blocks.
pub fn grow(basis: BasisKind, j: usize, theta: &mut [Vec<f64>], u: &[Vec<f64>]) -> Result<f64> {
    match basis {
        BasisKind::Histogram => {
            let map = split_map(j)?;
            for (block, extra) in theta.iter_mut().zip(u) {
                let current = DVector::from_column_slice(block);
                let next = &map.averaging * current + &map.fresh * extra[0];
                *block = next.as_slice().to_vec();
            }
            Ok(map.log_det * theta.len() as f64)
        }
        BasisKind::Haar => {
            for (block, extra) in theta.iter_mut().zip(u) {
                block.extend_from_slice(extra);
            }
            Ok(0.0)
        }
    }
}

/// Inverse of [`grow`]: maps blocks at index `target + 1` down to `target`
/// and returns the removed auxiliary coordinates with the forward
/// log-Jacobian.
pub fn shrink(basis: BasisKind, target: usize, theta: &mut [Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    match basis {
        BasisKind::Histogram => {
            let map = split_map(target)?;
            let mut removed = Vec::with_capacity(theta.len());
            for block in theta.iter_mut() {
                let current = DVector::from_column_slice(block);
                removed.push(vec![map.fresh.dot(&current)]);
                *block = (&map.left_inverse * current).as_slice().to_vec();
            }
            Ok((removed, map.log_det * theta.len() as f64))
        }
        BasisKind::Haar => {
            let keep = 1usize << (target + 1);
            let removed = theta.iter_mut().map(|b| b.split_off(keep)).collect();
            Ok((removed, 0.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iter: usize,
    pub j: usize,
    pub nu: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
}

impl Draw {
    pub fn series(&self) -> SeriesState {
        SeriesState {
            nu: self.nu.clone(),
            j: self.j,
            theta: self.theta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub dim: usize,
    pub support_end: f64,
    pub prior: PriorSpec,
    pub config: McmcConfig,
    pub config_hash: String,
    pub draws: Vec<Draw>,
    pub log_posterior: Vec<f64>,
    pub acceptance: Acceptance,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsSummary {
    pub seed: u64,
    pub config_hash: String,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
    pub acceptance: BTreeMap<String, f64>,
    pub j_counts: BTreeMap<usize, usize>,
    pub nu_mean: Vec<f64>,
    pub nu_sd: Vec<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn params(&self, i: usize) -> Result<ModelParams> {
        self.draws[i].series().to_params(&self.prior, self.support_end)
    }

    pub fn summary(&self) -> DrawsSummary {
        let mut j_counts = BTreeMap::new();
        for d in &self.draws {
            *j_counts.entry(d.j).or_insert(0) += 1;
        }
        let (nu_mean, nu_sd) = (0..self.dim)
            .map(|k| mean_sd(&self.draws.iter().map(|d| d.nu[k]).collect::<Vec<_>>()))
            .unzip();
        DrawsSummary {
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            iterations: self.config.iterations,
            burn_in: self.config.burn_in(),
            thin: self.config.thin,
            samples: self.draws.len(),
            acceptance: self
                .acceptance
                .named()
                .iter()
                .map(|(name, s)| (name.to_string(), s.rate()))
                .collect(),
            j_counts,
            nu_mean,
            nu_sd,
        }
    }

    /// Rows `iter,J,nu_1..nu_K,theta...`; the θ blocks follow in `(l, k)`
    /// row-major order, so row width varies with `J`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        let mut header = vec!["iter".to_string(), "J".to_string()];
        header.extend((1..=self.dim).map(|k| format!("nu_{k}")));
        header.push("theta".to_string());
        w.write_record(&header)?;
        for d in &self.draws {
            let mut row = vec![d.iter.to_string(), d.j.to_string()];
            row.extend(d.nu.iter().map(|v| v.to_string()));
            row.extend(d.theta.iter().flatten().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, dim: usize, prior: &PriorSpec) -> Result<Vec<Draw>> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let mut out = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::InvalidInput("short draws row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad draws field: {e}")))
            };
            let iter = parse(0)? as usize;
            let j = parse(1)? as usize;
            let n = prior.coefficients(j);
            if record.len() != 2 + dim + dim * dim * n {
                return Err(Error::InvalidInput(format!(
                    "draws row for J = {j} has {} fields",
                    record.len()
                )));
            }
            let nu = (0..dim).map(|k| parse(2 + k)).collect::<Result<Vec<_>>>()?;
            let theta = (0..dim * dim)
                .map(|b| (0..n).map(|c| parse(2 + dim + b * n + c)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            out.push(Draw { iter, j, nu, theta });
        }
        Ok(out)
    }
}

fn config_hash(prior: &PriorSpec, config: &McmcConfig, support_end: f64) -> Result<String> {
    let text = serde_json::to_string(&(prior, config, support_end))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Starts at the empirical rates with flat zero-or-κ kernels at the smallest
/// dimension when that lies in the support, otherwise at a prior draw.
fn initial_state<R: Rng + ?Sized>(
    cache: &LikelihoodCache,
    prior: &PriorSpec,
    config: &McmcConfig,
    rng: &mut R,
) -> Result<ChainState> {
    if let Some(init) = &config.initial {
        let state = ChainState::evaluate(init.clone(), cache, prior);
        if state.log_posterior() == f64::NEG_INFINITY {
            return Err(Error::Config("initial state has zero posterior density".into()));
        }
        return Ok(state);
    }
    let dim = cache.dim();
    let draw = sample_prior_with(prior, dim, cache.support_end(), rng)?;
    let horizon = cache.horizon();
    let counts = cache.stream().counts_in_horizon();
    let j = prior.j_min();
    let floor = match prior.theta {
        crate::priors::ThetaPrior::ShiftedExponential { kappa, .. }
        | crate::priors::ThetaPrior::TruncatedGaussian { kappa, .. } => kappa.max(0.0),
        crate::priors::ThetaPrior::Gaussian { .. } => 0.0,
    };
    let guess = SeriesState {
        nu: (0..dim)
            .map(|k| {
                if horizon > 0.0 && counts[k] > 0 {
                    counts[k] as f64 / horizon
                } else {
                    draw.nu[k]
                }
            })
            .collect(),
        j,
        theta: vec![vec![floor; prior.coefficients(j)]; dim * dim],
    };
    let state = ChainState::evaluate(guess, cache, prior);
    if state.log_posterior() > f64::NEG_INFINITY {
        return Ok(state);
    }
    Ok(ChainState::evaluate(draw, cache, prior))
}

pub fn run_chain(data: &EventStream, prior: &PriorSpec, support_end: f64, config: &McmcConfig) -> Result<PosteriorDraws> {
    let cache = LikelihoodCache::new(data, support_end)?;
    run_chain_cached(&cache, prior, config)
}

pub fn run_chain_cached(cache: &LikelihoodCache, prior: &PriorSpec, config: &McmcConfig) -> Result<PosteriorDraws> {
    prior.validate()?;
    config.validate()?;
    let dim = cache.dim();
    let mut rng = seeded_rng(config.seed, 7);
    let mut state = initial_state(cache, prior, config, &mut rng)?;
    let mut tuning = Tuning::new(dim, config);
    let burn_in = config.burn_in();
    let mut draws = Vec::with_capacity((config.iterations - burn_in) / config.thin);
    let mut log_posterior = Vec::with_capacity(draws.capacity());
    for it in 0..config.iterations {
        if it == burn_in {
            tuning.acceptance = Acceptance::default();
        }
        tuning.adapt = it < burn_in;
        state = mcmc_step(state, cache, prior, &mut tuning, &mut rng);
        if it >= burn_in && (it - burn_in + 1) % config.thin == 0 {
            #[cfg(debug_assertions)]
            if draws.len() % 64 == 0 {
                let fresh = ChainState::evaluate(state.series(), cache, prior);
                let gap = (fresh.log_posterior() - state.log_posterior()).abs();
                debug_assert!(gap <= 1e-8 * (1.0 + state.log_posterior().abs()), "stale chain cache");
            }
            draws.push(Draw {
                iter: it,
                j: state.j,
                nu: state.nu.clone(),
                theta: state.theta.clone(),
            });
            log_posterior.push(state.log_posterior());
        }
    }
    for (name, stats) in tuning.acceptance.named() {
        let rate = stats.rate();
        if stats.proposed > 0 && !(0.1..=0.6).contains(&rate) {
            log::warn!("acceptance rate of {name} moves is {rate:.3}");
        }
    }
    Ok(PosteriorDraws {
        dim,
        support_end: cache.support_end(),
        prior: prior.clone(),
        config: config.clone(),
        config_hash: config_hash(prior, config, cache.support_end())?,
        draws,
        log_posterior,
        acceptance: tuning.acceptance,
        seed: config.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub level: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub median: f64,
}

/// `ψ` evaluated at every draw, with an equal-tailed credible interval at
/// `level` whose endpoints are order statistics.
pub fn posterior_functional(draws: &PosteriorDraws, spec: &FunctionalSpec, level: f64) -> Result<FunctionalSummary> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no posterior draws".into()));
    }
    let samples = (0..draws.len())
        .map(|i| eval_functional(spec, &draws.params(i)?))
        .collect::<Result<Vec<_>>>()?;
    summarize(samples, level)
}

pub fn summarize(samples: Vec<f64>, level: f64) -> Result<FunctionalSummary> {
    if samples.is_empty() || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput("need samples and a level in (0, 1)".into()));
    }
    let (mean, sd) = mean_sd(&samples);
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() - 1;
    let alpha = 1.0 - level;
    let lo = ((alpha / 2.0) * n as f64 + 1e-9).floor() as usize;
    let hi = (((1.0 - alpha / 2.0) * n as f64 - 1e-9).ceil() as usize).min(n);
    Ok(FunctionalSummary {
        mean,
        sd,
        level,
        ci_lower: sorted[lo],
        ci_upper: sorted[hi],
        median: quantile(&sorted, 0.5),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// Set for constant input, whose ESS is reported as `n`.
    pub zero_variance: bool,
}

/// Effective sample size `n / (−1 + 2 Σ_m Γ_m/γ₀)` with Geyer's initial
/// positive sequence `Γ_m = γ_{2m} + γ_{2m+1}`.
pub fn ess(samples: &[f64]) -> Result<Ess> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("ESS needs at least 10 samples, got {n}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let gamma0 = autocov(0);
    if !(gamma0 > 1e-300) {
        return Ok(Ess {
            value: n as f64,
            zero_variance: true,
        });
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum / gamma0).max(1.0 / n as f64);
    Ok(Ess {
        value: n as f64 / tau,
        zero_variance: false,
    })
}
