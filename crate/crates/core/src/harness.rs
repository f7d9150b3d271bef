//! Simulation experiments checking the Bernstein–von Mises behaviour of the
//! marginal posterior of a functional `ψ(f)`.
//!
//! A run estimates the efficient variance `V₀` once from a Palm ensemble,
//! then for every horizon `T` and replication simulates a path, samples the
//! posterior, centres `ψ` draws at the oracle efficient estimator and
//! compares `√T(ψ − ψ̂_T)` with `N(0, V₀)`. The Kolmogorov distance stands
//! in for the bounded-Lipschitz metric; on the real line it controls it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::functionals::{eval_functional, riesz_representor, FunctionalSpec};
use crate::io::write_atomic;
use crate::likelihood::Direction;
use crate::mcmc::{ess, posterior_functional, run_chain, FunctionalSummary, McmcConfig, PosteriorDraws};
use crate::model::{ModelKind, ModelParams};
use crate::palm::{
    bias_term, efficient_estimate, estimate_palm, info_operator_invert, info_operator_solve_dense, optimal_variance,
    InvertOptions, PalmBudget, PalmEstimates,
};
use crate::priors::{histogram_basis, rate_schedule, BasisKind, Link, NuPrior, PriorSpec, RateConstants, ThetaPrior};
use crate::rng::derive_seed;
use crate::simulate::{simulate_thinning, DEFAULT_BURN_IN_FACTOR};
use crate::stats::{ks_statistic, mean_sd, normal_cdf};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// The flat `key = value` file format; every key but `model` or
/// `model_json` is optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<String>,
    model_json: Option<String>,
    #[serde(default = "d_functional")]
    functional: String,
    #[serde(default = "d_horizons")]
    horizons: Vec<f64>,
    #[serde(default = "d_replications")]
    replications: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "d_out")]
    out_dir: String,
    #[serde(default = "d_levels")]
    levels: Vec<f64>,
    #[serde(default = "d_centering")]
    centering: String,
    #[serde(default = "d_sim_burn_in")]
    sim_burn_in: f64,

    #[serde(default = "d_basis")]
    basis: String,
    j_max: Option<usize>,
    #[serde(default = "d_beta")]
    beta: f64,
    #[serde(default = "d_one")]
    c1: f64,
    #[serde(default = "d_theta_prior")]
    theta_prior: String,
    #[serde(default = "d_kappa")]
    kappa: f64,
    #[serde(default = "d_one")]
    theta_rate: f64,
    #[serde(default = "d_one")]
    theta_sigma: f64,
    #[serde(default = "d_nu_prior")]
    nu_prior: String,
    #[serde(default = "d_two")]
    nu_shape: f64,
    #[serde(default = "d_one")]
    nu_rate: f64,
    #[serde(default = "d_one")]
    nu_scale: f64,
    #[serde(default = "d_link")]
    link: String,

    #[serde(default = "d_iterations")]
    iterations: usize,
    burn_in: Option<usize>,
    #[serde(default = "d_thin")]
    thin: usize,
    #[serde(default = "d_p_jump")]
    p_jump: f64,
    #[serde(default = "d_split_sd")]
    split_sd: f64,

    #[serde(default = "d_palm_horizon")]
    palm_horizon: f64,
    #[serde(default = "d_palm_batches")]
    palm_batches: usize,
    #[serde(default = "d_palm_cells")]
    palm_cells: usize,
    #[serde(default = "d_bias_j")]
    bias_j: Vec<usize>,
    #[serde(default = "d_bias_windows")]
    bias_windows: usize,
}

fn d_functional() -> String {
    "linear 1 1".into()
}
fn d_horizons() -> Vec<f64> {
    vec![2000.0]
}
fn d_replications() -> usize {
    20
}
fn d_out() -> String {
    "out".into()
}
fn d_levels() -> Vec<f64> {
    vec![0.9, 0.95]
}
fn d_centering() -> String {
    "efficient".into()
}
fn d_sim_burn_in() -> f64 {
    DEFAULT_BURN_IN_FACTOR
}
fn d_basis() -> String {
    "histogram".into()
}
fn d_beta() -> f64 {
    1.0
}
fn d_one() -> f64 {
    1.0
}
fn d_two() -> f64 {
    2.0
}
fn d_theta_prior() -> String {
    "shifted_exponential".into()
}
fn d_kappa() -> f64 {
    -0.5
}
fn d_nu_prior() -> String {
    "gamma".into()
}
fn d_link() -> String {
    "identity".into()
}
fn d_iterations() -> usize {
    20_000
}
fn d_thin() -> usize {
    5
}
fn d_p_jump() -> f64 {
    0.2
}
fn d_split_sd() -> f64 {
    0.25
}
fn d_palm_horizon() -> f64 {
    20_000.0
}
fn d_palm_batches() -> usize {
    16
}
fn d_palm_cells() -> usize {
    16
}
fn d_bias_j() -> Vec<usize> {
    vec![4, 8, 16]
}
fn d_bias_windows() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// The oracle efficient estimator `ψ(f⁰) + W_T(ψ̃_L)/√T`.
    Efficient,
    PosteriorMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub prior: PriorSpec,
    pub functional: FunctionalSpec,
    pub horizons: Vec<f64>,
    pub replications: usize,
    /// Template for every chain; its seed is replaced per replication.
    pub mcmc: McmcConfig,
    pub palm: PalmBudget,
    pub palm_cells: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub levels: Vec<f64>,
    pub centering: Centering,
    /// Simulation burn-in in units of the memory length.
    pub sim_burn_in: f64,
    pub bias_j: Vec<usize>,
    pub bias_windows: usize,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses the config; `model` and `out_dir` paths are relative to
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let model_text = match (&raw.model, &raw.model_json) {
            (Some(path), None) => std::fs::read_to_string(base_dir.join(path))
                .map_err(|e| config_err(format!("cannot read model file {path}: {e}")))?,
            (None, Some(json)) => json.clone(),
            _ => return Err(config_err("set exactly one of `model` and `model_json`")),
        };
        let model = ModelParams::from_json(&model_text).map_err(|e| config_err(format!("model: {e}")))?;
        let a = model.support_end();
        let functional = FunctionalSpec::parse(&raw.functional, a).map_err(|e| config_err(e.to_string()))?;

        let basis = match raw.basis.as_str() {
            "histogram" => BasisKind::Histogram,
            "haar" => BasisKind::Haar,
            other => return Err(config_err(format!("unknown basis `{other}`"))),
        };
        let theta = match raw.theta_prior.as_str() {
            "shifted_exponential" => ThetaPrior::ShiftedExponential {
                kappa: raw.kappa,
                rate: raw.theta_rate,
            },
            "truncated_gaussian" => ThetaPrior::TruncatedGaussian {
                kappa: raw.kappa,
                sigma: raw.theta_sigma,
            },
            "gaussian" => ThetaPrior::Gaussian { sigma: raw.theta_sigma },
            other => return Err(config_err(format!("unknown theta_prior `{other}`"))),
        };
        let nu = match raw.nu_prior.as_str() {
            "gamma" => NuPrior::Gamma {
                shape: raw.nu_shape,
                rate: raw.nu_rate,
            },
            "lomax" => NuPrior::Lomax {
                shape: raw.nu_shape,
                scale: raw.nu_scale,
            },
            other => return Err(config_err(format!("unknown nu_prior `{other}`"))),
        };
        let link = match raw.link.as_str() {
            "identity" => Link::Identity,
            "softplus" => Link::Softplus,
            other => return Err(config_err(format!("unknown link `{other}`"))),
        };
        if raw.horizons.is_empty() || raw.horizons.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(config_err("horizons must be a nonempty list of positive numbers"));
        }
        let j_max = match raw.j_max {
            Some(j) => j,
            None => default_j_max(basis, raw.beta, &raw.horizons)?,
        };
        let prior = PriorSpec {
            basis,
            c1: raw.c1,
            theta,
            nu,
            link,
            j_max,
        };
        prior.validate()?;

        let mut mcmc = McmcConfig::new(raw.iterations, raw.seed);
        mcmc.burn_in = raw.burn_in;
        mcmc.thin = raw.thin;
        mcmc.p_jump = raw.p_jump;
        mcmc.split_sd = raw.split_sd;
        mcmc.validate()?;

        let centering = match raw.centering.as_str() {
            "efficient" => Centering::Efficient,
            "posterior_median" => Centering::PosteriorMedian,
            other => return Err(config_err(format!("unknown centering `{other}`"))),
        };
        if raw.replications == 0 {
            return Err(config_err("replications must be positive"));
        }
        if raw.levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return Err(config_err("credible levels must lie in (0, 1)"));
        }
        if raw.palm_cells == 0 || raw.palm_cells % model.cells() != 0 {
            return Err(config_err(format!(
                "palm_cells = {} must be a positive multiple of the model's {} cells",
                raw.palm_cells,
                model.cells()
            )));
        }
        if model.kind() != ModelKind::Linear {
            return Err(config_err("the efficiency pipeline needs a linear true model"));
        }
        model.validate().map_err(|e| config_err(format!("model: {e}")))?;
        let out_dir = base_dir.join(&raw.out_dir);
        Ok(Self {
            model,
            prior,
            functional,
            horizons: raw.horizons,
            replications: raw.replications,
            mcmc,
            palm: PalmBudget::new(raw.palm_horizon, raw.palm_batches, derive_seed(raw.seed, u64::MAX)),
            palm_cells: raw.palm_cells,
            seed: raw.seed,
            out_dir,
            levels: raw.levels,
            centering,
            sim_burn_in: raw.sim_burn_in,
            bias_j: raw.bias_j,
            bias_windows: raw.bias_windows,
        })
    }

    /// Replaces the master seed and everything derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.mcmc.seed = seed;
        self.palm.seed = derive_seed(seed, u64::MAX);
        self
    }

    /// Applies `HAWKES_SEED` when set and parseable.
    pub fn with_env_seed(self) -> Result<Self> {
        match std::env::var("HAWKES_SEED") {
            Ok(text) => {
                let seed = text
                    .trim()
                    .parse()
                    .map_err(|_| config_err(format!("HAWKES_SEED = `{text}` is not an integer")))?;
                Ok(self.with_seed(seed))
            }
            Err(_) => Ok(self),
        }
    }
}

/// `⌈J_T(β)⌉` at the largest horizon (Haar: the matching resolution).
fn default_j_max(basis: BasisKind, beta: f64, horizons: &[f64]) -> Result<usize> {
    let t = horizons.iter().copied().fold(0.0, f64::max);
    let j = rate_schedule(beta, t.max(3.0), RateConstants::default())?.j_t.ceil().max(1.0);
    Ok(match basis {
        BasisKind::Histogram => j as usize,
        BasisKind::Haar => (j.log2().ceil() as usize).saturating_sub(1).min(20),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub v0: f64,
    pub psi_true: f64,
    /// `ψ̃_L` coordinates `(ξ, g cells...)` on the Palm grid.
    pub psi_l: Vec<f64>,
    pub palm_cells: usize,
    pub palm_key: String,
    pub inversion_residual: f64,
    pub inversion_iterations: usize,
    /// `fixed_point` or `dense`.
    pub inversion_method: String,
    /// SHA-256 of the Palm key, `ψ̃_L` and the bits of `V₀`.
    pub v0_hash: String,
}

impl Efficiency {
    pub fn expected_hash(&self) -> String {
        efficiency_hash(&self.palm_key, &self.psi_l, self.v0)
    }
}

fn efficiency_hash(key: &str, psi_l: &[f64], v0: f64) -> String {
    let mut h = Sha256::new();
    h.update(key.as_bytes());
    for v in psi_l {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(v0.to_bits().to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// The efficiency side of the experiment: Palm ensemble, `ψ̃_L = Γ⁻¹ψ̃₂`
/// and `V₀ = ⟨ψ̃_L, ψ̃₂⟩₂`. Falls back to a dense solve when the fixed point
/// does not converge.
pub fn efficiency(
    f0: &ModelParams,
    functional: &FunctionalSpec,
    budget: &PalmBudget,
    cells: usize,
) -> Result<(Efficiency, Direction, ModelParams)> {
    let refined = refine(f0, cells)?;
    let palm = estimate_palm(&refined, budget, cells)?;
    efficiency_from_palm(&refined, functional, &palm, budget)
}

pub fn efficiency_from_palm(
    refined: &ModelParams,
    functional: &FunctionalSpec,
    palm: &PalmEstimates,
    budget: &PalmBudget,
) -> Result<(Efficiency, Direction, ModelParams)> {
    let psi_2 = riesz_representor(functional, refined)?;
    let inversion = info_operator_invert(&psi_2, palm, InvertOptions::default())?;
    let (psi_l, method, residual, iterations) = if inversion.converged {
        (inversion.direction, "fixed_point", inversion.residual, inversion.iterations)
    } else {
        log::warn!(
            "fixed-point inversion stopped at residual {:.3e}; using the dense solve",
            inversion.residual
        );
        (info_operator_solve_dense(&psi_2, palm)?, "dense", f64::NAN, inversion.iterations)
    };
    let v0 = optimal_variance(&psi_l, &psi_2)?;
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::Numerical(format!("optimal variance {v0} is not positive")));
    }
    let palm_key = PalmEstimates::cache_key(refined, budget, refined.cells())?;
    let coeffs = psi_l.coefficients();
    let eff = Efficiency {
        v0,
        psi_true: eval_functional(functional, refined)?,
        v0_hash: efficiency_hash(&palm_key, &coeffs, v0),
        psi_l: coeffs,
        palm_cells: refined.cells(),
        palm_key,
        inversion_residual: residual,
        inversion_iterations: iterations,
        inversion_method: method.into(),
    };
    Ok((eff, psi_l, refined.clone()))
}

/// The same model on a grid of `cells` cells, a multiple of its own.
pub fn refine(f0: &ModelParams, cells: usize) -> Result<ModelParams> {
    if cells % f0.cells() != 0 {
        return Err(Error::GridMismatch(format!("{cells} cells do not refine {}", f0.cells())));
    }
    ModelParams::new(
        f0.nu().to_vec(),
        f0.kernels().iter().map(|g| g.resample(cells)).collect(),
        f0.kind(),
    )
}

/// Kolmogorov distance between the law of `√T(ψ − center)` and `N(0, V₀)`.
pub fn bvm_distance(samples: &[f64], center: f64, horizon: f64, v0: f64) -> Result<f64> {
    if !(v0 > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidInput("need V₀ > 0 and T > 0".into()));
    }
    if samples.len() < 100 {
        return Err(Error::InvalidInput(format!("{} samples, need at least 100", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) || !center.is_finite() {
        return Err(Error::Numerical("non-finite posterior samples".into()));
    }
    let scale = horizon.sqrt();
    let scaled: Vec<f64> = samples.iter().map(|&x| scale * (x - center)).collect();
    let sd = v0.sqrt();
    ks_statistic(&scaled, |x| normal_cdf(x, sd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub covers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub horizon: f64,
    pub replicate: usize,
    pub seed: u64,
    pub events: usize,
    /// The centre used for `√T(ψ − ·)`.
    pub psi_hat: f64,
    pub psi_efficient: f64,
    pub post_mean: f64,
    pub post_sd: f64,
    pub post_median: f64,
    pub intervals: Vec<Interval>,
    /// NaN when there are fewer than 100 draws.
    pub ks: f64,
    pub ess: f64,
    pub mean_j: f64,
    pub acceptance_theta: f64,
    /// Why the replication failed, if it did; numbers are then NaN.
    pub error: Option<String>,
    #[serde(skip)]
    pub draws: Option<PosteriorDraws>,
    #[serde(skip)]
    pub scaled: Vec<f64>,
}

impl Replication {
    fn failed(index: usize, horizon: f64, replicate: usize, seed: u64, err: &Error) -> Self {
        Self {
            index,
            horizon,
            replicate,
            seed,
            events: 0,
            psi_hat: f64::NAN,
            psi_efficient: f64::NAN,
            post_mean: f64::NAN,
            post_sd: f64::NAN,
            post_median: f64::NAN,
            intervals: Vec::new(),
            ks: f64::NAN,
            ess: f64::NAN,
            mean_j: f64::NAN,
            acceptance_theta: f64::NAN,
            error: Some(err.to_string()),
            draws: None,
            scaled: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub level: f64,
    pub covered: usize,
    pub total: usize,
    pub coverage: f64,
    /// Binomial standard error `√(c(1−c)/n)`.
    pub std_error: f64,
}

/// Fraction of intervals `[lower, upper]` containing `truth`.
pub fn coverage(level: f64, intervals: &[(f64, f64)], truth: f64) -> CoverageRow {
    let total = intervals.len();
    let covered = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count();
    let c = if total == 0 { f64::NAN } else { covered as f64 / total as f64 };
    CoverageRow {
        level,
        covered,
        total,
        coverage: c,
        std_error: (c * (1.0 - c) / total as f64).sqrt(),
    }
}

/// Coverage per level over the successful replications at `horizon`.
pub fn coverage_table(report: &Report, horizon: f64, levels: &[f64]) -> Vec<CoverageRow> {
    let reps: Vec<&Replication> = report
        .replications
        .iter()
        .filter(|r| r.ok() && r.horizon == horizon)
        .collect();
    if reps.len() < 20 {
        log::warn!("coverage from {} replications is coarse", reps.len());
    }
    levels
        .iter()
        .map(|&level| {
            let intervals: Vec<(f64, f64)> = reps
                .iter()
                .filter_map(|r| r.intervals.iter().find(|i| (i.level - level).abs() < 1e-12))
                .map(|i| (i.lower, i.upper))
                .collect();
            coverage(level, &intervals, report.efficiency.psi_true)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub horizon: f64,
    pub j: usize,
    pub value: f64,
    pub std_error: f64,
    pub residual_norm_f: f64,
    pub residual_norm_psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub horizon: f64,
    pub completed: usize,
    pub failed: usize,
    pub coverage: Vec<CoverageRow>,
    /// Mean over replications of `sd · √T`, to compare with `√V₀`.
    pub mean_sd_sqrt_t: f64,
    pub sqrt_v0: f64,
    pub median_ks: f64,
    /// Mean and standard error of `√T(posterior mean − ψ̂_T)`.
    pub mean_scaled_center: f64,
    pub scaled_center_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub efficiency: Efficiency,
    pub bias: Vec<BiasRow>,
    pub replications: Vec<Replication>,
    pub aggregates: Vec<Aggregate>,
    pub metric_note: String,
}

const METRIC_NOTE: &str = "The BvM distance is the Kolmogorov-Smirnov distance between the empirical law of \
sqrt(T)(psi - psi_hat) and N(0, V0); it stands in for the bounded-Lipschitz distance.";

/// Runs the full experiment. Replications run in parallel with seeds
/// derived from the master seed; a failing replication is recorded with its
/// reason and excluded from the aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let (eff, psi_l, refined) = efficiency(&config.model, &config.functional, &config.palm, config.palm_cells)?;
    log::info!("V0 = {:.6} via {}", eff.v0, eff.inversion_method);

    let jobs: Vec<(usize, f64, usize)> = config
        .horizons
        .iter()
        .enumerate()
        .flat_map(|(ti, &t)| (0..config.replications).map(move |r| (ti, t, r)))
        .enumerate()
        .map(|(i, (_, t, r))| (i, t, r))
        .collect();
    let replications: Vec<Replication> = jobs
        .par_iter()
        .map(|&(index, horizon, r)| {
            let seed = derive_seed(config.seed, index as u64);
            run_replication(config, &eff, &psi_l, &refined, index, horizon, r, seed)
                .unwrap_or_else(|e| {
                    log::warn!("replication {index} (T = {horizon}) failed: {e}");
                    Replication::failed(index, horizon, r, seed, &e)
                })
        })
        .collect();

    let mut bias = Vec::new();
    for (ti, &horizon) in config.horizons.iter().enumerate() {
        let seed = derive_seed(config.seed ^ 0xB1A5, ti as u64);
        let stream = simulate_thinning(&refined, horizon, config.sim_burn_in * refined.support_end(), seed)?;
        for &j in &config.bias_j {
            let basis = histogram_basis(j, refined.support_end())?;
            match bias_term(&refined, basis.functions(), &psi_l, &stream, horizon, config.bias_windows) {
                Ok(b) => bias.push(BiasRow {
                    horizon,
                    j,
                    value: b.value,
                    std_error: b.std_error,
                    residual_norm_f: b.residual_norm_f,
                    residual_norm_psi: b.residual_norm_psi,
                }),
                Err(e) => log::warn!("bias term at j = {j}, T = {horizon} failed: {e}"),
            }
        }
    }

    let mut report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        efficiency: eff,
        bias,
        replications,
        aggregates: Vec::new(),
        metric_note: METRIC_NOTE.into(),
    };
    report.aggregates = config
        .horizons
        .iter()
        .map(|&t| aggregate(&report, t, &config.levels))
        .collect();
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_replication(
    config: &ExperimentConfig,
    eff: &Efficiency,
    psi_l: &Direction,
    refined: &ModelParams,
    index: usize,
    horizon: f64,
    replicate: usize,
    seed: u64,
) -> Result<Replication> {
    let a = refined.support_end();
    let stream = simulate_thinning(refined, horizon, config.sim_burn_in * a, derive_seed(seed, 0))?;
    let mut mcmc = config.mcmc.clone();
    mcmc.seed = derive_seed(seed, 1);
    let draws = run_chain(&stream, &config.prior, a, &mcmc)?;
    let summary: FunctionalSummary = posterior_functional(&draws, &config.functional, 0.5)?;
    let psi_efficient = efficient_estimate(&config.functional, refined, psi_l, &stream, horizon)?;
    let psi_hat = match config.centering {
        Centering::Efficient => psi_efficient,
        Centering::PosteriorMedian => summary.median,
    };
    let intervals = config
        .levels
        .iter()
        .map(|&level| {
            let s = crate::mcmc::summarize(summary.samples.clone(), level)?;
            Ok(Interval {
                level,
                lower: s.ci_lower,
                upper: s.ci_upper,
                covers: s.ci_lower <= eff.psi_true && eff.psi_true <= s.ci_upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ks = if summary.samples.len() >= 100 {
        bvm_distance(&summary.samples, psi_hat, horizon, eff.v0)?
    } else {
        log::warn!("replication {index}: {} draws are too few for the KS distance", summary.samples.len());
        f64::NAN
    };
    let scale = horizon.sqrt();
    let scaled = summary.samples.iter().map(|&x| scale * (x - psi_hat)).collect();
    let ess_value = ess(&summary.samples).map_or(f64::NAN, |e| e.value);
    let mean_j = draws.draws.iter().map(|d| d.j as f64).sum::<f64>() / draws.len() as f64;
    Ok(Replication {
        index,
        horizon,
        replicate,
        seed,
        events: stream.counts_in_horizon().iter().sum(),
        psi_hat,
        psi_efficient,
        post_mean: summary.mean,
        post_sd: summary.sd,
        post_median: summary.median,
        intervals,
        ks,
        ess: ess_value,
        mean_j,
        acceptance_theta: draws.acceptance.theta.rate(),
        error: None,
        scaled,
        draws: Some(draws),
    })
}

fn aggregate(report: &Report, horizon: f64, levels: &[f64]) -> Aggregate {
    let reps: Vec<&Replication> = report
        .replications
        .iter()
        .filter(|r| r.horizon == horizon)
        .collect();
    let ok: Vec<&&Replication> = reps.iter().filter(|r| r.ok()).collect();
    let scale = horizon.sqrt();
    let sds: Vec<f64> = ok.iter().map(|r| r.post_sd * scale).collect();
    let mut ks: Vec<f64> = ok.iter().map(|r| r.ks).filter(|v| v.is_finite()).collect();
    ks.sort_by(f64::total_cmp);
    let centers: Vec<f64> = ok.iter().map(|r| scale * (r.post_mean - r.psi_hat)).collect();
    let (mean_center, sd_center) = mean_sd(&centers);
    Aggregate {
        horizon,
        completed: ok.len(),
        failed: reps.len() - ok.len(),
        coverage: coverage_table(report, horizon, levels),
        mean_sd_sqrt_t: mean_sd(&sds).0,
        sqrt_v0: report.efficiency.v0.sqrt(),
        median_ks: if ks.is_empty() { f64::NAN } else { crate::stats::quantile(&ks, 0.5) },
        mean_scaled_center: mean_center,
        scaled_center_se: sd_center / (centers.len() as f64).sqrt(),
    }
}

/// Writes `report.json`, `replications.csv`, `posterior_<r>.csv` for every
/// replication with draws, and `plots.gp`.
pub fn emit_outputs(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    write_atomic(&path, serde_json::to_string_pretty(report)?.as_bytes())?;
    written.push(path);

    let path = dir.join("replications.csv");
    write_atomic(&path, &replications_csv(report)?)?;
    written.push(path);

    for rep in &report.replications {
        if let Some(draws) = &rep.draws {
            let mut buf = Vec::new();
            draws.write_csv(&mut buf)?;
            let path = dir.join(format!("posterior_{}.csv", rep.index));
            write_atomic(&path, &buf)?;
            written.push(path);
        }
    }

    let path = dir.join("plots.gp");
    write_atomic(&path, plot_script(report).as_bytes())?;
    written.push(path);
    Ok(written)
}

fn replications_csv(report: &Report) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "index", "horizon", "replicate", "seed", "events", "psi_hat", "psi_efficient", "post_mean", "post_sd",
        "post_median", "ks", "ess", "mean_j", "acceptance_theta",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for level in &report.config.levels {
        header.push(format!("lower_{level}"));
        header.push(format!("upper_{level}"));
        header.push(format!("covers_{level}"));
    }
    header.push("error".into());
    w.write_record(&header)?;
    for r in &report.replications {
        let mut row = vec![
            r.index.to_string(),
            r.horizon.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.events.to_string(),
            r.psi_hat.to_string(),
            r.psi_efficient.to_string(),
            r.post_mean.to_string(),
            r.post_sd.to_string(),
            r.post_median.to_string(),
            r.ks.to_string(),
            r.ess.to_string(),
            r.mean_j.to_string(),
            r.acceptance_theta.to_string(),
        ];
        for level in &report.config.levels {
            match r.intervals.iter().find(|i| i.level == *level) {
                Some(i) => {
                    row.push(i.lower.to_string());
                    row.push(i.upper.to_string());
                    row.push(i.covers.to_string());
                }
                None => row.extend(["NaN".to_string(), "NaN".to_string(), String::new()]),
            }
        }
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Gnuplot script with inline data: the pooled histogram of the
/// centred-scaled posterior against the `N(0, V₀)` density, and coverage
/// bars per level.
fn plot_script(report: &Report) -> String {
    let v0 = report.efficiency.v0;
    let sd = v0.sqrt();
    let bins = 40;
    let (lo, hi) = (-4.0 * sd, 4.0 * sd);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for r in report.replications.iter().filter(|r| r.ok()) {
        for &z in &r.scaled {
            total += 1;
            if z >= lo && z < hi {
                counts[((z - lo) / width) as usize] += 1;
            }
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "# Centred-scaled posterior of psi versus N(0, V0), and credible-interval coverage.");
    let _ = writeln!(s, "V0 = {v0:.17e}");
    let _ = writeln!(s, "$posterior << EOD");
    for (i, c) in counts.iter().enumerate() {
        let density = if total == 0 { 0.0 } else { *c as f64 / (total as f64 * width) };
        let _ = writeln!(s, "{:.10e} {:.10e}", lo + (i as f64 + 0.5) * width, density);
    }
    let _ = writeln!(s, "EOD");
    let _ = writeln!(s, "$coverage << EOD");
    for agg in &report.aggregates {
        for row in &agg.coverage {
            let _ = writeln!(
                s,
                "\"T={} {:.0}%\" {:.6} {:.6} {:.6}",
                agg.horizon,
                100.0 * row.level,
                row.coverage,
                row.std_error,
                row.level
            );
        }
    }
    let _ = writeln!(s, "EOD");
    let _ = writeln!(s, "set terminal pngcairo size 1200,500");
    let _ = writeln!(s, "set output 'bvm.png'");
    let _ = writeln!(s, "set multiplot layout 1,2");
    let _ = writeln!(s, "set title 'sqrt(T)(psi - psi_hat) vs N(0, V0)'");
    let _ = writeln!(s, "set style fill solid 0.4");
    let _ = writeln!(s, "set boxwidth {width:.10e}");
    let _ = writeln!(
        s,
        "plot $posterior using 1:2 with boxes title 'posterior', \\\n     exp(-x**2/(2*V0))/sqrt(2*pi*V0) with lines lw 2 title 'N(0, V0)'"
    );
    let _ = writeln!(s, "set title 'credible-interval coverage'");
    let _ = writeln!(s, "set yrange [0:1.05]");
    let _ = writeln!(s, "set boxwidth 0.6");
    let _ = writeln!(s, "set style fill solid 0.6");
    let _ = writeln!(
        s,
        "plot $coverage using 0:2:xtic(1) with boxes title 'coverage', \\\n     $coverage using 0:2:3 with yerrorbars notitle, \\\n     $coverage using 0:4 with points pt 7 title 'nominal'"
    );
    let _ = writeln!(s, "unset multiplot");
    s
}

/// Reads the draws of `posterior_<r>.csv` back.
pub fn read_posterior_csv(path: &Path, dim: usize, prior: &PriorSpec) -> Result<Vec<crate::mcmc::Draw>> {
    let file = std::fs::File::open(path)?;
    PosteriorDraws::read_csv(file, dim, prior)
}

/// Exit code for a failure: 2 for configuration problems, 3 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 3,
    }
}
