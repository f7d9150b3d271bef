//! Fixtures shared by the benchmarks.

use hawkes_bvm::simulate::simulate_thinning;
use hawkes_bvm::{EventStream, GridFunction, ModelKind, ModelParams};

/// `ν = 1`, `h = 0.5·1_[0,1]` on `cells` cells.
pub fn box_model(cells: usize) -> ModelParams {
    ModelParams::new(vec![1.0], vec![GridFunction::constant(1.0, cells, 0.5)], ModelKind::Linear)
        .expect("valid model")
}

/// Two marks with `r(ρ) = 0.6`.
pub fn two_mark_model(cells: usize) -> ModelParams {
    let kernel = |mass: f64| GridFunction::from_fn(1.0, cells, |x| 2.0 * mass * (1.0 - x));
    ModelParams::new(
        vec![0.6, 0.4],
        vec![kernel(0.3), kernel(0.2), kernel(0.1), kernel(0.4)],
        ModelKind::Linear,
    )
    .expect("valid model")
}

pub fn path(model: &ModelParams, horizon: f64, seed: u64) -> EventStream {
    simulate_thinning(model, horizon, 50.0 * model.support_end(), seed).expect("simulation")
}
