//! Browser front end for `lssid`.
//!
//! Each operation has a plain Rust form returning a serde value, used by the
//! native tests, and a `#[wasm_bindgen]` wrapper that hands JSON text to the
//! page in `www/`.

use lssid::benchmark::{a_for_gamma, two_mode_model, two_mode_selection};
use lssid::bounds::{find_p, BoundInputs};
use lssid::experiment::{loglog_slope, run_experiment, summarize, ExperimentConfig};
use lssid::hokalman::reference_realization;
use lssid::simulate::{simulate, SimConfig};
use lssid::{LssError, SignalSpec, SwitchingDistribution};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_SAMPLES: usize = 200_000;
pub const MAX_TRIALS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Benchmark {
    pub gamma: f64,
    pub ku_input: f64,
    pub ku_noise: f64,
}

impl Benchmark {
    fn check(&self) -> Result<(), LssError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LssError::Parameter(format!("gamma = {} outside (0, 1)", self.gamma)));
        }
        Ok(())
    }

    fn sim_config(&self, n: usize, seed: u64) -> Result<SimConfig, LssError> {
        self.check()?;
        Ok(SimConfig::new(
            two_mode_model(a_for_gamma(self.gamma)),
            SwitchingDistribution::uniform(2),
            SignalSpec::uniform(1, self.ku_input, self.ku_noise)?,
            n,
            seed,
        ))
    }

    fn bound_inputs(&self) -> Result<BoundInputs, LssError> {
        let cfg = self.sim_config(1, 0)?;
        let sel = two_mode_selection();
        let cert = find_p(&cfg.model, &cfg.dist, self.gamma)?;
        let sigma_n = reference_realization(&cfg.model, &sel)?.sigma_n;
        BoundInputs::new(&cfg.model, &cfg.dist, &cfg.signal, cert, &sel, sigma_n)
    }
}

#[derive(Debug, Serialize)]
pub struct Trajectory {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub q: Vec<usize>,
    pub max_abs_y: f64,
    /// `None` when the input covariance is singular.
    pub k_y: Option<f64>,
    pub mode_frequencies: Vec<f64>,
}

pub fn trajectory(b: Benchmark, n: usize, seed: u64) -> Result<Trajectory, LssError> {
    if n == 0 || n > MAX_SAMPLES {
        return Err(LssError::Parameter(format!("N = {n} outside 1..={MAX_SAMPLES}")));
    }
    let s = simulate(&b.sim_config(n, seed)?)?;
    Ok(Trajectory {
        y: s.y().to_vec(),
        u: (0..s.n()).map(|t| s.u(t)[0]).collect(),
        q: s.modes().iter().map(|q| q + 1).collect(),
        max_abs_y: s.max_abs_y(),
        k_y: b.bound_inputs().ok().map(|i| i.constants.k_y),
        mode_frequencies: s.mode_frequencies(2),
    })
}

#[derive(Debug, Serialize)]
pub struct BoundCurve {
    pub n: Vec<u64>,
    pub bound: Vec<f64>,
    pub valid: Vec<bool>,
    pub min_valid_n: u64,
    pub gamma_certified: f64,
    pub k_m: f64,
}

pub fn bound_curve(b: Benchmark, delta: f64, grid: &[f64]) -> Result<BoundCurve, LssError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LssError::Parameter(format!("delta = {delta} outside (0, 1)")));
    }
    let inputs = b.bound_inputs()?;
    let c = &inputs.constants;
    let n: Vec<u64> = grid.iter().map(|&x| x.round().max(1.0) as u64).collect();
    let min_valid_n = c.min_valid_n(delta);
    Ok(BoundCurve {
        bound: n.iter().map(|&k| c.bound(delta, k)).collect(),
        valid: n.iter().map(|&k| k >= min_valid_n).collect(),
        n,
        min_valid_n,
        gamma_certified: inputs.stability.gamma,
        k_m: c.params.k_m,
    })
}

#[derive(Debug, Serialize)]
pub struct ErrorCurve {
    pub n: Vec<usize>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub failures: Vec<usize>,
    /// Least-squares slope of log median against log N.
    pub slope: f64,
}

pub fn error_curve(b: Benchmark, grid: &[f64], trials: usize, seed: u64) -> Result<ErrorCurve, LssError> {
    b.check()?;
    if trials == 0 || trials > MAX_TRIALS {
        return Err(LssError::Parameter(format!("trials = {trials} outside 1..={MAX_TRIALS}")));
    }
    let n_grid: Vec<usize> = grid.iter().map(|&x| x.round() as usize).collect();
    if n_grid.iter().any(|&n| n == 0 || n > MAX_SAMPLES) {
        return Err(LssError::Parameter(format!("every N must lie in 1..={MAX_SAMPLES}")));
    }
    let cfg = ExperimentConfig {
        n_grid,
        trials,
        gamma_values: vec![b.gamma],
        ku_input_values: vec![b.ku_input],
        ku_noise_values: vec![b.ku_noise],
        seed_base: seed,
        record_timing: false,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let summaries = summarize(&run_experiment(&cfg)?);
    let n: Vec<usize> = summaries.iter().map(|s| s.n).collect();
    let median: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    let pts: Vec<(f64, f64)> =
        n.iter().zip(&median).filter(|(_, m)| m.is_finite() && **m > 0.0).map(|(&n, &m)| (n as f64, m)).collect();
    Ok(ErrorCurve {
        mean: summaries.iter().map(|s| s.mean).collect(),
        failures: summaries.iter().map(|s| s.failures).collect(),
        slope: if pts.len() >= 2 { loglog_slope(&pts) } else { f64::NAN },
        n,
        median,
    })
}

fn to_js<T: Serialize>(r: Result<T, LssError>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = simulateTrajectory)]
pub fn simulate_trajectory(
    gamma: f64,
    ku_input: f64,
    ku_noise: f64,
    n: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_js(trajectory(Benchmark { gamma, ku_input, ku_noise }, n, seed))
}

#[wasm_bindgen(js_name = boundCurve)]
pub fn bound_curve_js(
    gamma: f64,
    ku_input: f64,
    ku_noise: f64,
    delta: f64,
    grid: &[f64],
) -> Result<String, JsError> {
    to_js(bound_curve(Benchmark { gamma, ku_input, ku_noise }, delta, grid))
}

#[wasm_bindgen(js_name = errorCurve)]
pub fn error_curve_js(
    gamma: f64,
    ku_input: f64,
    ku_noise: f64,
    grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_js(error_curve(Benchmark { gamma, ku_input, ku_noise }, grid, trials, seed))
}
