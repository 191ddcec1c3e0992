//! Monte Carlo study over the two-mode benchmark family or a user model.
//!
//! Each trial draws one trajectory of length `max(N_grid)` from seed
//! `seed_base + trial` and identifies on its prefixes, so all grid points and
//! all `N` share common random numbers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{a_for_gamma, two_mode_model, two_mode_selection};
use crate::bounds::{find_p, BoundInputs};
use crate::error::{LssError, Result};
use crate::hokalman::{est_err, find_selection, identify, reference_realization, Selection};
use crate::model::{LssModel, ModelSpec, SignalSpec, SwitchingDistribution};
use crate::plot::{LogLogChart, Series};
use crate::simulate::{simulate, SimConfig};

pub const CSV_HEADER: &str = "gamma,ku_noise,ku_input,N,trial,seed,est_err,bound,valid,wall_ms";

fn default_delta() -> f64 {
    0.05
}
fn default_n_grid() -> Vec<usize> {
    vec![1_000, 3_000, 10_000, 30_000, 100_000]
}
fn default_trials() -> usize {
    100
}
fn default_gamma_values() -> Vec<f64> {
    vec![0.6]
}
fn default_ku_noise() -> Vec<f64> {
    vec![1.0]
}
fn default_ku_input() -> Vec<f64> {
    vec![0.8]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Without a model file the benchmark family with `a = 0.9 γ / 2` is used.
    /// With one, each `γ` is only the stability target for its certificate.
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(rename = "N_grid", default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_gamma_values")]
    pub gamma_values: Vec<f64>,
    #[serde(rename = "Ku_noise_values", default = "default_ku_noise")]
    pub ku_noise_values: Vec<f64>,
    #[serde(rename = "Ku_input_values", default = "default_ku_input")]
    pub ku_input_values: Vec<f64>,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "crate::simulate::default_burn_in")]
    pub burn_in: usize,
    /// With timing off `wall_ms` is written as 0 and the CSV is reproducible
    /// byte for byte.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty()
            || self.gamma_values.is_empty()
            || self.ku_noise_values.is_empty()
            || self.ku_input_values.is_empty()
        {
            return Err(LssError::Parameter("experiment grids must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(LssError::Parameter("trials must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(LssError::Parameter(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if let Some(g) = self.gamma_values.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return Err(LssError::Parameter(format!("gamma = {g} outside (0, 1)")));
        }
        let bad_amp = |v: &f64| !(v.is_finite() && *v >= 0.0);
        if self.ku_noise_values.iter().chain(&self.ku_input_values).any(bad_amp) {
            return Err(LssError::Parameter("signal bounds must be finite and non-negative".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(LssError::Parameter("N must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path.as_ref())?)?;
        // a relative model path is relative to the config file
        if let (Some(model), Some(dir)) = (&cfg.model_file, path.as_ref().parent()) {
            if model.is_relative() {
                cfg.model_file = Some(dir.join(model));
            }
        }
        Ok(cfg)
    }

    fn sorted_grid(&self) -> Vec<usize> {
        let mut g = self.n_grid.clone();
        g.sort_unstable();
        g.dedup();
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub gamma: f64,
    pub ku_noise: f64,
    pub ku_input: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub point: GridPoint,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    /// `NaN` when identification failed.
    pub est_err: f64,
    /// `NaN` when no stability certificate was found.
    pub bound: f64,
    pub valid: bool,
    pub wall_ms: f64,
}

impl ExperimentRow {
    pub fn failed(&self) -> bool {
        self.est_err.is_nan()
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:?},{:?},{},{:.3}",
            self.point.gamma,
            self.point.ku_noise,
            self.point.ku_input,
            self.n,
            self.trial,
            self.seed,
            self.est_err,
            self.bound,
            u8::from(self.valid),
            self.wall_ms
        )
    }
}

/// Model, selection and reference realization shared by every trial at one
/// grid point.
struct PointSetup {
    point: GridPoint,
    model: LssModel,
    dist: SwitchingDistribution,
    signal: SignalSpec,
    selection: Selection,
    reference: crate::hokalman::RealizationResult,
    bound: Option<BoundInputs>,
}

fn setup_point(point: GridPoint, user: Option<&ModelSpec>) -> Result<PointSetup> {
    let (model, dist, selection) = match user {
        None => (two_mode_model(a_for_gamma(point.gamma)), SwitchingDistribution::uniform(2), two_mode_selection()),
        Some(spec) => (spec.model.clone(), spec.dist_or_uniform(), find_selection(&spec.model)?.selection),
    };
    let signal = SignalSpec::uniform(model.m(), point.ku_input, point.ku_noise)?;
    let reference = reference_realization(&model, &selection)?;
    let bound = match find_p(&model, &dist, point.gamma) {
        Ok(cert) => BoundInputs::new(&model, &dist, &signal, cert, &selection, reference.sigma_n).ok(),
        Err(_) => None,
    };
    Ok(PointSetup { point, model, dist, signal, selection, reference, bound })
}

fn run_trial(setup: &PointSetup, cfg: &ExperimentConfig, grid: &[usize], trial: usize) -> Vec<ExperimentRow> {
    let seed = cfg.seed_base.wrapping_add(trial as u64);
    let n_max = *grid.last().expect("grid is non-empty");
    let mut sim = SimConfig::new(setup.model.clone(), setup.dist.clone(), setup.signal.clone(), n_max, seed);
    sim.burn_in = cfg.burn_in;
    let sample = simulate(&sim);
    grid.iter()
        .map(|&n| {
            let started = cfg.record_timing.then(Instant::now);
            let est = sample.as_ref().ok().and_then(|s| {
                let id =
                    identify(&s.prefix(n), &setup.selection, setup.model.n_q(), setup.signal.sigma_u(), &setup.dist)
                        .ok()?;
                est_err(&id.realization, &setup.reference).ok()
            });
            let wall_ms = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
            let (bound, valid) = match &setup.bound {
                Some(b) => {
                    let c = &b.constants;
                    (c.bound(cfg.delta, n as u64), n as u64 >= c.min_valid_n(cfg.delta))
                }
                None => (f64::NAN, false),
            };
            ExperimentRow {
                point: setup.point,
                n,
                trial,
                seed,
                est_err: est.unwrap_or(f64::NAN),
                bound,
                valid,
                wall_ms,
            }
        })
        .collect()
}

/// Runs every (grid point, trial) pair in parallel. Rows come back ordered
/// by grid point, then `N`, then trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    let user = cfg.model_file.as_ref().map(ModelSpec::load).transpose()?;
    let grid = cfg.sorted_grid();
    let mut points = Vec::new();
    for &gamma in &cfg.gamma_values {
        for &ku_noise in &cfg.ku_noise_values {
            for &ku_input in &cfg.ku_input_values {
                points.push(GridPoint { gamma, ku_noise, ku_input });
            }
        }
    }
    let setups = points.iter().map(|&p| setup_point(p, user.as_ref())).collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> =
        (0..setups.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
    let mut per_job: Vec<((usize, usize), Vec<ExperimentRow>)> = jobs
        .into_par_iter()
        .map(|(p, t)| ((p, t), run_trial(&setups[p], cfg, &grid, t)))
        .collect();
    per_job.sort_by_key(|(key, _)| *key);

    let mut rows = Vec::with_capacity(per_job.len() * grid.len());
    for p in 0..setups.len() {
        for k in 0..grid.len() {
            for ((pp, _), trial_rows) in per_job.iter().filter(|((pp, _), _)| *pp == p) {
                debug_assert_eq!(*pp, p);
                rows.push(trial_rows[k].clone());
            }
        }
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(rows: &[ExperimentRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Aggregate over trials at one grid point and `N`. Failed trials are
/// counted, not averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub point: GridPoint,
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub mean: f64,
    pub median: f64,
    pub bound: f64,
    pub valid: bool,
    /// Valid rows whose error exceeds the bound.
    pub violations: usize,
}

type PointKey = (u64, u64, u64);

fn point_key(p: &GridPoint) -> PointKey {
    (p.gamma.to_bits(), p.ku_noise.to_bits(), p.ku_input.to_bits())
}

pub fn summarize(rows: &[ExperimentRow]) -> Vec<Summary> {
    let mut order: Vec<(PointKey, usize)> = Vec::new();
    let mut groups: BTreeMap<(PointKey, usize), Vec<&ExperimentRow>> = BTreeMap::new();
    for r in rows {
        let key = (point_key(&r.point), r.n);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &groups[&key];
            let mut errs: Vec<f64> = group.iter().map(|r| r.est_err).filter(|e| !e.is_nan()).collect();
            errs.sort_by(f64::total_cmp);
            let mean = if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 };
            let median = match errs.len() {
                0 => f64::NAN,
                k if k % 2 == 1 => errs[k / 2],
                k => 0.5 * (errs[k / 2 - 1] + errs[k / 2]),
            };
            Summary {
                point: group[0].point,
                n: group[0].n,
                trials: group.len(),
                failures: group.len() - errs.len(),
                mean,
                median,
                bound: group[0].bound,
                valid: group[0].valid,
                violations: group.iter().filter(|r| r.valid && r.est_err > r.bound).count(),
            }
        })
        .collect()
}

/// Ordinary least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// `(N, mean EstErr)` for one grid point.
pub fn mean_curve(summaries: &[Summary], point: &GridPoint) -> Vec<(f64, f64)> {
    summaries.iter().filter(|s| point_key(&s.point) == point_key(point)).map(|s| (s.n as f64, s.mean)).collect()
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// One chart per swept parameter: series are that parameter's values, the
/// other two parameters are held at their first listed value.
pub fn charts(cfg: &ExperimentConfig, summaries: &[Summary]) -> Vec<(String, LogLogChart)> {
    let g0 = cfg.gamma_values[0];
    let n0 = cfg.ku_noise_values[0];
    let i0 = cfg.ku_input_values[0];
    type Make = fn(f64, f64, f64, f64) -> GridPoint;
    let sweeps: [(&str, &str, &[f64], Make); 3] = [
        ("gamma", "γ", &cfg.gamma_values, |v, _, n, i| GridPoint { gamma: v, ku_noise: n, ku_input: i }),
        ("ku_noise", "K_u", &cfg.ku_noise_values, |v, g, _, i| GridPoint { gamma: g, ku_noise: v, ku_input: i }),
        ("ku_input", "K_u,inp", &cfg.ku_input_values, |v, g, n, _| GridPoint { gamma: g, ku_noise: n, ku_input: v }),
    ];
    let mut out = Vec::new();
    for (slug, label, values, make) in sweeps {
        if values.len() < 2 && !out.is_empty() {
            continue;
        }
        if values.len() < 2 && sweeps.iter().any(|s| s.2.len() > 1) {
            continue;
        }
        let series = values
            .iter()
            .map(|&v| {
                let pt = make(v, g0, n0, i0);
                Series { label: format!("{label} = {}", fmt_value(v)), points: mean_curve(summaries, &pt) }
            })
            .collect();
        let chart = LogLogChart {
            title: format!("Mean EstErr vs N, varying {label}"),
            x_label: "N".into(),
            y_label: "mean EstErr".into(),
            series,
        };
        out.push((format!("est_err_vs_N_{slug}.svg"), chart));
    }
    out
}

/// Human-readable table of the summaries plus rate slopes.
pub fn summary_table(summaries: &[Summary]) -> String {
    let mut s = String::from("gamma  ku_noise  ku_input        N  fail       mean     median      bound  valid\n");
    let mut points: Vec<GridPoint> = Vec::new();
    for sm in summaries {
        if !points.iter().any(|p| point_key(p) == point_key(&sm.point)) {
            points.push(sm.point);
        }
        s.push_str(&format!(
            "{:5} {:9} {:9} {:8} {:5} {:10.4e} {:10.4e} {:10.3e}  {}\n",
            sm.point.gamma,
            sm.point.ku_noise,
            sm.point.ku_input,
            sm.n,
            sm.failures,
            sm.mean,
            sm.median,
            sm.bound,
            u8::from(sm.valid)
        ));
    }
    for p in &points {
        s.push_str(&format!(
            "slope of log mean EstErr vs log N at gamma={} ku_noise={} ku_input={}: {:.3}\n",
            p.gamma,
            p.ku_noise,
            p.ku_input,
            loglog_slope(&mean_curve(summaries, p))
        ));
    }
    s
}

/// Writes `results.csv`, `summary.txt` and the SVG charts into
/// `cfg.output_dir`.
pub fn write_outputs(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut written = Vec::new();
    let csv_path = cfg.output_dir.join("results.csv");
    write_rows(rows, std::io::BufWriter::new(std::fs::File::create(&csv_path)?))?;
    written.push(csv_path);
    let summaries = summarize(rows);
    let txt = cfg.output_dir.join("summary.txt");
    std::fs::write(&txt, summary_table(&summaries))?;
    written.push(txt);
    for (name, chart) in charts(cfg, &summaries) {
        let path = cfg.output_dir.join(name);
        std::fs::write(&path, chart.to_svg())?;
        written.push(path);
    }
    Ok(written)
}
