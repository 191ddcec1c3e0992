//! Trajectory generation under i.i.d. switching and bounded uniform signals.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LssError, Result};
use crate::model::{LssModel, SignalSpec, SwitchingDistribution};

/// Steps discarded before recording so the state forgets `x = 0`.
pub const DEFAULT_BURN_IN: usize = 200;

pub(crate) fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

/// `|x|_inf` above which a run is declared divergent.
pub const BLOW_UP: f64 = 1e12;

/// The generator behind every simulated trajectory.
pub type SimRng = ChaCha8Rng;

/// One recorded trajectory `{(y(t), u(t), q(t))}` for `t = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    n: usize,
    m: usize,
    y: Vec<f64>,
    /// Row-major `(N+1) x m`.
    u: Vec<f64>,
    /// 0-based modes.
    q: Vec<usize>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(y: Vec<f64>, u: Vec<f64>, m: usize, q: Vec<usize>, seed: u64) -> Result<Self> {
        if y.is_empty() {
            return Err(LssError::LengthMismatch("a trajectory needs at least one sample".into()));
        }
        if m == 0 || u.len() != y.len() * m || q.len() != y.len() {
            return Err(LssError::LengthMismatch(format!(
                "y has {} samples, u has {} values (m = {m}), q has {}",
                y.len(),
                u.len(),
                q.len()
            )));
        }
        if y.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(LssError::Parameter("trajectory contains non-finite values".into()));
        }
        Ok(Self { n: y.len() - 1, m, y, u, q, seed })
    }

    /// `N`; the trajectory holds `N + 1` samples.
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn u(&self, t: usize) -> &[f64] {
        &self.u[t * self.m..(t + 1) * self.m]
    }
    pub fn modes(&self) -> &[usize] {
        &self.q
    }

    /// The first `n + 1` samples.
    pub fn prefix(&self, n: usize) -> SampleSet {
        let n = n.min(self.n);
        SampleSet {
            n,
            m: self.m,
            y: self.y[..=n].to_vec(),
            u: self.u[..(n + 1) * self.m].to_vec(),
            q: self.q[..=n].to_vec(),
            seed: self.seed,
        }
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Fraction of samples spent in each mode.
    pub fn mode_frequencies(&self, n_q: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n_q];
        for &q in &self.q {
            if q < n_q {
                counts[q] += 1;
            }
        }
        counts.iter().map(|&c| c as f64 / self.q.len() as f64).collect()
    }

    /// CSV with header `t,y,u_1,...,u_m,q`; modes written 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend((1..=self.m).map(|l| format!("u_{l}")));
        header.push("q".into());
        wr.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.m + 3);
        for t in 0..=self.n {
            rec.clear();
            rec.push(t.to_string());
            rec.push(format!("{:?}", self.y[t]));
            rec.extend(self.u(t).iter().map(|v| format!("{v:?}")));
            rec.push((self.q[t] + 1).to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`SampleSet::write_csv`]. The seed is not
    /// stored in the file and is set to 0.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 4 || cols[0] != "t" || cols[1] != "y" || *cols.last().unwrap() != "q" {
            return Err(LssError::Parameter("trajectory CSV header must be t,y,u_1..u_m,q".into()));
        }
        let m = cols.len() - 3;
        for (l, name) in cols[2..2 + m].iter().enumerate() {
            if *name != format!("u_{}", l + 1) {
                return Err(LssError::Parameter(format!("unexpected column {name:?}")));
            }
        }
        let bad = |what: &str, row: usize| LssError::Parameter(format!("bad {what} in trajectory row {row}"));
        let (mut y, mut u, mut q) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let t: usize = rec[0].trim().parse().map_err(|_| bad("t", row))?;
            if t != row {
                return Err(bad("time index", row));
            }
            y.push(rec[1].trim().parse::<f64>().map_err(|_| bad("y", row))?);
            for l in 0..m {
                u.push(rec[2 + l].trim().parse::<f64>().map_err(|_| bad("u", row))?);
            }
            let mode: usize = rec[2 + m].trim().parse().map_err(|_| bad("q", row))?;
            q.push(mode.checked_sub(1).ok_or_else(|| bad("q", row))?);
        }
        SampleSet::new(y, u, m, q, 0)
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub model: LssModel,
    pub dist: SwitchingDistribution,
    pub signal: SignalSpec,
    /// Retained trajectory runs over `t = 0..=n_samples`.
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(model: LssModel, dist: SwitchingDistribution, signal: SignalSpec, n_samples: usize, seed: u64) -> Self {
        Self { model, dist, signal, n_samples, burn_in: DEFAULT_BURN_IN, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(LssError::Parameter("N must be at least 1".into()));
        }
        if self.dist.n_q() != self.model.n_q() {
            return Err(LssError::Dimension(format!(
                "switching law has {} modes, model has {}",
                self.dist.n_q(),
                self.model.n_q()
            )));
        }
        if self.signal.m() != self.model.m() {
            return Err(LssError::Dimension(format!(
                "Sigma_u is {}x{0}, model has m = {}",
                self.signal.m(),
                self.model.m()
            )));
        }
        Ok(())
    }
}

/// Fills `out` with i.i.d. draws uniform on `[-bound, bound]`.
///
/// Each draw is `bound * (2 r - 1)` for one standard uniform `r`, so two runs
/// with the same seed and different bounds see proportional signals.
pub fn fill_bounded_uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        let r: f64 = rng.random();
        *v = bound * (2.0 * r - 1.0);
    }
}

pub fn sample_bounded_uniform<R: Rng + ?Sized>(rng: &mut R, dim: usize, bound: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_bounded_uniform(rng, bound, &mut out);
    out
}

fn sample_mode<R: Rng + ?Sized>(rng: &mut R, cdf: &[f64]) -> usize {
    let r: f64 = rng.random();
    cdf.iter().position(|&c| r < c).unwrap_or(cdf.len() - 1)
}

/// Column-major dense mat-vec accumulate: `out += a x`.
#[inline]
fn gemv_acc(a: &[f64], rows: usize, x: &[f64], out: &mut [f64]) {
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            let col = &a[j * rows..(j + 1) * rows];
            for (o, &aij) in out.iter_mut().zip(col) {
                *o += aij * xj;
            }
        }
    }
}

/// Draws one trajectory. Per step the draws are, in order: the mode, the
/// `m` inputs, the `n` state noises and the output noise.
pub fn simulate(cfg: &SimConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let model = &cfg.model;
    let (n, m) = (model.n(), model.m());
    let mut cdf = Vec::with_capacity(model.n_q());
    let mut acc = 0.0;
    for &p in cfg.dist.probs() {
        acc += p;
        cdf.push(acc);
    }
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let total = cfg.burn_in + cfg.n_samples + 1;
    let kept = cfg.n_samples + 1;
    let mut y = Vec::with_capacity(kept);
    let mut u_rec = Vec::with_capacity(kept * m);
    let mut q_rec = Vec::with_capacity(kept);

    let (ku_in, ku_noise) = (cfg.signal.ku_input(), cfg.signal.ku_noise());
    let c = model.c().as_slice();
    let d = model.d().as_slice();
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut w = vec![0.0; n];
    let mut v = [0.0];

    for step in 0..total {
        let q = sample_mode(&mut rng, &cdf);
        fill_bounded_uniform(&mut rng, ku_in, &mut u);
        fill_bounded_uniform(&mut rng, ku_noise, &mut w);
        fill_bounded_uniform(&mut rng, ku_noise, &mut v);

        if step >= cfg.burn_in {
            let yt = dot(c, &x) + dot(d, &u) + v[0];
            y.push(yt);
            u_rec.extend_from_slice(&u);
            q_rec.push(q);
        }

        next.copy_from_slice(&w);
        gemv_acc(model.a(q).as_slice(), n, &x, &mut next);
        gemv_acc(model.b(q).as_slice(), n, &u, &mut next);
        std::mem::swap(&mut x, &mut next);
        let norm = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(norm <= BLOW_UP) {
            return Err(LssError::Unstable { step, norm });
        }
    }
    SampleSet::new(y, u_rec, m, q_rec, cfg.seed)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic rollout from `x0` with the given signals; returns `y`.
/// Modes are 0-based.
pub fn simulate_driven(
    model: &LssModel,
    u: &[Vec<f64>],
    q: &[usize],
    w: &[Vec<f64>],
    v: &[f64],
    x0: &DVector<f64>,
) -> Result<Vec<f64>> {
    let len = u.len();
    if q.len() != len || w.len() != len || v.len() != len {
        return Err(LssError::LengthMismatch(format!(
            "u: {len}, q: {}, w: {}, v: {}",
            q.len(),
            w.len(),
            v.len()
        )));
    }
    let (n, m) = (model.n(), model.m());
    if x0.len() != n || u.iter().any(|ut| ut.len() != m) || w.iter().any(|wt| wt.len() != n) {
        return Err(LssError::Dimension("signal dimensions do not match the model".into()));
    }
    let mut x = x0.clone();
    let mut y = Vec::with_capacity(len);
    for t in 0..len {
        let qt = q[t];
        if qt >= model.n_q() {
            return Err(LssError::LetterOutOfRange { letter: qt + 1, n_q: model.n_q() });
        }
        let ut = DVector::from_column_slice(&u[t]);
        y.push((model.c() * &x)[0] + (model.d() * &ut)[0] + v[t]);
        x = model.a(qt) * &x + model.b(qt) * &ut + DVector::from_column_slice(&w[t]);
    }
    Ok(y)
}
