//! Quadratic-stability certificates and the finite-sample error bound.
//!
//! The bound on `EstErr` holds with probability `1 - δ` and reads
//! `K_2 K(δ, N)` where
//!
//! ```text
//! K̃(δ,N) = K_0 sqrt(8 log(2 m |W| / δ) / N)        K(δ,N) = sqrt(m) K_{-1} K̃(δ,N)
//! K_0     = sqrt(m') K'_u K_M / (1-γ) + K_θ          K'_u = max(K_u, K_u^2)
//! K_θ     = 2 (m' K_u + n_Q) sqrt(m') K'_u K_M K_γ
//! K_γ     = (γ + (2n+1)(n+2)(1-γ)^2 + (1-γ)^3) / (1-γ)^3
//! K_{-1}  = ||Σ_u^{-1}||_F / min_{w ∈ W} p_w
//! K_y     = sqrt(m') K_M K_u / (1-γ)
//! K_2     = sqrt(|W|) max(1, (2 σ_n + n_* K_{-1} K_y K_u 4 sqrt(2)) / σ_n^2)
//! ```
//!
//! with `m' = m + n + 1`, `n_* = max(n, m)` and `σ_n` the smallest singular
//! value of the true `H_ab`. It applies once `N > 2(2n+1)` and
//! `K(δ,N) <= σ_n / (2 |W| sqrt(n))`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{LssError, Result};
use crate::hokalman::{build_hankels, required_words, Selection};
use crate::linalg;
use crate::markov::MarkovMap;
use crate::model::{p_word, LssModel, SignalSpec, SwitchingDistribution};

/// Stand-in for `γ = 0` so that every formula stays finite.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// `P ≻ 0` and `γ ∈ (0,1)` with `A_q^T P A_q ≺ (γ²/n_Q²) P` for every mode.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityCertificate {
    pub p: DMatrix<f64>,
    pub gamma: f64,
    /// Smallest eigenvalue of `(γ²/n_Q²) P - A_q^T P A_q` over all modes.
    pub margin: f64,
    /// Spectral radius of `Σ_q p_q A_q ⊗ A_q`.
    pub schur_radius: f64,
}

impl StabilityCertificate {
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::json!({
            "P": linalg::to_rows(&self.p),
            "gamma": self.gamma,
            "margin": self.margin,
            "schur_radius": self.schur_radius,
        });
        Ok(serde_json::to_string_pretty(&value)?)
    }
}

/// Smallest `γ` certified by `P`, inflated by `1e-9` relative, and the
/// margin of the matrix inequality at that `γ`.
pub fn gamma_from_p(model: &LssModel, p: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = model.n();
    if p.shape() != (n, n) || !linalg::is_symmetric(p, 1e-12) {
        return Err(LssError::NotPositiveDefinite);
    }
    let l = p.clone().cholesky().ok_or(LssError::NotPositiveDefinite)?.l();
    let l_inv = l.clone().try_inverse().ok_or(LssError::NotPositiveDefinite)?;
    let n_q = model.n_q() as f64;
    let mut worst = 0.0f64;
    for a in model.a_all() {
        let g = &l_inv * a.transpose() * p * a * l_inv.transpose();
        worst = worst.max(linalg::symmetric_eigenvalues(&g).last().copied().unwrap_or(0.0));
    }
    let raw = n_q * worst.max(0.0).sqrt();
    let gamma = raw.max(GAMMA_FLOOR) * (1.0 + 1e-9);
    if gamma >= 1.0 {
        return Err(LssError::NotQuadraticallyStable { gamma });
    }
    Ok((gamma, stability_margin(model, p, gamma)))
}

/// `min_q λ_min((γ²/n_Q²) P - A_q^T P A_q)`.
pub fn stability_margin(model: &LssModel, p: &DMatrix<f64>, gamma: f64) -> f64 {
    let scale = gamma * gamma / (model.n_q() * model.n_q()) as f64;
    model
        .a_all()
        .iter()
        .map(|a| {
            let gap = p * scale - a.transpose() * p * a;
            linalg::symmetric_eigenvalues(&gap)[0]
        })
        .fold(f64::INFINITY, f64::min)
}

/// Spectral radius of `Σ_q p_q A_q ⊗ A_q`; below one means mean-square stable.
pub fn schur_radius(model: &LssModel, dist: &SwitchingDistribution) -> f64 {
    let n = model.n();
    let mut sum = DMatrix::zeros(n * n, n * n);
    for (a, &pq) in model.a_all().iter().zip(dist.probs()) {
        sum += linalg::kron(a, a) * pq;
    }
    linalg::spectral_radius(&sum)
}

/// Validates a user-supplied `P`.
pub fn certify(model: &LssModel, dist: &SwitchingDistribution, p: &DMatrix<f64>) -> Result<StabilityCertificate> {
    let (gamma, margin) = gamma_from_p(model, p)?;
    Ok(StabilityCertificate { p: p.clone(), gamma, margin, schur_radius: schur_radius(model, dist) })
}

const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_MAX_ITER: usize = 10_000;

/// `P ← I + (n_Q / γ²) Σ_q A_q^T P A_q` from `P = I`.
fn averaged_fixed_point(model: &LssModel, gamma_target: f64) -> Option<DMatrix<f64>> {
    let n = model.n();
    let weight = model.n_q() as f64 / (gamma_target * gamma_target);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut p = eye.clone();
    for _ in 0..FIXED_POINT_MAX_ITER {
        let mut next = eye.clone();
        for a in model.a_all() {
            next += a.transpose() * &p * a * weight;
        }
        let change = (&next - &p).norm() / next.norm();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return None;
        }
        if change < FIXED_POINT_TOL {
            return Some(p);
        }
    }
    None
}

/// Solves `P = I + s Σ_q A_q^T P A_q` directly.
fn scaled_lyapunov(model: &LssModel, s: f64) -> Option<DMatrix<f64>> {
    let n = model.n();
    let mut op = DMatrix::<f64>::identity(n * n, n * n);
    for a in model.a_all() {
        let at = a.transpose();
        op -= linalg::kron(&at, &at) * s;
    }
    let rhs = DMatrix::<f64>::identity(n, n);
    let vec_p = linalg::solve(&op, &DMatrix::from_column_slice(n * n, 1, rhs.as_slice()))?;
    let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// Heuristic search for a certificate with `γ <= gamma_target`.
///
/// Candidates, in order: the averaged fixed point
/// `P ← I + (n_Q/γ²) Σ A_q^T P A_q`, then solutions of
/// `P = I + s Σ_q A_q^T P A_q` for `s` approaching `1/ρ(Σ_q A_q ⊗ A_q)` from
/// below. The first candidate that `gamma_from_p` validates is returned.
/// Failure is inconclusive, not a proof of instability.
pub fn find_p(model: &LssModel, dist: &SwitchingDistribution, gamma_target: f64) -> Result<StabilityCertificate> {
    if !(gamma_target > 0.0 && gamma_target < 1.0) {
        return Err(LssError::Parameter(format!("gamma target {gamma_target} outside (0, 1)")));
    }
    let radius = schur_radius(model, dist);
    let mut candidates: Vec<DMatrix<f64>> = Vec::new();
    candidates.extend(averaged_fixed_point(model, gamma_target));

    let n = model.n();
    let mut sum = DMatrix::zeros(n * n, n * n);
    for a in model.a_all() {
        sum += linalg::kron(a, a);
    }
    let rho = linalg::spectral_radius(&sum);
    if rho > 0.0 {
        for theta in [0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 1e-2, 5e-3, 2e-3, 1e-3, 1e-4, 1e-5, 1e-6] {
            candidates.extend(scaled_lyapunov(model, (1.0 - theta) / rho));
        }
    } else {
        candidates.push(DMatrix::identity(n, n));
    }

    for p in candidates {
        if let Ok((gamma, margin)) = gamma_from_p(model, &p) {
            if gamma <= gamma_target && margin > 0.0 {
                return Ok(StabilityCertificate { p, gamma, margin, schur_radius: radius });
            }
        }
    }
    Err(LssError::NoCertificate { schur_radius: radius })
}

/// `K_M = max(||C|| max_q ||[B_q | I_n | 0]|| (n_Q/γ) sqrt(λ_1(P)/λ_n(P)), ||[D, 1]||)`.
pub fn compute_km(model: &LssModel, cert: &StabilityCertificate) -> f64 {
    let (n, m) = (model.n(), model.m());
    let b_prime_norm = model
        .b_all()
        .iter()
        .map(|b| {
            let mut bp = DMatrix::zeros(n, m + n + 1);
            bp.view_mut((0, 0), (n, m)).copy_from(b);
            bp.view_mut((0, m), (n, n)).fill_with_identity();
            linalg::spectral_norm(&bp)
        })
        .fold(0.0, f64::max);
    let ev = linalg::symmetric_eigenvalues(&cert.p);
    let cond = (ev[n - 1] / ev[0]).sqrt();
    let first = linalg::spectral_norm(model.c()) * b_prime_norm * (model.n_q() as f64 / cert.gamma) * cond;
    let mut d1 = DMatrix::zeros(1, m + 1);
    d1.view_mut((0, 0), (1, m)).copy_from(model.d());
    d1[(0, m)] = 1.0;
    first.max(linalg::spectral_norm(&d1))
}

/// Scalars that fully determine the bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundParams {
    pub n: usize,
    pub m: usize,
    pub n_q: usize,
    pub gamma: f64,
    pub k_m: f64,
    pub k_u: f64,
    /// `||Σ_u^{-1}||_F`.
    pub sigma_u_inv_fro: f64,
    /// `min_{w ∈ W} p_w`.
    pub min_p_w: f64,
    /// `|W|`, excluding the empty word.
    pub w_size: usize,
    /// `σ_n(H_ab)` of the true Hankel matrix.
    pub sigma_n_h: f64,
}

/// Every `N`- and `δ`-independent constant of the bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundConstants {
    pub params: BoundParams,
    pub m_prime: usize,
    pub n_star: usize,
    pub k_u_prime: f64,
    pub k_y: f64,
    pub k_gamma: f64,
    pub k_theta: f64,
    pub k_0: f64,
    pub k_minus1: f64,
    pub k_2: f64,
    /// Hankel validity threshold `σ_n / (2 |W| sqrt(n))`.
    pub hankel_threshold: f64,
}

impl BoundConstants {
    pub fn new(params: BoundParams) -> Result<Self> {
        let BoundParams { n, m, n_q, k_m, k_u, sigma_u_inv_fro, min_p_w, w_size, sigma_n_h, .. } = params;
        let gamma = params.gamma.max(GAMMA_FLOOR);
        if !(gamma < 1.0) {
            return Err(LssError::NotQuadraticallyStable { gamma });
        }
        if !(sigma_n_h > 0.0) || w_size == 0 || !(min_p_w > 0.0) {
            return Err(LssError::Parameter("sigma_n(H), |W| and min p_w must be positive".into()));
        }
        let m_prime = m + n + 1;
        let mp = m_prime as f64;
        let n_star = n.max(m);
        let k_u_prime = k_u.max(k_u * k_u);
        let one_minus = 1.0 - gamma;
        let k_y = mp.sqrt() * k_m * k_u / one_minus;
        let k_gamma = (gamma + (2 * n + 1) as f64 * (n + 2) as f64 * one_minus.powi(2) + one_minus.powi(3))
            / one_minus.powi(3);
        let k_theta = 2.0 * (mp * k_u + n_q as f64) * mp.sqrt() * k_u_prime * k_m * k_gamma;
        let k_0 = mp.sqrt() * k_u_prime * k_m / one_minus + k_theta;
        let k_minus1 = sigma_u_inv_fro / min_p_w;
        let s = sigma_n_h;
        let k_2 = (w_size as f64).sqrt()
            * f64::max(1.0, (2.0 * s + n_star as f64 * k_minus1 * k_y * k_u * 4.0 * 2f64.sqrt()) / (s * s));
        let hankel_threshold = s / (2.0 * w_size as f64 * (n as f64).sqrt());
        Ok(Self {
            params: BoundParams { gamma, ..params },
            m_prime,
            n_star,
            k_u_prime,
            k_y,
            k_gamma,
            k_theta,
            k_0,
            k_minus1,
            k_2,
            hankel_threshold,
        })
    }

    /// `K̃(δ, N)`.
    pub fn k_tilde(&self, delta: f64, n_samples: u64) -> f64 {
        let p = &self.params;
        let log_term = (2.0 * p.m as f64 * p.w_size as f64 / delta).ln();
        self.k_0 * (8.0 * log_term / n_samples as f64).sqrt()
    }

    /// `K(δ, N)`: radius of the simultaneous Markov-parameter confidence set.
    pub fn k_delta_n(&self, delta: f64, n_samples: u64) -> f64 {
        (self.params.m as f64).sqrt() * self.k_minus1 * self.k_tilde(delta, n_samples)
    }

    /// `K_2 K(δ, N)`.
    pub fn bound(&self, delta: f64, n_samples: u64) -> f64 {
        self.k_2 * self.k_delta_n(delta, n_samples)
    }

    /// `2(2n+1) + 1`.
    pub fn n_min_basic(&self) -> u64 {
        2 * (2 * self.params.n as u64 + 1) + 1
    }

    pub fn hankel_valid(&self, delta: f64, n_samples: u64) -> bool {
        self.k_delta_n(delta, n_samples) <= self.hankel_threshold
    }

    /// Smallest `N` with `K(δ, N) <= σ_n / (2 |W| sqrt(n))`; saturates at
    /// `u64::MAX`.
    pub fn n_min_hankel(&self, delta: f64) -> u64 {
        // K(δ,N) = c / sqrt(N)
        let c = self.k_delta_n(delta, 1);
        let guess = (c / self.hankel_threshold).powi(2).ceil();
        if !guess.is_finite() || guess >= u64::MAX as f64 {
            return u64::MAX;
        }
        let guess = (guess as u64).max(1);
        let (mut lo, mut hi) = (guess.saturating_sub(guess / 16 + 2).max(1), guess.saturating_add(guess / 16 + 2));
        while !self.hankel_valid(delta, hi) {
            if hi == u64::MAX {
                return u64::MAX;
            }
            hi = hi.saturating_mul(2);
        }
        if self.hankel_valid(delta, lo) {
            lo = 1;
            if self.hankel_valid(delta, lo) {
                return 1;
            }
        }
        // invariant: !valid(lo), valid(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.hankel_valid(delta, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Smallest `N` meeting both validity conditions.
    pub fn min_valid_n(&self, delta: f64) -> u64 {
        self.n_min_basic().max(self.n_min_hankel(delta))
    }
}

/// Everything the bound needs about one identification problem.
#[derive(Clone, Debug)]
pub struct BoundInputs {
    pub stability: StabilityCertificate,
    pub constants: BoundConstants,
    /// `1 / p_*^{2n+1}` alongside the exact `1 / min_{w ∈ W} p_w`.
    pub inv_min_p_w_loose: f64,
}

impl BoundInputs {
    pub fn new(
        model: &LssModel,
        dist: &SwitchingDistribution,
        signal: &SignalSpec,
        stability: StabilityCertificate,
        sel: &Selection,
        sigma_n_h: f64,
    ) -> Result<Self> {
        let words = required_words(sel, model.n_q());
        let w_size = words.len() - 1;
        let mut min_p_w = f64::INFINITY;
        for w in words.iter().filter(|w| !w.is_empty()) {
            min_p_w = min_p_w.min(p_word(dist, w)?);
        }
        let sigma_inv = linalg::spd_inverse(signal.sigma_u()).map_err(|_| LssError::SingularCovariance)?;
        let params = BoundParams {
            n: model.n(),
            m: model.m(),
            n_q: model.n_q(),
            gamma: stability.gamma,
            k_m: compute_km(model, &stability),
            k_u: signal.k_u(),
            sigma_u_inv_fro: sigma_inv.norm(),
            min_p_w,
            w_size,
            sigma_n_h,
        };
        let inv_min_p_w_loose = dist.min_prob().powi(-(2 * model.n() as i32 + 1));
        Ok(Self { stability, constants: BoundConstants::new(params)?, inv_min_p_w_loose })
    }

    pub fn certificate(&self, delta: f64, n_samples: u64) -> Result<BoundCertificate> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LssError::Parameter(format!("delta = {delta} outside (0, 1)")));
        }
        if n_samples == 0 {
            return Err(LssError::Parameter("N must be positive".into()));
        }
        let c = &self.constants;
        let k_tilde = c.k_tilde(delta, n_samples);
        let k_delta_n = c.k_delta_n(delta, n_samples);
        let n_min_hankel = c.n_min_hankel(delta);
        Ok(BoundCertificate {
            m_prime: c.m_prime,
            k_u: c.params.k_u,
            k_u_prime: c.k_u_prime,
            k_m: c.params.k_m,
            k_y: c.k_y,
            k_gamma: c.k_gamma,
            k_theta: c.k_theta,
            k_0: c.k_0,
            k_minus1: c.k_minus1,
            w_size: c.params.w_size,
            min_p_w: c.params.min_p_w,
            inv_min_p_w_loose: self.inv_min_p_w_loose,
            sigma_n_h: c.params.sigma_n_h,
            n_star: c.n_star,
            delta,
            n: n_samples,
            k_tilde,
            k_delta_n,
            k_2: c.k_2,
            bound_est_err: c.k_2 * k_delta_n,
            hankel_threshold: c.hankel_threshold,
            n_min_basic: c.n_min_basic(),
            n_min_hankel,
            valid_n: n_samples > 2 * (2 * c.params.n as u64 + 1),
            valid_hankel: k_delta_n <= c.hankel_threshold,
            gamma: self.stability.gamma,
            margin: self.stability.margin,
            schur_radius: self.stability.schur_radius,
            p: linalg::to_rows(&self.stability.p),
        })
    }
}

/// One fully evaluated bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub m_prime: usize,
    #[serde(rename = "K_u")]
    pub k_u: f64,
    #[serde(rename = "K_u_prime")]
    pub k_u_prime: f64,
    #[serde(rename = "K_M")]
    pub k_m: f64,
    #[serde(rename = "K_y")]
    pub k_y: f64,
    #[serde(rename = "K_gamma")]
    pub k_gamma: f64,
    #[serde(rename = "K_theta")]
    pub k_theta: f64,
    #[serde(rename = "K_0")]
    pub k_0: f64,
    #[serde(rename = "K_minus1")]
    pub k_minus1: f64,
    #[serde(rename = "W_size")]
    pub w_size: usize,
    pub min_p_w: f64,
    pub inv_min_p_w_loose: f64,
    #[serde(rename = "sigma_n_H")]
    pub sigma_n_h: f64,
    pub n_star: usize,
    pub delta: f64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "K_tilde")]
    pub k_tilde: f64,
    #[serde(rename = "K_deltaN")]
    pub k_delta_n: f64,
    #[serde(rename = "K_2")]
    pub k_2: f64,
    #[serde(rename = "bound_EstErr")]
    pub bound_est_err: f64,
    pub hankel_threshold: f64,
    #[serde(rename = "N_min_basic")]
    pub n_min_basic: u64,
    #[serde(rename = "N_min_hankel")]
    pub n_min_hankel: u64,
    pub valid_n: bool,
    pub valid_hankel: bool,
    pub gamma: f64,
    pub margin: f64,
    pub schur_radius: f64,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
}

impl BoundCertificate {
    pub fn valid(&self) -> bool {
        self.valid_n && self.valid_hankel
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Two-column human-readable listing.
    pub fn table(&self) -> String {
        let rows: [(&str, String); 24] = [
            ("N", self.n.to_string()),
            ("delta", format!("{}", self.delta)),
            ("gamma", format!("{:.6}", self.gamma)),
            ("m'", self.m_prime.to_string()),
            ("K_u", format!("{:.6e}", self.k_u)),
            ("K'_u", format!("{:.6e}", self.k_u_prime)),
            ("K_M", format!("{:.6e}", self.k_m)),
            ("K_y", format!("{:.6e}", self.k_y)),
            ("K_gamma", format!("{:.6e}", self.k_gamma)),
            ("K_theta", format!("{:.6e}", self.k_theta)),
            ("K_0", format!("{:.6e}", self.k_0)),
            ("K_-1", format!("{:.6e}", self.k_minus1)),
            ("|W|", self.w_size.to_string()),
            ("min p_w", format!("{:.6e}", self.min_p_w)),
            ("1/p_*^(2n+1)", format!("{:.6e}", self.inv_min_p_w_loose)),
            ("sigma_n(H)", format!("{:.6e}", self.sigma_n_h)),
            ("K~(delta,N)", format!("{:.6e}", self.k_tilde)),
            ("K(delta,N)", format!("{:.6e}", self.k_delta_n)),
            ("K_2", format!("{:.6e}", self.k_2)),
            ("bound EstErr", format!("{:.6e}", self.bound_est_err)),
            ("N > 2(2n+1)", self.valid_n.to_string()),
            ("K <= threshold", self.valid_hankel.to_string()),
            ("N_min_hankel", self.n_min_hankel.to_string()),
            ("schur radius", format!("{:.6}", self.schur_radius)),
        ];
        rows.iter().map(|(k, v)| format!("{k:>16}  {v}\n")).collect()
    }
}

// ---------------------------------------------------------------------------
// Hankel sensitivity

/// Outcome of checking the Hankel perturbation inequalities for one
/// perturbed Markov map.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport {
    /// `sqrt(Σ_w ||M_w - M̂_w||_F^2)` over `W`.
    pub perturbation: f64,
    /// Largest `||Ĥ - H||_F` over all blocks.
    pub max_block_diff: f64,
    pub sigma_n: f64,
    /// Whether every `||M_w - M̂_w||_F < σ_n / (2 |W| sqrt(n))`.
    pub small: bool,
    pub inv_norm: f64,
    pub inv_diff: f64,
    pub diff_ok: bool,
    pub inv_norm_ok: bool,
    pub inv_diff_ok: bool,
}

/// Checks, for true and perturbed Markov maps over the selection's word set:
/// `||Ĥ - H||_F <= sqrt(Σ_w ||ΔM_w||²)` for every block and, when each
/// `||ΔM_w||_F < σ_n/(2|W|sqrt(n))`, `||Ĥ_ab^{-1}||_F <= 2/σ_n` and
/// `||Ĥ_ab^{-1} - H_ab^{-1}||_F <= 4 sqrt(2)/σ_n² sqrt(Σ_w ||ΔM_w||²)`.
pub fn check_hankel_sensitivity(
    sel: &Selection,
    truth: &MarkovMap,
    perturbed: &MarkovMap,
    n_q: usize,
    m: usize,
) -> Result<SensitivityReport> {
    let words = required_words(sel, n_q);
    let n = sel.n();
    let w_size = words.len() - 1;
    let mut sq = 0.0;
    let mut worst = 0.0f64;
    for w in words.iter().filter(|w| !w.is_empty()) {
        let d = (truth.get(w)? - perturbed.get(w)?).norm();
        sq += d * d;
        worst = worst.max(d);
    }
    let perturbation = sq.sqrt();
    let h = build_hankels(truth, sel, n_q, m)?;
    let h_hat = build_hankels(perturbed, sel, n_q, m)?;
    let max_block_diff = h
        .blocks()
        .iter()
        .zip(h_hat.blocks())
        .map(|(a, b)| (*a - b).norm())
        .fold(0.0, f64::max);
    let sigma_n = linalg::sigma_min(&h.h_ab);
    let small = worst < sigma_n / (2.0 * w_size as f64 * (n as f64).sqrt());
    let eye = DMatrix::identity(n, n);
    let inv = linalg::solve(&h.h_ab, &eye);
    let inv_hat = linalg::solve(&h_hat.h_ab, &eye);
    let (inv_norm, inv_diff) = match (inv, inv_hat) {
        (Some(i), Some(ih)) => (ih.norm(), (ih - i).norm()),
        _ => (f64::INFINITY, f64::INFINITY),
    };
    let slack = 1.0 + 1e-10;
    let diff_ok = max_block_diff <= perturbation * slack;
    let inv_norm_ok = !small || inv_norm <= 2.0 / sigma_n * slack;
    let inv_diff_ok = !small || inv_diff <= 4.0 * 2f64.sqrt() / (sigma_n * sigma_n) * perturbation * slack;
    Ok(SensitivityReport {
        perturbation,
        max_block_diff,
        sigma_n,
        small,
        inv_norm,
        inv_diff,
        diff_ok,
        inv_norm_ok,
        inv_diff_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{a_for_gamma, two_mode_model, two_mode_selection};
    use crate::hokalman::reference_realization;
    use crate::markov::{true_markov, true_markov_map};
    use crate::model::Word;

    fn diag_model(diag: &[f64]) -> LssModel {
        let n = diag.len();
        LssModel::new(
            vec![DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag))],
            vec![DMatrix::from_element(n, 1, 1.0)],
            DMatrix::from_element(1, n, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    fn zero_model(n: usize, n_q: usize) -> LssModel {
        LssModel::new(
            vec![DMatrix::zeros(n, n); n_q],
            vec![DMatrix::from_element(n, 1, 1.0); n_q],
            DMatrix::from_element(1, n, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn gamma_for_scalar_mode() {
        let (gamma, margin) = gamma_from_p(&diag_model(&[0.5]), &DMatrix::identity(1, 1)).unwrap();
        assert!((gamma - 0.5).abs() < 1e-8);
        assert!(margin > 0.0);
    }

    #[test]
    fn gamma_floor_for_zero_dynamics() {
        let (gamma, margin) = gamma_from_p(&zero_model(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert!(gamma > 0.0 && gamma < 1e-11);
        assert!(margin > 0.0 && margin < 1e-20);
    }

    #[test]
    fn gamma_rejects_bad_p() {
        let model = diag_model(&[0.5]);
        assert!(matches!(gamma_from_p(&model, &DMatrix::from_element(1, 1, -1.0)), Err(LssError::NotPositiveDefinite)));
        let unstable = diag_model(&[1.5]);
        assert!(matches!(
            gamma_from_p(&unstable, &DMatrix::identity(1, 1)),
            Err(LssError::NotQuadraticallyStable { .. })
        ));
    }

    #[test]
    fn find_p_for_zero_dynamics() {
        let model = zero_model(2, 2);
        let cert = find_p(&model, &SwitchingDistribution::uniform(2), 0.5).unwrap();
        assert_eq!(cert.p, DMatrix::identity(2, 2));
        assert!(cert.margin > 0.0);
        assert_eq!(cert.schur_radius, 0.0);
    }

    #[test]
    fn find_p_for_benchmark_family() {
        for target in [0.1, 0.4, 0.6] {
            let model = two_mode_model(a_for_gamma(target));
            let dist = SwitchingDistribution::uniform(2);
            let cert = find_p(&model, &dist, target).unwrap();
            assert!(cert.gamma <= target, "{} > {target}", cert.gamma);
            assert!(cert.margin > 0.0);
            assert!(cert.schur_radius < 1.0);
            // soundness: the matrix inequality holds mode by mode
            for a in model.a_all() {
                let gap = &cert.p * (cert.gamma * cert.gamma / 4.0) - a.transpose() * &cert.p * a;
                assert!(linalg::symmetric_eigenvalues(&gap)[0] > 0.0);
            }
        }
    }

    #[test]
    fn find_p_fails_for_mean_square_unstable() {
        let model = LssModel::new(
            vec![DMatrix::identity(2, 2) * 2.0],
            vec![DMatrix::from_element(2, 1, 1.0)],
            DMatrix::from_element(1, 2, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        match find_p(&model, &SwitchingDistribution::uniform(1), 0.9) {
            Err(LssError::NoCertificate { schur_radius }) => assert!(schur_radius >= 1.0),
            other => panic!("expected failure, got {other:?}"),
        }
        assert!(find_p(&model, &SwitchingDistribution::uniform(1), 1.5).is_err());
    }

    #[test]
    fn schur_radius_examples() {
        assert_eq!(schur_radius(&zero_model(2, 2), &SwitchingDistribution::uniform(2)), 0.0);
        let r = schur_radius(&diag_model(&[0.5, 0.3]), &SwitchingDistribution::uniform(1));
        assert!((r - 0.25).abs() < 1e-14);
        // Σ p_q A_q⊗A_q for the benchmark is upper triangular with diagonal
        // (0, 0, 0, a²), so the radius is a².
        let a = 0.27;
        let r = schur_radius(&two_mode_model(a), &SwitchingDistribution::uniform(2));
        assert!((r - a * a).abs() < 1e-12);
    }

    #[test]
    fn km_examples() {
        let model = two_mode_model(0.27);
        let dist = SwitchingDistribution::uniform(2);
        let cert = find_p(&model, &dist, 0.6).unwrap();
        let km = compute_km(&model, &cert);
        // decay oracle: ||M'_w||₂ < K_M (γ/n_Q)^{|w|} for |w| <= 6
        for w in Word::all_up_to(2, 6).into_iter().filter(|w| !w.is_empty()) {
            let (first, rest) = w.indices().split_first().unwrap();
            let av = crate::model::a_word(&model, &Word::from_indices(rest.to_vec())).unwrap();
            let mut bp = DMatrix::zeros(2, 4);
            bp.view_mut((0, 0), (2, 1)).copy_from(model.b(*first));
            bp.view_mut((0, 1), (2, 2)).fill_with_identity();
            let mprime = linalg::spectral_norm(&(model.c() * av * bp));
            let limit = km * (cert.gamma / 2.0).powi(w.len() as i32);
            assert!(mprime < limit, "word {w:?}: {mprime} >= {limit}");
            assert!(true_markov(&model, &w).unwrap().norm() <= mprime + 1e-15);
        }
        let doubled = model.with_c(model.c() * 2.0).unwrap();
        assert!((compute_km(&doubled, &cert) - 2.0 * km).abs() < 1e-12 * km);

        let silent = model.with_c(DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(compute_km(&silent, &cert), 1.0);
    }

    fn benchmark_inputs(gamma: f64, ku_input: f64, ku_noise: f64) -> BoundInputs {
        let model = two_mode_model(a_for_gamma(gamma));
        let dist = SwitchingDistribution::uniform(2);
        let signal = SignalSpec::uniform(1, ku_input, ku_noise).unwrap();
        let cert = find_p(&model, &dist, gamma).unwrap();
        let sel = two_mode_selection();
        let rr = reference_realization(&model, &sel).unwrap();
        BoundInputs::new(&model, &dist, &signal, cert, &sel, rr.sigma_n).unwrap()
    }

    #[test]
    fn doubling_n_shrinks_radius_by_root_two() {
        let inputs = benchmark_inputs(0.6, 0.8, 1.0);
        let c1 = inputs.certificate(0.05, 100_000).unwrap();
        let c2 = inputs.certificate(0.05, 200_000).unwrap();
        assert!((c2.k_tilde / c1.k_tilde - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((c2.k_delta_n / c1.k_delta_n - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((c2.bound_est_err / c1.bound_est_err - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn certificate_fields_follow_formulas() {
        let inputs = benchmark_inputs(0.6, 0.8, 1.0);
        let c = inputs.certificate(0.05, 100_000).unwrap();
        assert_eq!(c.m_prime, 4);
        assert_eq!(c.w_size, 10);
        assert_eq!(c.k_u, 1.0);
        assert_eq!(c.k_u_prime, 1.0);
        assert!((c.min_p_w - 1.0 / 16.0).abs() < 1e-15);
        assert!(1.0 / c.min_p_w <= c.inv_min_p_w_loose);
        assert!((c.k_minus1 - (3.0 / 0.64) * 16.0).abs() < 1e-9);
        assert!((c.bound_est_err - c.k_2 * c.k_delta_n).abs() <= 1e-15 * c.bound_est_err);
        let g = c.gamma;
        let k_gamma = (g + 5.0 * 4.0 * (1.0 - g).powi(2) + (1.0 - g).powi(3)) / (1.0 - g).powi(3);
        assert!((c.k_gamma - k_gamma).abs() < 1e-12 * k_gamma);
        assert!(c.bound_est_err.is_finite() && c.bound_est_err > 0.0);
        assert!(c.valid_n);
        assert_eq!(c.n_min_basic, 11);
    }

    #[test]
    fn delta_to_one_is_continuous() {
        let inputs = benchmark_inputs(0.6, 0.8, 1.0);
        let c = inputs.certificate(1.0 - 1e-12, 10_000).unwrap();
        let limit = c.k_0 * (8.0 * (2.0 * 1.0 * 10.0f64).ln() / 10_000.0).sqrt();
        assert!((c.k_tilde - limit).abs() < 1e-9 * limit);
        assert!(inputs.certificate(0.0, 10).is_err());
        assert!(inputs.certificate(1.0, 10).is_err());
    }

    #[test]
    fn min_valid_n_conditions() {
        let inputs = benchmark_inputs(0.6, 0.8, 1.0);
        let c = &inputs.constants;
        let n_min = c.min_valid_n(0.05);
        assert!(n_min > 10);
        assert!(c.hankel_valid(0.05, n_min));
        assert!(!c.hankel_valid(0.05, n_min - 1));

        // halving σ_n multiplies the threshold N by ~4
        let mut params = c.params.clone();
        let base = c.n_min_hankel(0.05) as f64;
        params.sigma_n_h /= 2.0;
        let halved = BoundConstants::new(params).unwrap();
        let ratio = halved.n_min_hankel(0.05) as f64 / base;
        // K_2 does not enter the threshold; only σ_n does
        assert!((ratio - 4.0).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn small_problem_min_n_is_basic() {
        let params = BoundParams {
            n: 1,
            m: 1,
            n_q: 1,
            gamma: 0.1,
            k_m: 1e-6,
            k_u: 1e-3,
            sigma_u_inv_fro: 1.0,
            min_p_w: 1.0,
            w_size: 2,
            sigma_n_h: 1.0,
        };
        let c = BoundConstants::new(params).unwrap();
        assert_eq!(c.n_min_hankel(0.05), 1);
        assert_eq!(c.min_valid_n(0.05), 7);
    }

    #[test]
    fn sensitivity_on_exact_map_is_trivial() {
        let model = two_mode_model(0.27);
        let sel = two_mode_selection();
        let truth = true_markov_map(&model, required_words(&sel, 2).iter()).unwrap();
        let r = check_hankel_sensitivity(&sel, &truth, &truth, 2, 1).unwrap();
        assert_eq!(r.perturbation, 0.0);
        assert!(r.small && r.diff_ok && r.inv_norm_ok && r.inv_diff_ok);
    }

    #[test]
    fn repeated_hankel_entries_break_plain_difference_bound() {
        // (2,1) fills two entries of H_ab: perturbing only that word doubles
        // its weight in ||ΔH||_F² and the plain bound no longer holds.
        let model = two_mode_model(0.27);
        let sel = two_mode_selection();
        let truth = true_markov_map(&model, required_words(&sel, 2).iter()).unwrap();
        let mut pert = truth.clone();
        let w: Word = "2.1".parse().unwrap();
        pert.entries.insert(w.clone(), truth.get(&w).unwrap().add_scalar(1e-3));
        let r = check_hankel_sensitivity(&sel, &truth, &pert, 2, 1).unwrap();
        assert!(!r.diff_ok);
        let mult = sel.max_entry_multiplicity(2, 1) as f64;
        assert!(r.max_block_diff <= mult.sqrt() * r.perturbation * (1.0 + 1e-12));
    }
}
