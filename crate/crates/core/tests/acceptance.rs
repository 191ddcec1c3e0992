//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p lssid --test acceptance` runs every criterion and reports.
//! Pass criterion numbers to run a subset, and `--strict` to exit with
//! status 1 when any criterion fails.

use std::time::{Duration, Instant};

use lssid::benchmark::{a_for_gamma, random_model, two_mode_model, two_mode_selection};
use lssid::bounds::{check_hankel_sensitivity, find_p, BoundInputs};
use lssid::experiment::{loglog_slope, mean_curve, run_experiment, summarize, ExperimentConfig, GridPoint, Summary};
use lssid::hokalman::{
    build_hankels, find_selection, realize, realized_markov, reference_realization, required_words, ColumnIndex,
    Selection,
};
use lssid::markov::{empirical_markov_batch, true_markov, true_markov_map};
use lssid::model::{SignalSpec, SwitchingDistribution, Word};
use lssid::simulate::{simulate, SimConfig};
use lssid::{linalg, LssModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn benchmark_words() -> Vec<Word> {
    required_words(&two_mode_selection(), 2).into_iter().collect()
}

fn experiment(gammas: &[f64], noise: &[f64], input: &[f64], grid: &[usize], trials: usize) -> Vec<Summary> {
    let cfg = ExperimentConfig {
        gamma_values: gammas.to_vec(),
        ku_noise_values: noise.to_vec(),
        ku_input_values: input.to_vec(),
        n_grid: grid.to_vec(),
        trials,
        record_timing: false,
        ..ExperimentConfig::default()
    };
    summarize(&run_experiment(&cfg).expect("experiment runs"))
}

fn roundtrip() -> Outcome {
    let model = two_mode_model(0.27);
    let rr = reference_realization(&model, &two_mode_selection()).unwrap();
    let mut worst = 0.0f64;
    for w in Word::all_up_to(2, 5) {
        let diff = (realized_markov(&rr, &w).unwrap() - true_markov(&model, &w).unwrap()).abs().max();
        worst = worst.max(diff);
    }
    outcome(worst <= 1e-9, format!("max |M_w - M̄_w| over 63 words = {worst:.2e} (tol 1e-9)"))
}

fn hankel_reproduction() -> Outcome {
    let a = 0.27;
    let model = two_mode_model(a);
    let sel = two_mode_selection();
    let map = true_markov_map(&model, required_words(&sel, 2).iter()).unwrap();
    let h = build_hankels(&map, &sel, 2, 1).unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, a]);
    let dev = (&h.h_ab - expected).abs().max();
    outcome(dev <= 1e-14, format!("H_ab = {:?}, deviation {dev:.1e} (tol 1e-14)", linalg::to_rows(&h.h_ab)))
}

fn consistency_rate() -> Outcome {
    let grid = [1_000, 10_000, 100_000];
    let sums = experiment(&[0.6], &[1.0], &[0.8], &grid, 100);
    let medians: Vec<f64> = sums.iter().map(|s| s.median).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let point = GridPoint { gamma: 0.6, ku_noise: 1.0, ku_input: 0.8 };
    let slope = loglog_slope(&mean_curve(&sums, &point));
    let failures: usize = sums.iter().map(|s| s.failures).sum();
    outcome(
        decreasing && (-0.7..=-0.3).contains(&slope),
        format!(
            "medians {:.4e} > {:.4e} > {:.4e}, mean slope {slope:.3} (need [-0.7, -0.3]), {failures} failed trials",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn bound_coverage() -> Outcome {
    let cfg = ExperimentConfig { trials: 1000, record_timing: false, ..ExperimentConfig::default() };
    let rows = run_experiment(&cfg).unwrap();
    let valid: Vec<_> = rows.iter().filter(|r| r.valid).collect();
    let over_valid = valid.iter().filter(|r| r.failed() || r.est_err > r.bound).count();
    let over_all = rows.iter().filter(|r| !r.failed() && r.est_err > r.bound).count();
    let min_bound = rows.iter().map(|r| r.bound).fold(f64::INFINITY, f64::min);
    let max_err = rows.iter().filter(|r| !r.failed()).map(|r| r.est_err).fold(0.0, f64::max);

    let model = two_mode_model(a_for_gamma(0.6));
    let dist = SwitchingDistribution::uniform(2);
    let sel = two_mode_selection();
    let cert = find_p(&model, &dist, 0.6).unwrap();
    let sigma_n = reference_realization(&model, &sel).unwrap().sigma_n;
    let signal = SignalSpec::uniform(1, 0.8, 1.0).unwrap();
    let inputs = BoundInputs::new(&model, &dist, &signal, cert, &sel, sigma_n).unwrap();
    let n_min = inputs.constants.min_valid_n(0.05);

    let frac = if valid.is_empty() { 0.0 } else { over_valid as f64 / valid.len() as f64 };
    let scope = if valid.is_empty() {
        format!("no grid N reaches the validity threshold N >= {n_min:.3e}, so the check is vacuous; ")
    } else {
        format!("{} valid rows, ", valid.len())
    };
    outcome(
        frac <= 0.05,
        format!(
            "{scope}violation fraction {frac:.3}; over all {} rows {over_all} exceed the bound \
             (smallest bound {min_bound:.3e}, largest EstErr {max_err:.3e})",
            rows.len()
        ),
    )
}

fn ordering(sums: &[Summary], points: &[GridPoint], ns: &[usize], increasing: bool) -> (bool, String) {
    let mut ok = true;
    let mut text = Vec::new();
    for &n in ns {
        let at: Vec<&Summary> = points
            .iter()
            .map(|p| sums.iter().find(|s| s.n == n && s.point == *p).expect("summary present"))
            .collect();
        let means: Vec<f64> = at.iter().map(|s| s.mean).collect();
        let holds = means.windows(2).all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] });
        ok &= holds;
        let list = |v: Vec<f64>| v.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(", ");
        text.push(format!(
            "N={n}: mean [{}] median [{}]",
            list(means.clone()),
            list(at.iter().map(|s| s.median).collect())
        ));
    }
    (ok, text.join(" "))
}

fn figure_orderings() -> Outcome {
    let grid = [1_000, 3_000, 10_000, 30_000, 100_000];
    let top = &grid[3..];
    let pt = |gamma, ku_noise, ku_input| GridPoint { gamma, ku_noise, ku_input };

    let gammas = [0.1, 0.4, 0.6];
    let s = experiment(&gammas, &[1.0], &[0.8], &grid, 100);
    let (a_ok, a_txt) = ordering(&s, &gammas.map(|g| pt(g, 1.0, 0.8)), top, true);

    let inputs = [0.5, 0.8];
    let s = experiment(&[0.6], &[1.0], &inputs, &grid, 100);
    let (b_ok, b_txt) = ordering(&s, &inputs.map(|i| pt(0.6, 1.0, i)), top, false);

    let noises = [1.0, 20.0, 30.0];
    let s = experiment(&[0.6], &noises, &[0.8], &grid, 100);
    let (c_ok, c_txt) = ordering(&s, &noises.map(|k| pt(0.6, k, 0.8)), top, true);

    outcome(
        a_ok && b_ok && c_ok,
        format!(
            "(a) gamma up {}: {a_txt}; (b) K_u,inp up {}: {b_txt}; (c) K_u up {}: {c_txt}",
            if a_ok { "ok" } else { "VIOLATED" },
            if b_ok { "ok" } else { "VIOLATED" },
            if c_ok { "ok" } else { "VIOLATED" }
        ),
    )
}

/// Random selection whose every Hankel entry is a distinct
/// `(word, component)` pair.
fn random_selection(rng: &mut ChaCha8Rng, n: usize, m: usize, n_q: usize) -> Option<Selection> {
    let words = Word::all_up_to(n_q, n - 1);
    let mut cols = Vec::new();
    for mu in &words {
        for q in 0..n_q {
            for l in 0..m {
                cols.push(ColumnIndex { mu: mu.clone(), q, l });
            }
        }
    }
    let pick = |rng: &mut ChaCha8Rng, len: usize| rand::seq::index::sample(rng, len, n).into_vec();
    if words.len() < n || cols.len() < n {
        return None;
    }
    let alpha = pick(rng, words.len()).into_iter().map(|i| words[i].clone()).collect();
    let beta = pick(rng, cols.len()).into_iter().map(|j| cols[j].clone()).collect();
    let sel = Selection::new(alpha, beta).ok()?;
    (sel.max_entry_multiplicity(n_q, m) == 1).then_some(sel)
}

fn perturbation_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut instances, mut draws) = (0, 0);
    let (mut diff_bad, mut norm_bad, mut inv_bad, mut not_small) = (0, 0, 0, 0);
    while instances < 1000 {
        draws += 1;
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let n_q = rng.random_range(1..=3);
        let Some(sel) = random_selection(&mut rng, n, m, n_q) else { continue };
        let model = random_model(&mut rng, n, m, n_q, 0.8);
        let words = required_words(&sel, n_q);
        let truth = true_markov_map(&model, words.iter()).unwrap();
        let h = build_hankels(&truth, &sel, n_q, m).unwrap();
        let sv = linalg::singular_values(&h.h_ab);
        if sv[n - 1] < 1e-3 * sv[0] {
            continue;
        }
        let threshold = sv[n - 1] / (2.0 * (words.len() - 1) as f64 * (n as f64).sqrt());
        let mut perturbed = truth.clone();
        for w in words.iter().filter(|w| !w.is_empty()) {
            let dir = DMatrix::<f64>::from_fn(1, m, |_, _| rng.random_range(-1.0..=1.0));
            let radius = threshold * rng.random_range(0.0..0.999);
            let delta = &dir * (radius / dir.norm().max(f64::MIN_POSITIVE));
            perturbed.entries.insert(w.clone(), truth.get(w).unwrap() + delta);
        }
        let r = check_hankel_sensitivity(&sel, &truth, &perturbed, n_q, m).unwrap();
        instances += 1;
        not_small += usize::from(!r.small);
        diff_bad += usize::from(!r.diff_ok);
        norm_bad += usize::from(!r.inv_norm_ok);
        inv_bad += usize::from(!r.inv_diff_ok);
    }
    outcome(
        diff_bad + norm_bad + inv_bad + not_small == 0,
        format!(
            "{instances} instances ({draws} draws, n <= 3, one entry per word): violations difference {diff_bad}, \
             inverse norm {norm_bad}, inverse difference {inv_bad}"
        ),
    )
}

fn stability() -> Outcome {
    let mut ok = true;
    let mut text = Vec::new();
    for gamma in [0.1, 0.4, 0.6] {
        let model = two_mode_model(a_for_gamma(gamma));
        match find_p(&model, &SwitchingDistribution::uniform(2), gamma) {
            Ok(c) => {
                let good = c.margin > 0.0 && c.gamma <= gamma && c.schur_radius < 1.0;
                ok &= good;
                text.push(format!(
                    "target {gamma}: certified {:.4}, margin {:.2e}, schur {:.4}",
                    c.gamma, c.margin, c.schur_radius
                ));
            }
            Err(e) => {
                ok = false;
                text.push(format!("target {gamma}: {e}"));
            }
        }
    }
    outcome(ok, text.join("; "))
}

/// Classical SVD-based Ho-Kalman on the block Hankel of `h_1 .. h_{2n+1}`.
fn classical_ho_kalman(h: &[f64], n: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let hk = DMatrix::from_fn(n + 1, n + 1, |i, j| h[i + j]);
    let svd = hk.svd(true, true);
    let mut order: Vec<usize> = (0..n + 1).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let obs = DMatrix::from_fn(n + 1, n, |i, k| u[(i, order[k])] * svd.singular_values[order[k]].sqrt());
    let reach = DMatrix::from_fn(n, n + 1, |k, j| vt[(order[k], j)] * svd.singular_values[order[k]].sqrt());
    let upper = obs.rows(0, n).into_owned();
    let lower = obs.rows(1, n).into_owned();
    let a = upper.svd(true, true).solve(&lower, 1e-14).unwrap();
    (a, reach.columns(0, 1).into_owned(), obs.rows(0, 1).into_owned())
}

fn lti_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut systems, mut worst, mut worst_classical) = (0, 0.0f64, 0.0f64);
    while systems < 50 {
        let n = rng.random_range(1..=4);
        let rho = rng.random_range(0.3..0.95);
        let model: LssModel = random_model(&mut rng, n, 1, 1, rho);
        let Ok(found) = find_selection(&model) else { continue };
        if found.sigma_n < 1e-6 {
            continue;
        }
        let sel = found.selection;
        let map = true_markov_map(&model, required_words(&sel, 1).iter()).unwrap();
        let hs = build_hankels(&map, &sel, 1, 1).unwrap();
        let rr = realize(&hs, map.get(&Word::empty()).unwrap()).unwrap();
        let lags: Vec<Word> = (0..=2 * n).map(|k| Word::from_indices(vec![0; k])).collect();
        let truth: Vec<f64> = lags.iter().map(|w| true_markov(&model, w).unwrap()[(0, 0)]).collect();
        for (w, t) in lags.iter().zip(&truth) {
            worst = worst.max((realized_markov(&rr, w).unwrap()[(0, 0)] - t).abs());
        }
        // classical realization from h_1..h_{2n+1}
        let mut h: Vec<f64> = truth[1..].to_vec();
        h.push(true_markov(&model, &Word::from_indices(vec![0; 2 * n + 1])).unwrap()[(0, 0)]);
        let (a, b, c) = classical_ho_kalman(&h, n);
        let mut ak = DMatrix::identity(n, n);
        for (k, w) in lags.iter().enumerate().skip(1) {
            let classical = (&c * &ak * &b)[(0, 0)];
            worst_classical = worst_classical.max((classical - realized_markov(&rr, w).unwrap()[(0, 0)]).abs());
            if k < lags.len() {
                ak = &a * ak;
            }
        }
        systems += 1;
    }
    outcome(
        worst <= 1e-8 && worst_classical <= 1e-8,
        format!(
            "50 systems: max impulse-response error {worst:.2e} vs truth, {worst_classical:.2e} vs SVD Ho-Kalman (tol 1e-8)"
        ),
    )
}

fn concentration() -> Outcome {
    let gamma = 0.6;
    let model = two_mode_model(a_for_gamma(gamma));
    let dist = SwitchingDistribution::uniform(2);
    let signal = SignalSpec::uniform(1, 0.8, 1.0).unwrap();
    let sel = two_mode_selection();
    let cert = find_p(&model, &dist, gamma).unwrap();
    let sigma_n = reference_realization(&model, &sel).unwrap().sigma_n;
    let inputs = BoundInputs::new(&model, &dist, &signal, cert, &sel, sigma_n).unwrap();
    let n = 10_000;
    let radius = inputs.constants.k_delta_n(0.05, n as u64);
    let words: Vec<Word> = benchmark_words().into_iter().filter(|w| !w.is_empty()).collect();
    let truth = true_markov_map(&model, words.iter()).unwrap();
    let (mut violations, mut largest) = (0, 0.0f64);
    for trial in 0..1000u64 {
        let sample = simulate(&SimConfig::new(model.clone(), dist.clone(), signal.clone(), n, trial)).unwrap();
        let est = empirical_markov_batch(&sample, words.iter(), signal.sigma_u(), &dist).unwrap();
        let dev = words
            .iter()
            .map(|w| (truth.get(w).unwrap() - est.get(w).unwrap()).norm())
            .fold(0.0, f64::max);
        largest = largest.max(dev);
        violations += usize::from(dev > radius);
    }
    let frac = violations as f64 / 1000.0;
    outcome(
        frac <= 0.05,
        format!("violation fraction {frac:.3} (largest deviation {largest:.3e}, K(0.05, 1e4) = {radius:.3e})"),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(u8, &str, Duration, Check); 9] = [
        (1, "realization round-trip", Duration::from_secs(1), roundtrip),
        (2, "Hankel reproduction", Duration::from_secs(1), hankel_reproduction),
        (3, "consistency rate", Duration::from_secs(300), consistency_rate),
        (4, "bound coverage", Duration::from_secs(900), bound_coverage),
        (5, "figure orderings", Duration::from_secs(1200), figure_orderings),
        (6, "Hankel perturbation inequalities", Duration::from_secs(60), perturbation_suite),
        (7, "stability certification", Duration::from_secs(1), stability),
        (8, "LTI reduction", Duration::from_secs(10), lti_reduction),
        (9, "estimator concentration", Duration::from_secs(600), concentration),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let filter: Vec<u8> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        let pass = result.pass && elapsed <= limit;
        failed += usize::from(!pass);
        println!(
            "{} criterion {id} ({name}): {} [{:.2} s, limit {} s]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {failed} failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
