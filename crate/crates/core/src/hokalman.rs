//! Reduced-basis Ho-Kalman realization.
//!
//! A selection picks `n` row words `η_i` and `n` column triples
//! `(μ_j, q_j, l_j)` of the infinite switched Hankel matrix. The four blocks
//! used by the realization are indexed by Markov parameters as
//!
//! ```text
//! H_ab [i][j]    = M_{q_j μ_j η_i}[l_j]      = C A_{η_i} A_{μ_j} B_{q_j} e_{l_j}
//! H_aqb[q][i][j] = M_{q_j μ_j q η_i}[l_j]    = C A_{η_i} A_q A_{μ_j} B_{q_j} e_{l_j}
//! H_aq [q][i][j] = M_{q η_i}[j]              = C A_{η_i} B_q e_j
//! H_b  [j]       = M_{q_j μ_j}[l_j]          = C A_{μ_j} B_{q_j} e_{l_j}
//! ```
//!
//! so that `H_ab = O R`, `H_aqb = O A_q R`, `H_aq = O B_q`, `H_b = C R` with
//! `O` stacking the rows `C A_{η_i}` and `R` the columns `A_{μ_j} B_{q_j} e_{l_j}`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::linalg;
use crate::markov::{empirical_markov_batch, true_markov, true_markov_map, MarkovMap};
use crate::model::{a_word, LssModel, ModelSpec, SwitchingDistribution, Word};
use crate::simulate::SampleSet;

/// `σ_n < SINGULAR_RTOL σ_1` is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-10;

/// One selected column `(μ, q, l)`; `q` and `l` are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnIndex {
    pub mu: Word,
    pub q: usize,
    pub l: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    alpha: Vec<Word>,
    beta: Vec<ColumnIndex>,
}

impl Selection {
    pub fn new(alpha: Vec<Word>, beta: Vec<ColumnIndex>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 || beta.len() != n {
            return Err(LssError::Selection(format!("{} rows and {} columns; need n of each", n, beta.len())));
        }
        if let Some(w) = alpha.iter().find(|w| w.len() > n - 1) {
            return Err(LssError::Selection(format!("row word {w:?} longer than n-1 = {}", n - 1)));
        }
        if let Some(c) = beta.iter().find(|c| c.mu.len() > n - 1) {
            return Err(LssError::Selection(format!("column word {:?} longer than n-1 = {}", c.mu, n - 1)));
        }
        Ok(Self { alpha, beta })
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }
    pub fn alpha(&self) -> &[Word] {
        &self.alpha
    }
    pub fn beta(&self) -> &[ColumnIndex] {
        &self.beta
    }

    /// Checks every index against the alphabet size and input dimension.
    pub fn check(&self, n_q: usize, m: usize) -> Result<()> {
        for w in &self.alpha {
            w.check(n_q)?;
        }
        for c in &self.beta {
            c.mu.check(n_q)?;
            if c.q >= n_q {
                return Err(LssError::LetterOutOfRange { letter: c.q + 1, n_q });
            }
            if c.l >= m {
                return Err(LssError::Selection(format!("input channel {} out of range 1..={m}", c.l + 1)));
            }
        }
        Ok(())
    }

    fn column_prefix(&self, j: usize) -> Word {
        let c = &self.beta[j];
        Word::single(c.q).concat(&c.mu)
    }

    /// Word and component behind `H_ab[i][j]`.
    pub fn ab_entry(&self, i: usize, j: usize) -> (Word, usize) {
        (self.column_prefix(j).concat(&self.alpha[i]), self.beta[j].l)
    }

    /// Word and component behind `H_aqb[q][i][j]`.
    pub fn aqb_entry(&self, q: usize, i: usize, j: usize) -> (Word, usize) {
        let w = self.column_prefix(j).concat(&Word::single(q)).concat(&self.alpha[i]);
        (w, self.beta[j].l)
    }

    /// Word behind row `i` of `H_aq[q]`; column `j` is component `j`.
    pub fn aq_word(&self, q: usize, i: usize) -> Word {
        Word::single(q).concat(&self.alpha[i])
    }

    /// Word and component behind `H_b[j]`.
    pub fn b_entry(&self, j: usize) -> (Word, usize) {
        (self.column_prefix(j), self.beta[j].l)
    }

    /// Largest number of times one `(word, component)` pair fills entries
    /// of a single Hankel block.
    pub fn max_entry_multiplicity(&self, n_q: usize, m: usize) -> usize {
        let n = self.n();
        let mut worst = 1;
        let mut tally = |entries: Vec<(Word, usize)>| {
            let mut counts: HashMap<(Word, usize), usize> = HashMap::new();
            for e in entries {
                *counts.entry(e).or_default() += 1;
            }
            worst = worst.max(counts.values().copied().max().unwrap_or(1));
        };
        tally((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| self.ab_entry(i, j)).collect());
        for q in 0..n_q {
            tally((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| self.aqb_entry(q, i, j)).collect());
            tally((0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| (self.aq_word(q, i), j)).collect());
        }
        tally((0..n).map(|j| self.b_entry(j)).collect());
        worst
    }
}

/// Every word indexing an entry of the four blocks, plus `ε` for `D̄`.
pub fn required_words(sel: &Selection, n_q: usize) -> BTreeSet<Word> {
    let n = sel.n();
    let mut out = BTreeSet::new();
    out.insert(Word::empty());
    for i in 0..n {
        for j in 0..n {
            out.insert(sel.ab_entry(i, j).0);
            for q in 0..n_q {
                out.insert(sel.aqb_entry(q, i, j).0);
            }
        }
        for q in 0..n_q {
            out.insert(sel.aq_word(q, i));
        }
    }
    for j in 0..n {
        out.insert(sel.b_entry(j).0);
    }
    out
}

/// Upper bound on the number of non-empty required words.
pub fn word_count_bound(n: usize, m: usize, n_q: usize) -> usize {
    n * n * (n_q + 1) + n_q * n * m + n
}

#[derive(Clone, Debug, PartialEq)]
pub struct HankelSet {
    pub h_ab: DMatrix<f64>,
    pub h_aqb: Vec<DMatrix<f64>>,
    pub h_aq: Vec<DMatrix<f64>>,
    pub h_b: DMatrix<f64>,
}

impl HankelSet {
    /// Every block, in the order `H_ab`, `H_aqb[..]`, `H_aq[..]`, `H_b`.
    pub fn blocks(&self) -> Vec<&DMatrix<f64>> {
        let mut out = vec![&self.h_ab];
        out.extend(self.h_aqb.iter());
        out.extend(self.h_aq.iter());
        out.push(&self.h_b);
        out
    }
}

fn component(mmap: &MarkovMap, w: &Word, l: usize) -> Result<f64> {
    let row = mmap.get(w)?;
    if l >= row.ncols() {
        return Err(LssError::Dimension(format!("Markov parameter {w} has {} components", row.ncols())));
    }
    Ok(row[(0, l)])
}

pub fn build_hankels(mmap: &MarkovMap, sel: &Selection, n_q: usize, m: usize) -> Result<HankelSet> {
    sel.check(n_q, m)?;
    let n = sel.n();
    let mut h_ab = DMatrix::zeros(n, n);
    let mut h_aqb = vec![DMatrix::zeros(n, n); n_q];
    let mut h_aq = vec![DMatrix::zeros(n, m); n_q];
    let mut h_b = DMatrix::zeros(1, n);
    for i in 0..n {
        for j in 0..n {
            let (w, l) = sel.ab_entry(i, j);
            h_ab[(i, j)] = component(mmap, &w, l)?;
            for (q, block) in h_aqb.iter_mut().enumerate() {
                let (w, l) = sel.aqb_entry(q, i, j);
                block[(i, j)] = component(mmap, &w, l)?;
            }
        }
        for (q, block) in h_aq.iter_mut().enumerate() {
            let w = sel.aq_word(q, i);
            for j in 0..m {
                block[(i, j)] = component(mmap, &w, j)?;
            }
        }
    }
    for j in 0..n {
        let (w, l) = sel.b_entry(j);
        h_b[(0, j)] = component(mmap, &w, l)?;
    }
    Ok(HankelSet { h_ab, h_aqb, h_aq, h_b })
}

/// Realized matrices `Ā_q = H_ab^{-1} H_aqb`, `B̄_q = H_ab^{-1} H_aq`,
/// `C̄ = H_b`, `D̄ = M_ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealizationResult {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Smallest singular value of the `H_ab` that was inverted.
    pub sigma_n: f64,
}

impl RealizationResult {
    pub fn to_model(&self) -> Result<LssModel> {
        LssModel::new(self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone())
    }
}

pub fn realize(hs: &HankelSet, m_eps: &DMatrix<f64>) -> Result<RealizationResult> {
    let sv = linalg::singular_values(&hs.h_ab);
    let (sigma_1, sigma_n) = (sv[0], *sv.last().unwrap());
    if !(sigma_n > SINGULAR_RTOL * sigma_1) || !sigma_n.is_finite() {
        return Err(LssError::SingularHankel { sigma_n, sigma_1 });
    }
    let lu = hs.h_ab.clone().full_piv_lu();
    let solve = |rhs: &DMatrix<f64>| lu.solve(rhs).ok_or(LssError::SingularHankel { sigma_n, sigma_1 });
    let a = hs.h_aqb.iter().map(solve).collect::<Result<Vec<_>>>()?;
    let b = hs.h_aq.iter().map(solve).collect::<Result<Vec<_>>>()?;
    Ok(RealizationResult { a, b, c: hs.h_b.clone(), d: m_eps.clone(), sigma_n })
}

/// Markov parameters of the realized model over `words`.
pub fn markov_roundtrip<'a>(rr: &RealizationResult, words: impl IntoIterator<Item = &'a Word>) -> Result<MarkovMap> {
    true_markov_map(&rr.to_model()?, words)
}

/// Largest Frobenius deviation over `A_q`, `B_q` and `C`. Both realizations
/// must come from the same selection.
pub fn est_err(hat: &RealizationResult, reference: &RealizationResult) -> Result<f64> {
    if hat.a.len() != reference.a.len() || hat.b.len() != reference.b.len() {
        return Err(LssError::Dimension("realizations have different mode counts".into()));
    }
    let pairs = hat.a.iter().zip(&reference.a).chain(hat.b.iter().zip(&reference.b)).chain([(&hat.c, &reference.c)]);
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        if x.shape() != y.shape() {
            return Err(LssError::Dimension(format!("shapes {:?} and {:?}", x.shape(), y.shape())));
        }
        worst = worst.max((x - y).norm());
    }
    Ok(worst)
}

/// Rows `C A_{η_i}` stacked.
pub fn observability_rows(model: &LssModel, sel: &Selection) -> Result<DMatrix<f64>> {
    let n = sel.n();
    let mut o = DMatrix::zeros(n, model.n());
    for (i, eta) in sel.alpha().iter().enumerate() {
        o.row_mut(i).copy_from(&(model.c() * a_word(model, eta)?));
    }
    Ok(o)
}

/// Columns `A_{μ_j} B_{q_j} e_{l_j}` side by side.
pub fn reachability_cols(model: &LssModel, sel: &Selection) -> Result<DMatrix<f64>> {
    let n = sel.n();
    let mut r = DMatrix::zeros(model.n(), n);
    for (j, c) in sel.beta().iter().enumerate() {
        let col = a_word(model, &c.mu)? * model.b(c.q).column(c.l);
        r.column_mut(j).copy_from(&col);
    }
    Ok(r)
}

/// Ho-Kalman on the exact Markov parameters of `model`.
pub fn reference_realization(model: &LssModel, sel: &Selection) -> Result<RealizationResult> {
    let mmap = true_markov_map(model, required_words(sel, model.n_q()).iter())?;
    let hs = build_hankels(&mmap, sel, model.n_q(), model.m())?;
    realize(&hs, mmap.get(&Word::empty())?)
}

/// Everything produced by one empirical identification run.
#[derive(Clone, Debug)]
pub struct Identification {
    pub markov: MarkovMap,
    pub hankels: HankelSet,
    pub realization: RealizationResult,
}

/// Empirical Markov parameters over the selection's word set, then Ho-Kalman.
pub fn identify(
    sample: &SampleSet,
    sel: &Selection,
    n_q: usize,
    sigma_u: &DMatrix<f64>,
    dist: &SwitchingDistribution,
) -> Result<Identification> {
    let n = sel.n();
    let min = 2 * (2 * n + 1);
    if sample.n() <= min {
        return Err(LssError::InsufficientSamples { n: sample.n(), min });
    }
    let words = required_words(sel, n_q);
    let markov = empirical_markov_batch(sample, words.iter(), sigma_u, dist)?;
    let hankels = build_hankels(&markov, sel, n_q, sample.m())?;
    let realization = realize(&hankels, markov.get(&Word::empty())?)?;
    Ok(Identification { markov, hankels, realization })
}

// ---------------------------------------------------------------------------
// Selection search

/// A selection together with the smallest singular value of its `H_ab`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionSearch {
    pub selection: Selection,
    pub sigma_n: f64,
}

struct Candidates {
    rows: Vec<Word>,
    cols: Vec<ColumnIndex>,
    /// `rows x cols` Hankel built from exact Markov parameters.
    hankel: DMatrix<f64>,
}

fn candidates(model: &LssModel) -> Result<Candidates> {
    let (n, n_q, m) = (model.n(), model.n_q(), model.m());
    let words = Word::all_up_to(n_q, n - 1);
    let mut cols = Vec::with_capacity(words.len() * n_q * m);
    for mu in &words {
        for q in 0..n_q {
            for l in 0..m {
                cols.push(ColumnIndex { mu: mu.clone(), q, l });
            }
        }
    }
    let mut obs = DMatrix::zeros(words.len(), n);
    for (i, eta) in words.iter().enumerate() {
        obs.row_mut(i).copy_from(&(model.c() * a_word(model, eta)?));
    }
    let mut reach = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        reach.column_mut(j).copy_from(&(a_word(model, &c.mu)? * model.b(c.q).column(c.l)));
    }
    let hankel = obs * reach;
    Ok(Candidates { rows: words, cols, hankel })
}

fn submatrix(h: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])])
}

fn finish_search(cands: &Candidates, rows: &[usize], cols: &[usize]) -> Result<SelectionSearch> {
    let selection = Selection::new(
        rows.iter().map(|&i| cands.rows[i].clone()).collect(),
        cols.iter().map(|&j| cands.cols[j].clone()).collect(),
    )?;
    let sigma_n = linalg::sigma_min(&submatrix(&cands.hankel, rows, cols));
    Ok(SelectionSearch { selection, sigma_n })
}

/// Greedy search: grow the selection one (row, column) pair at a time,
/// taking the pair that maximizes the smallest singular value of the grown
/// square block. Candidates are scanned in word order, so ties go to the
/// shortest, then lexicographically first, words.
pub fn find_selection(model: &LssModel) -> Result<SelectionSearch> {
    let n = model.n();
    let cands = candidates(model)?;
    let scale = linalg::spectral_norm(&cands.hankel);
    let tol = SINGULAR_RTOL * scale.max(f64::MIN_POSITIVE);
    let mut rows: Vec<usize> = Vec::with_capacity(n);
    let mut cols: Vec<usize> = Vec::with_capacity(n);
    for step in 0..n {
        let mut best: Option<(f64, usize, usize)> = None;
        let free_rows: Vec<usize> = (0..cands.rows.len()).filter(|i| !rows.contains(i)).collect();
        let free_cols: Vec<usize> = (0..cands.cols.len()).filter(|j| !cols.contains(j)).collect();
        for &i in &free_rows {
            rows.push(i);
            for &j in &free_cols {
                cols.push(j);
                let s = linalg::sigma_min(&submatrix(&cands.hankel, &rows, &cols));
                cols.pop();
                let better = match best {
                    None => true,
                    Some((b, _, _)) => s > b * (1.0 + 1e-12) + 1e-300,
                };
                if better {
                    best = Some((s, i, j));
                }
            }
            rows.pop();
        }
        match best {
            Some((s, i, j)) if s > tol => {
                rows.push(i);
                cols.push(j);
            }
            _ => return Err(LssError::NoSelection { n, rank: step }),
        }
    }
    finish_search(&cands, &rows, &cols)
}

fn combinations(len: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, len: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..len {
            if len - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, len, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, len, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Largest attainable exhaustive state dimension.
pub const EXHAUSTIVE_MAX_N: usize = 3;

/// Exhaustive search over all row and column subsets, maximizing `σ_n`.
/// Only offered for `n <= 3`.
pub fn find_selection_exhaustive(model: &LssModel) -> Result<SelectionSearch> {
    let n = model.n();
    if n > EXHAUSTIVE_MAX_N {
        return Err(LssError::Parameter(format!("exhaustive selection search supports n <= {EXHAUSTIVE_MAX_N}")));
    }
    let cands = candidates(model)?;
    let tol = SINGULAR_RTOL * linalg::spectral_norm(&cands.hankel).max(f64::MIN_POSITIVE);
    let row_sets = combinations(cands.rows.len(), n);
    let col_sets = combinations(cands.cols.len(), n);
    let mut best: Option<(f64, usize, usize)> = None;
    for (ri, rs) in row_sets.iter().enumerate() {
        for (ci, cs) in col_sets.iter().enumerate() {
            let s = linalg::sigma_min(&submatrix(&cands.hankel, rs, cs));
            if best.is_none_or(|(b, _, _)| s > b * (1.0 + 1e-12) + 1e-300) {
                best = Some((s, ri, ci));
            }
        }
    }
    match best {
        Some((s, ri, ci)) if s > tol => finish_search(&cands, &row_sets[ri], &col_sets[ci]),
        _ => {
            let rank = linalg::singular_values(&cands.hankel).iter().filter(|&&s| s > tol).count();
            Err(LssError::NoSelection { n, rank })
        }
    }
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Serialize, Deserialize)]
pub(crate) struct SelectionFile {
    alpha: Vec<Word>,
    /// `[mu, q, l]` with 1-based `q` and `l`.
    beta: Vec<(Word, usize, usize)>,
}

impl From<&Selection> for SelectionFile {
    fn from(s: &Selection) -> Self {
        SelectionFile {
            alpha: s.alpha.clone(),
            beta: s.beta.iter().map(|c| (c.mu.clone(), c.q + 1, c.l + 1)).collect(),
        }
    }
}

impl TryFrom<SelectionFile> for Selection {
    type Error = LssError;

    fn try_from(f: SelectionFile) -> Result<Self> {
        let beta = f
            .beta
            .into_iter()
            .map(|(mu, q, l)| {
                if q == 0 || l == 0 {
                    return Err(LssError::Selection("mode and channel labels are 1-based".into()));
                }
                Ok(ColumnIndex { mu, q: q - 1, l: l - 1 })
            })
            .collect::<Result<Vec<_>>>()?;
        Selection::new(f.alpha, beta)
    }
}

impl Selection {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SelectionFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<SelectionFile>(s)?.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct RealizationFile {
    #[serde(flatten)]
    model: crate::model::ModelFile,
    selection: SelectionFile,
    sigma_n: f64,
}

impl RealizationResult {
    /// Model-file schema plus `selection` and `sigma_n`.
    pub fn to_json(&self, sel: &Selection) -> Result<String> {
        let file = RealizationFile {
            model: ModelSpec::new(self.to_model()?).to_file(),
            selection: sel.into(),
            sigma_n: self.sigma_n,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<(Self, Selection)> {
        let f: RealizationFile = serde_json::from_str(s)?;
        let model = ModelSpec::from_file(f.model)?.model;
        let rr = RealizationResult {
            a: model.a_all().to_vec(),
            b: model.b_all().to_vec(),
            c: model.c().clone(),
            d: model.d().clone(),
            sigma_n: f.sigma_n,
        };
        Ok((rr, f.selection.try_into()?))
    }
}

/// `M_w` for the realization: handy when only one word is needed.
pub fn realized_markov(rr: &RealizationResult, w: &Word) -> Result<DMatrix<f64>> {
    true_markov(&rr.to_model()?, w)
}
