//! Markov parameters: exact values from the model and single-trajectory
//! correlation estimates.
//!
//! For `w = w_1 ... w_k` the estimator correlates `y(t)` with `u(t-k)` on the
//! event `q(t-k) = w_1, ..., q(t-1) = w_k`, which targets
//! `M_w = C A_{w_k} ... A_{w_2} B_{w_1}` (first letter is the input mode).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::linalg;
use crate::model::{a_word, p_word, LssModel, SwitchingDistribution, Word};
use crate::simulate::SampleSet;

/// `M_ε = D`, `M_{i v} = C A_v B_i`; always `1 x m`.
pub fn true_markov(model: &LssModel, w: &Word) -> Result<DMatrix<f64>> {
    w.check(model.n_q())?;
    match w.indices().split_first() {
        None => Ok(model.d().clone()),
        Some((&i, rest)) => {
            let av = a_word(model, &Word::from_indices(rest.to_vec()))?;
            Ok(model.c() * av * model.b(i))
        }
    }
}

/// `χ_w(t)`: whether the modes at `t-k+1 ..= t` spell `w`. `χ_ε = 1`.
pub fn indicator_chi(q: &[usize], w: &Word, t: usize) -> Result<bool> {
    let k = w.len();
    if k == 0 {
        return Ok(true);
    }
    if t + 1 < k || t >= q.len() {
        return Err(LssError::IndexOutOfRange { t, len: k, samples: q.len() });
    }
    Ok(&q[t + 1 - k..=t] == w.indices())
}

/// `z_w(t) = u(t-k) χ_w(t-1)`, and `z_ε(t) = u(t)`.
pub fn z_lagged(sample: &SampleSet, w: &Word, t: usize) -> Result<Vec<f64>> {
    let k = w.len();
    if t < k || t > sample.n() {
        return Err(LssError::IndexOutOfRange { t, len: k, samples: sample.n() + 1 });
    }
    if k == 0 {
        return Ok(sample.u(t).to_vec());
    }
    if indicator_chi(sample.modes(), w, t - 1)? {
        Ok(sample.u(t - k).to_vec())
    } else {
        Ok(vec![0.0; sample.m()])
    }
}

/// Where a Markov map came from.
#[derive(Clone, Debug, PartialEq)]
pub enum MarkovSource {
    True,
    Empirical { n: usize, seed: u64, sigma_u: DMatrix<f64>, p: Vec<f64> },
}

/// Word -> `1 x m` Markov parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovMap {
    pub entries: BTreeMap<Word, DMatrix<f64>>,
    pub source: MarkovSource,
}

impl MarkovMap {
    pub fn new(source: MarkovSource) -> Self {
        Self { entries: BTreeMap::new(), source }
    }

    pub fn get(&self, w: &Word) -> Result<&DMatrix<f64>> {
        self.entries.get(w).ok_or_else(|| LssError::MissingWord(w.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &Word> {
        self.entries.keys()
    }

    /// Largest absolute entry-wise difference over the shared words; words
    /// missing from either side count as an error.
    pub fn max_abs_diff(&self, other: &MarkovMap) -> Result<f64> {
        let mut worst = 0.0f64;
        for (w, v) in &self.entries {
            let o = other.get(w)?;
            if o.shape() != v.shape() {
                return Err(LssError::Dimension(format!("word {w}: shapes differ")));
            }
            worst = worst.max((v - o).amax());
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MarkovFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<MarkovFile>(s)?.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Exact Markov parameters for every word in `words`.
pub fn true_markov_map<'a>(model: &LssModel, words: impl IntoIterator<Item = &'a Word>) -> Result<MarkovMap> {
    let mut map = MarkovMap::new(MarkovSource::True);
    for w in words {
        map.entries.insert(w.clone(), true_markov(model, w)?);
    }
    Ok(map)
}

/// Sum of `y(t) u(t-k)` over `t = k+1 ..= N` on the event that the modes
/// at `t-k ..= t-1` spell `w`.
fn cross_sum(sample: &SampleSet, w: &Word) -> Vec<f64> {
    let k = w.len();
    let (y, q) = (sample.y(), sample.modes());
    let mut acc = vec![0.0; sample.m()];
    for t in k + 1..=sample.n() {
        if &q[t - k..t] == w.indices() {
            let yt = y[t];
            for (a, &ul) in acc.iter_mut().zip(sample.u(t - k)) {
                *a += yt * ul;
            }
        }
    }
    acc
}

fn finish(acc: &[f64], sigma_inv: &DMatrix<f64>, n: usize, k: usize, p_w: f64) -> DMatrix<f64> {
    let row = DMatrix::from_row_slice(1, acc.len(), acc);
    let scale = 1.0 / ((n - k) as f64 * p_w);
    (row * sigma_inv) * scale
}

fn check_estimable(sample: &SampleSet, w: &Word, dist: &SwitchingDistribution) -> Result<()> {
    w.check(dist.n_q())?;
    if sample.n() <= w.len() + 1 {
        return Err(LssError::TooShort { n: sample.n(), len: w.len() });
    }
    Ok(())
}

fn sigma_inverse(sigma_u: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    if sigma_u.shape() != (m, m) {
        return Err(LssError::Dimension(format!("Sigma_u must be {m}x{m}")));
    }
    linalg::spd_inverse(sigma_u).map_err(|_| LssError::SingularCovariance)
}

/// `M̂_w = 1/(N-|w|) Σ_{t=|w|+1}^{N} y(t) z_w(t)^T Σ_u^{-1} / p_w`.
pub fn empirical_markov(
    sample: &SampleSet,
    w: &Word,
    sigma_u: &DMatrix<f64>,
    dist: &SwitchingDistribution,
) -> Result<DMatrix<f64>> {
    check_estimable(sample, w, dist)?;
    let sigma_inv = sigma_inverse(sigma_u, sample.m())?;
    let acc = cross_sum(sample, w);
    Ok(finish(&acc, &sigma_inv, sample.n(), w.len(), p_word(dist, w)?))
}

/// All words in one pass over the trajectory. Values are bit-identical to
/// [`empirical_markov`] because each word accumulates in the same order.
pub fn empirical_markov_batch<'a>(
    sample: &SampleSet,
    words: impl IntoIterator<Item = &'a Word>,
    sigma_u: &DMatrix<f64>,
    dist: &SwitchingDistribution,
) -> Result<MarkovMap> {
    let words: BTreeSet<&Word> = words.into_iter().collect();
    let source = MarkovSource::Empirical {
        n: sample.n(),
        seed: sample.seed,
        sigma_u: sigma_u.clone(),
        p: dist.probs().to_vec(),
    };
    let mut map = MarkovMap::new(source);
    if words.is_empty() {
        return Ok(map);
    }
    for w in &words {
        check_estimable(sample, w, dist)?;
    }
    let sigma_inv = sigma_inverse(sigma_u, sample.m())?;
    let words: Vec<&Word> = words.into_iter().collect();
    let m = sample.m();
    let mut acc = vec![0.0; words.len() * m];
    let (y, q) = (sample.y(), sample.modes());
    for t in 1..=sample.n() {
        let yt = y[t];
        for (idx, w) in words.iter().enumerate() {
            let k = w.len();
            // shortlex order: every later word is at least as long
            if k >= t {
                break;
            }
            if &q[t - k..t] == w.indices() {
                for (a, &ul) in acc[idx * m..(idx + 1) * m].iter_mut().zip(sample.u(t - k)) {
                    *a += yt * ul;
                }
            }
        }
    }
    for (idx, w) in words.iter().enumerate() {
        let value = finish(&acc[idx * m..(idx + 1) * m], &sigma_inv, sample.n(), w.len(), p_word(dist, w)?);
        map.entries.insert((*w).clone(), value);
    }
    Ok(map)
}

/// Sample second moment of the inputs. Not used by the certified path,
/// which takes `Σ_u` as known.
pub fn empirical_input_covariance(sample: &SampleSet) -> DMatrix<f64> {
    let m = sample.m();
    let mut s = DMatrix::zeros(m, m);
    for t in 0..=sample.n() {
        let u = sample.u(t);
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] += u[i] * u[j];
            }
        }
    }
    s / (sample.n() + 1) as f64
}

// ---------------------------------------------------------------------------
// File format

#[derive(Serialize, Deserialize)]
struct MarkovMeta {
    #[serde(rename = "N")]
    n: usize,
    seed: u64,
    #[serde(rename = "Sigma_u")]
    sigma_u: Vec<Vec<f64>>,
    p: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MarkovFile {
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<MarkovMeta>,
    markov: BTreeMap<String, Vec<f64>>,
}

impl From<&MarkovMap> for MarkovFile {
    fn from(map: &MarkovMap) -> Self {
        let (source, meta) = match &map.source {
            MarkovSource::True => ("true".to_string(), None),
            MarkovSource::Empirical { n, seed, sigma_u, p } => (
                "empirical".to_string(),
                Some(MarkovMeta { n: *n, seed: *seed, sigma_u: linalg::to_rows(sigma_u), p: p.clone() }),
            ),
        };
        let markov = map.entries.iter().map(|(w, v)| (w.to_string(), v.iter().copied().collect())).collect();
        MarkovFile { source, meta, markov }
    }
}

impl TryFrom<MarkovFile> for MarkovMap {
    type Error = LssError;

    fn try_from(f: MarkovFile) -> Result<Self> {
        let source = match (f.source.as_str(), f.meta) {
            ("true", _) => MarkovSource::True,
            ("empirical", Some(meta)) => {
                let m = meta.sigma_u.len();
                MarkovSource::Empirical {
                    n: meta.n,
                    seed: meta.seed,
                    sigma_u: linalg::from_rows(&meta.sigma_u, m, m, "Sigma_u")?,
                    p: meta.p,
                }
            }
            (other, _) => return Err(LssError::Parameter(format!("unknown Markov map source {other:?}"))),
        };
        let mut map = MarkovMap::new(source);
        for (k, v) in f.markov {
            let w: Word = k.parse()?;
            map.entries.insert(w, DMatrix::from_row_slice(1, v.len(), &v));
        }
        Ok(map)
    }
}
