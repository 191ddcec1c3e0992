//! Linear switched system model, mode words, switching law and signal bounds.
//!
//! Modes are 1-based at every external surface (word strings, files) and
//! 0-based in memory.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LssError, Result};
use crate::linalg;

/// A finite word over the mode alphabet. Stored 0-based.
///
/// Ordered by length first, then lexicographically, so the shortest word
/// always sorts first.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Builds a word from 1-based mode labels.
    pub fn from_modes(modes: &[usize]) -> Result<Self> {
        modes
            .iter()
            .map(|&q| q.checked_sub(1).ok_or(LssError::LetterOutOfRange { letter: 0, n_q: 0 }))
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }

    /// Builds a word from 0-based mode indices.
    pub fn from_indices(indices: Vec<usize>) -> Self {
        Word(indices)
    }

    pub fn single(index: usize) -> Self {
        Word(vec![index])
    }

    /// 0-based letters.
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = Vec::with_capacity(self.len() + other.len());
        letters.extend_from_slice(&self.0);
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    pub fn check(&self, n_q: usize) -> Result<()> {
        match self.0.iter().find(|&&q| q >= n_q) {
            Some(&q) => Err(LssError::LetterOutOfRange { letter: q + 1, n_q }),
            None => Ok(()),
        }
    }

    /// All words of length `0..=max_len` over `n_q` letters, in word order.
    pub fn all_up_to(n_q: usize, max_len: usize) -> Vec<Word> {
        let mut out = vec![Word::empty()];
        let mut layer = vec![Word::empty()];
        for _ in 0..max_len {
            let mut next = Vec::with_capacity(layer.len() * n_q);
            for w in &layer {
                for q in 0..n_q {
                    let mut letters = w.0.clone();
                    letters.push(q);
                    next.push(Word(letters));
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }
}

/// Concatenation `v w`.
pub fn word_concat(v: &Word, w: &Word) -> Word {
    v.concat(w)
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dot-separated 1-based labels; the empty word prints as the empty string.
impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, q) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{}", q + 1)?;
        }
        Ok(())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str("ε")
        } else {
            write!(f, "({self})")
        }
    }
}

impl FromStr for Word {
    type Err = LssError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "ε" || s == "eps" {
            return Ok(Word::empty());
        }
        let modes = s
            .split('.')
            .map(|tok| tok.trim().parse::<usize>().map_err(|_| LssError::WordSyntax(s.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Word::from_modes(&modes).map_err(|_| LssError::WordSyntax(s.to_string()))
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `x(t+1) = A_q x + B_q u + w`, `y = C x + D u + v` with scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct LssModel {
    n: usize,
    m: usize,
    n_q: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl LssModel {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n_q = a.len();
        if n_q == 0 {
            return Err(LssError::Dimension("at least one mode is required".into()));
        }
        if b.len() != n_q {
            return Err(LssError::Dimension(format!("{} A matrices but {} B matrices", n_q, b.len())));
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        if n == 0 || m == 0 {
            return Err(LssError::Dimension("n and m must be positive".into()));
        }
        for (q, (aq, bq)) in a.iter().zip(&b).enumerate() {
            if aq.shape() != (n, n) {
                return Err(LssError::Dimension(format!("A_{} is {:?}, expected {n}x{n}", q + 1, aq.shape())));
            }
            if bq.shape() != (n, m) {
                return Err(LssError::Dimension(format!("B_{} is {:?}, expected {n}x{m}", q + 1, bq.shape())));
            }
        }
        if c.shape() != (1, n) {
            return Err(LssError::Dimension(format!("C is {:?}, expected 1x{n}", c.shape())));
        }
        if d.shape() != (1, m) {
            return Err(LssError::Dimension(format!("D is {:?}, expected 1x{m}", d.shape())));
        }
        let finite = a.iter().chain(&b).chain([&c, &d]).all(|mat| mat.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(LssError::Dimension("matrix entries must be finite".into()));
        }
        Ok(Self { n, m, n_q, a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n_q(&self) -> usize {
        self.n_q
    }
    /// `A_q` for 0-based `q`.
    pub fn a(&self, q: usize) -> &DMatrix<f64> {
        &self.a[q]
    }
    pub fn b(&self, q: usize) -> &DMatrix<f64> {
        &self.b[q]
    }
    pub fn a_all(&self) -> &[DMatrix<f64>] {
        &self.a
    }
    pub fn b_all(&self) -> &[DMatrix<f64>] {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Same model with `C` replaced.
    pub fn with_c(&self, c: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), c, self.d.clone())
    }
}

/// `A_w = A_{w_k} ... A_{w_1}`, identity for the empty word.
pub fn a_word(model: &LssModel, w: &Word) -> Result<DMatrix<f64>> {
    w.check(model.n_q())?;
    let mut acc = DMatrix::identity(model.n(), model.n());
    for &q in w.indices() {
        acc = model.a(q) * acc;
    }
    Ok(acc)
}

/// I.i.d. switching law `P(q(t) = q) = p_q`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingDistribution {
    p: Vec<f64>,
}

impl SwitchingDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(LssError::Distribution("no modes".into()));
        }
        if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(LssError::Distribution("every probability must be positive".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LssError::Distribution(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn uniform(n_q: usize) -> Self {
        Self { p: vec![1.0 / n_q as f64; n_q] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn n_q(&self) -> usize {
        self.p.len()
    }

    pub fn min_prob(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `p_w = p_{w_1} ... p_{w_k}`, with `p_ε = 1`.
pub fn p_word(dist: &SwitchingDistribution, w: &Word) -> Result<f64> {
    w.check(dist.n_q())?;
    Ok(w.indices().iter().map(|&q| dist.p[q]).product())
}

/// Amplitude bounds for the input and the noise channels, and the input
/// covariance used by the estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSpec {
    ku_input: f64,
    ku_noise: f64,
    sigma_u: DMatrix<f64>,
}

impl SignalSpec {
    /// `Sigma_u` must be symmetric positive semidefinite. Zero covariance
    /// is accepted so that silent runs can be simulated; the estimator
    /// rejects it.
    pub fn new(ku_input: f64, ku_noise: f64, sigma_u: DMatrix<f64>) -> Result<Self> {
        if !(ku_input >= 0.0 && ku_input.is_finite()) || !(ku_noise >= 0.0 && ku_noise.is_finite()) {
            return Err(LssError::Signal("amplitude bounds must be finite and nonnegative".into()));
        }
        if !linalg::is_symmetric(&sigma_u, 1e-12) {
            return Err(LssError::Signal("Sigma_u must be square and symmetric".into()));
        }
        let scale = sigma_u.amax().max(1.0);
        if linalg::symmetric_eigenvalues(&sigma_u).first().copied().unwrap_or(0.0) < -1e-12 * scale {
            return Err(LssError::Signal("Sigma_u must be positive semidefinite".into()));
        }
        Ok(Self { ku_input, ku_noise, sigma_u })
    }

    /// Uniform inputs on `[-ku_input, ku_input]^m`, so `Sigma_u = ku_input^2 / 3 I`.
    pub fn uniform(m: usize, ku_input: f64, ku_noise: f64) -> Result<Self> {
        let var = ku_input * ku_input / 3.0;
        Self::new(ku_input, ku_noise, DMatrix::from_diagonal_element(m, m, var))
    }

    pub fn ku_input(&self) -> f64 {
        self.ku_input
    }
    pub fn ku_noise(&self) -> f64 {
        self.ku_noise
    }
    pub fn sigma_u(&self) -> &DMatrix<f64> {
        &self.sigma_u
    }
    pub fn m(&self) -> usize {
        self.sigma_u.nrows()
    }

    /// The single amplitude bound of the theory: max of both channels.
    pub fn k_u(&self) -> f64 {
        self.ku_input.max(self.ku_noise)
    }
}

// ---------------------------------------------------------------------------
// Model file

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum RowOrMatrix {
    Matrix(Vec<Vec<f64>>),
    Row(Vec<f64>),
}

impl RowOrMatrix {
    pub(crate) fn into_rows(self) -> Vec<Vec<f64>> {
        match self {
            RowOrMatrix::Matrix(rows) => rows,
            RowOrMatrix::Row(r) => vec![r],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct SignalFile {
    #[serde(rename = "Ku_input")]
    pub ku_input: f64,
    #[serde(rename = "Ku_noise")]
    pub ku_noise: f64,
    #[serde(rename = "Sigma_u", default, skip_serializing_if = "Option::is_none")]
    pub sigma_u: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct ModelFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "nQ")]
    pub n_q: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: RowOrMatrix,
    #[serde(rename = "D")]
    pub d: RowOrMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalFile>,
}

/// A model plus the optional switching law and signal bounds that travel
/// with it in a model file.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub model: LssModel,
    pub dist: Option<SwitchingDistribution>,
    pub signal: Option<SignalSpec>,
}

impl ModelSpec {
    pub fn new(model: LssModel) -> Self {
        Self { model, dist: None, signal: None }
    }

    /// The stated switching law, uniform if absent.
    pub fn dist_or_uniform(&self) -> SwitchingDistribution {
        self.dist.clone().unwrap_or_else(|| SwitchingDistribution::uniform(self.model.n_q()))
    }

    pub(crate) fn to_file(&self) -> ModelFile {
        let m = &self.model;
        ModelFile {
            n: m.n,
            m: m.m,
            n_q: m.n_q,
            a: m.a.iter().map(linalg::to_rows).collect(),
            b: m.b.iter().map(linalg::to_rows).collect(),
            c: RowOrMatrix::Matrix(linalg::to_rows(&m.c)),
            d: RowOrMatrix::Matrix(linalg::to_rows(&m.d)),
            p: self.dist.as_ref().map(|d| d.p.clone()),
            signal: self.signal.as_ref().map(|s| SignalFile {
                ku_input: s.ku_input,
                ku_noise: s.ku_noise,
                sigma_u: Some(linalg::to_rows(&s.sigma_u)),
            }),
        }
    }

    pub(crate) fn from_file(f: ModelFile) -> Result<Self> {
        if f.a.len() != f.n_q || f.b.len() != f.n_q {
            return Err(LssError::Dimension(format!("nQ = {} but A/B list lengths differ", f.n_q)));
        }
        let a = f
            .a
            .iter()
            .enumerate()
            .map(|(q, rows)| linalg::from_rows(rows, f.n, f.n, &format!("A_{}", q + 1)))
            .collect::<Result<Vec<_>>>()?;
        let b = f
            .b
            .iter()
            .enumerate()
            .map(|(q, rows)| linalg::from_rows(rows, f.n, f.m, &format!("B_{}", q + 1)))
            .collect::<Result<Vec<_>>>()?;
        let c = linalg::from_rows(&f.c.into_rows(), 1, f.n, "C")?;
        let d = linalg::from_rows(&f.d.into_rows(), 1, f.m, "D")?;
        let model = LssModel::new(a, b, c, d)?;
        let dist = match f.p {
            Some(p) => {
                if p.len() != f.n_q {
                    return Err(LssError::Distribution(format!("p has {} entries, nQ = {}", p.len(), f.n_q)));
                }
                Some(SwitchingDistribution::new(p)?)
            }
            None => None,
        };
        let signal = match f.signal {
            Some(s) => Some(match s.sigma_u {
                Some(rows) => SignalSpec::new(s.ku_input, s.ku_noise, linalg::from_rows(&rows, f.m, f.m, "Sigma_u")?)?,
                None => SignalSpec::uniform(f.m, s.ku_input, s.ku_noise)?,
            }),
            None => None,
        };
        Ok(Self { model, dist, signal })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::two_mode_model;
    use proptest::prelude::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn empty_word_gives_identity() {
        let model = two_mode_model(0.27);
        assert_eq!(a_word(&model, &Word::empty()).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn a_word_applies_first_letter_first() {
        // A_(2,1) = A_1 A_2 = [[0,1],[0,a]] [[0,0],[0,a]] = [[0,a],[0,a^2]]
        let a = 0.27;
        let got = a_word(&two_mode_model(a), &w("2.1")).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.0, a, 0.0, a * a]);
        assert!((got - want).amax() < 1e-15);
    }

    #[test]
    fn single_letter_word_is_the_matrix() {
        let model = two_mode_model(0.27);
        assert_eq!(a_word(&model, &w("2")).unwrap(), model.a(1).clone());
    }

    #[test]
    fn out_of_range_letter_is_rejected() {
        let model = two_mode_model(0.27);
        assert!(matches!(a_word(&model, &w("3")), Err(LssError::LetterOutOfRange { letter: 3, n_q: 2 })));
        assert!(Word::from_modes(&[0]).is_err());
    }

    #[test]
    fn p_word_examples() {
        let uni = SwitchingDistribution::uniform(2);
        assert_eq!(p_word(&uni, &w("1.2.1")).unwrap(), 0.125);
        assert_eq!(p_word(&uni, &Word::empty()).unwrap(), 1.0);
        let skew = SwitchingDistribution::new(vec![0.3, 0.7]).unwrap();
        assert!((p_word(&skew, &w("2.2")).unwrap() - 0.49).abs() < 1e-15);
    }

    #[test]
    fn concat_examples() {
        assert_eq!(word_concat(&w("1"), &w("2.1")), w("1.2.1"));
        assert_eq!(word_concat(&Word::empty(), &w("2.1")), w("2.1"));
        assert_eq!(word_concat(&w("2"), &Word::empty()), w("2"));
    }

    #[test]
    fn word_order_is_shortlex() {
        let mut words = vec![w("2.1"), w("1"), Word::empty(), w("1.2"), w("2")];
        words.sort();
        assert_eq!(words, vec![Word::empty(), w("1"), w("2"), w("1.2"), w("2.1")]);
        assert_eq!(Word::all_up_to(2, 2).len(), 7);
    }

    #[test]
    fn word_string_round_trip() {
        for s in ["", "1", "2.2.1", "10.3"] {
            assert_eq!(w(s).to_string(), s);
        }
        assert!("1..2".parse::<Word>().is_err());
        assert!("0".parse::<Word>().is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(SwitchingDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(SwitchingDistribution::new(vec![1.0, 0.0]).is_err());
        assert!(SwitchingDistribution::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn uniform_signal_covariance() {
        let s = SignalSpec::uniform(2, 0.8, 1.0).unwrap();
        assert_eq!(s.sigma_u()[(0, 0)], 0.8 * 0.8 / 3.0);
        assert_eq!(s.sigma_u()[(0, 1)], 0.0);
        assert_eq!(s.k_u(), 1.0);
        assert!(SignalSpec::new(1.0, 1.0, DMatrix::from_row_slice(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn model_dimension_checks() {
        let good = two_mode_model(0.1);
        let bad_c = DMatrix::zeros(1, 3);
        assert!(good.with_c(bad_c).is_err());
        assert!(LssModel::new(vec![], vec![], DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn model_file_accepts_flat_rows() {
        let json = r#"{"n":1,"m":1,"nQ":1,"A":[[[0.5]]],"B":[[[1.0]]],"C":[2.0],"D":[0.0]}"#;
        let spec = ModelSpec::from_json(json).unwrap();
        assert_eq!(spec.model.c()[(0, 0)], 2.0);
        assert!(spec.dist.is_none());
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let a = 0.1 + 0.2; // not representable as a short decimal
        let mut spec = ModelSpec::new(two_mode_model(a));
        spec.dist = Some(SwitchingDistribution::new(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap());
        spec.signal = Some(SignalSpec::uniform(1, 0.8, 1.0 / 7.0).unwrap());
        let back = ModelSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    fn small_word(n_q: usize) -> impl Strategy<Value = Word> {
        prop::collection::vec(0..n_q, 0..5).prop_map(Word::from_indices)
    }

    proptest! {
        #[test]
        fn a_word_reverses_under_concat(v in small_word(2), u in small_word(2), a in -0.9f64..0.9) {
            let model = two_mode_model(a);
            let lhs = a_word(&model, &v.concat(&u)).unwrap();
            let rhs = a_word(&model, &u).unwrap() * a_word(&model, &v).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn p_word_is_multiplicative(v in small_word(3), u in small_word(3), x in 0.05f64..0.45, y in 0.05f64..0.45) {
            let dist = SwitchingDistribution::new(vec![x, y, 1.0 - x - y]).unwrap();
            let lhs = p_word(&dist, &v.concat(&u)).unwrap();
            let rhs = p_word(&dist, &v).unwrap() * p_word(&dist, &u).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-15 * rhs.max(1e-300) + 1e-300);
        }

        #[test]
        fn model_json_round_trip(vals in prop::collection::vec(-1e3f64..1e3, 7)) {
            let a = vec![DMatrix::from_row_slice(2, 2, &vals[0..4])];
            let b = vec![DMatrix::from_row_slice(2, 1, &vals[4..6])];
            let model = LssModel::new(a, b, DMatrix::from_row_slice(1, 2, &[vals[6], 1.0 / 3.0]), DMatrix::zeros(1, 1)).unwrap();
            let spec = ModelSpec::new(model);
            let back = ModelSpec::from_json(&spec.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
