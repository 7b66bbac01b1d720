//! Per-token emission scores and their row softmax.
//!
//! Two scorers produce the token representation: hashed sparse lexical
//! features, or embeddings from an [`EmbeddingTable`] (the token's own vector
//! concatenated with the mean of its neighbours within a radius and a bias).
//! Either way `scores[i][k] = <repr_i, W[:, k]>`.

use std::sync::Arc;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlm::EmbeddingTable;

pub const DEFAULT_HASH_BITS: u32 = 18;

/// Sorted, deduplicated hashed feature ids, each with implicit value 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector(Vec<u32>);

impl FeatureVector {
    pub fn indices(&self) -> &[u32] {
        &self.0
    }
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_feature(name: &str, bits: u32) -> u32 {
    (fnv1a(name.as_bytes()) & ((1u64 << bits) - 1)) as u32
}

/// Case/digit pattern: upper `A`, lower `a`, digit `0`, anything else kept.
pub fn word_shape(word: &str) -> String {
    word.chars()
        .map(|c| {
            if c.is_uppercase() {
                'A'
            } else if c.is_lowercase() {
                'a'
            } else if c.is_numeric() {
                '0'
            } else {
                c
            }
        })
        .collect()
}

/// The unhashed feature strings for token `i`.
pub fn feature_strings(sentence: &Sentence, i: usize) -> Vec<String> {
    let word = sentence.word(i);
    let lower = word.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = vec!["bias".to_string(), format!("w={lower}"), format!("shape={}", word_shape(word))];
    for len in 1..=3.min(chars.len()) {
        let pre: String = chars[..len].iter().collect();
        let suf: String = chars[chars.len() - len..].iter().collect();
        out.push(format!("pre{len}={pre}"));
        out.push(format!("suf{len}={suf}"));
    }
    match i.checked_sub(1) {
        Some(p) => out.push(format!("prev={}", sentence.word(p).to_lowercase())),
        None => out.push("BOS".to_string()),
    }
    if i + 1 < sentence.len() {
        out.push(format!("next={}", sentence.word(i + 1).to_lowercase()));
    } else {
        out.push("EOS".to_string());
    }
    out
}

pub fn extract_features(sentence: &Sentence, i: usize, hash_bits: u32) -> FeatureVector {
    let mut ids: Vec<u32> = feature_strings(sentence, i)
        .iter()
        .map(|f| hash_feature(f, hash_bits))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    FeatureVector(ids)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_probs(scores: &Matrix) -> Result<Matrix> {
    if scores.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("emission scores".into()));
    }
    let mut probs = scores.clone();
    for i in 0..probs.rows() {
        let row = probs.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    Ok(probs)
}

/// Pre-softmax scores and their row softmax for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    scores: Matrix,
    probs: Matrix,
}

impl EmissionMatrix {
    pub fn from_scores(scores: Matrix) -> Result<Self> {
        let probs = softmax_probs(&scores)?;
        Ok(EmissionMatrix { scores, probs })
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.scores.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.rows() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.scores.cols()
    }
}

/// Token representations of a sentence, as consumed by a scorer.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Sparse(Vec<FeatureVector>),
    Dense(Matrix),
}

impl Representation {
    pub fn len(&self) -> usize {
        match self {
            Representation::Sparse(f) => f.len(),
            Representation::Dense(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerKind {
    Linear { hash_bits: u32 },
    Embedding { table: Arc<EmbeddingTable>, radius: usize },
}

impl ScorerKind {
    pub fn input_dim(&self) -> usize {
        match self {
            ScorerKind::Linear { hash_bits } => 1usize << hash_bits,
            ScorerKind::Embedding { table, .. } => 2 * table.dim() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScorerKind::Linear { hash_bits } if !(1..=28).contains(hash_bits) => {
                Err(Error::config(format!("hash_bits {hash_bits} outside 1..=28")))
            }
            _ => Ok(()),
        }
    }
}

/// Linear map from token representation to per-tag scores. Weights are
/// stored input-major: `weights[f * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionScorer {
    kind: ScorerKind,
    num_tags: usize,
    weights: Vec<f64>,
}

impl EmissionScorer {
    pub fn zeros(kind: ScorerKind, num_tags: usize) -> Result<Self> {
        kind.validate()?;
        let n = kind.input_dim() * num_tags;
        Ok(EmissionScorer {
            kind,
            num_tags,
            weights: vec![0.0; n],
        })
    }

    pub fn with_weights(kind: ScorerKind, num_tags: usize, weights: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        if weights.len() != kind.input_dim() * num_tags {
            return Err(Error::Dimension(format!(
                "{} weights for input dim {} and {num_tags} tags",
                weights.len(),
                kind.input_dim()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("emission weights".into()));
        }
        Ok(EmissionScorer {
            kind,
            num_tags,
            weights,
        })
    }

    pub fn kind(&self) -> &ScorerKind {
        &self.kind
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn represent(&self, sentence: &Sentence) -> Representation {
        match &self.kind {
            ScorerKind::Linear { hash_bits } => Representation::Sparse(
                (0..sentence.len())
                    .map(|i| extract_features(sentence, i, *hash_bits))
                    .collect(),
            ),
            ScorerKind::Embedding { table, radius } => {
                Representation::Dense(embedding_features(table, *radius, sentence))
            }
        }
    }

    pub fn scores_for(&self, repr: &Representation) -> Result<Matrix> {
        let k = self.num_tags;
        if self.weights.len() != self.kind.input_dim() * k {
            return Err(Error::Dimension("scorer weights do not match its input dimension".into()));
        }
        let mut out = Matrix::zeros(repr.len(), k);
        match repr {
            Representation::Sparse(feats) => {
                for (i, fv) in feats.iter().enumerate() {
                    let row = out.row_mut(i);
                    for &f in fv.indices() {
                        let w = &self.weights[f as usize * k..(f as usize + 1) * k];
                        row.iter_mut().zip(w).for_each(|(r, w)| *r += w);
                    }
                }
            }
            Representation::Dense(m) => {
                if m.cols() != self.kind.input_dim() {
                    return Err(Error::Dimension(format!(
                        "representation width {} vs scorer input {}",
                        m.cols(),
                        self.kind.input_dim()
                    )));
                }
                for i in 0..m.rows() {
                    let row = out.row_mut(i);
                    for (f, &x) in m.row(i).iter().enumerate() {
                        if x != 0.0 {
                            let w = &self.weights[f * k..(f + 1) * k];
                            row.iter_mut().zip(w).for_each(|(r, w)| *r += x * w);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn emission_scores(&self, sentence: &Sentence) -> Result<EmissionMatrix> {
        EmissionMatrix::from_scores(self.scores_for(&self.represent(sentence))?)
    }

    /// Calls `sink(param_index, value)` for the weight gradient induced by
    /// per-position score gradients `dscores` (n × K).
    pub fn backprop(&self, repr: &Representation, dscores: &Matrix, mut sink: impl FnMut(usize, f64)) {
        let k = self.num_tags;
        match repr {
            Representation::Sparse(feats) => {
                for (i, fv) in feats.iter().enumerate() {
                    let g = dscores.row(i);
                    for &f in fv.indices() {
                        for (t, &gt) in g.iter().enumerate() {
                            sink(f as usize * k + t, gt);
                        }
                    }
                }
            }
            Representation::Dense(m) => {
                for i in 0..m.rows() {
                    let g = dscores.row(i);
                    for (f, &x) in m.row(i).iter().enumerate() {
                        if x != 0.0 {
                            for (t, &gt) in g.iter().enumerate() {
                                sink(f * k + t, x * gt);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[e(x_i) ; mean_{0<|j-i|<=radius} e(x_j) ; 1]` for each token.
pub fn embedding_features(table: &EmbeddingTable, radius: usize, sentence: &Sentence) -> Matrix {
    let ids = table.encode(sentence);
    let d = table.dim();
    let n = ids.len();
    let mut out = Matrix::zeros(n, 2 * d + 1);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..d].copy_from_slice(table.vector(ids[i]));
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let count = hi - lo;
        if count > 0 {
            for j in (lo..=hi).filter(|&j| j != i) {
                for (r, &v) in row[d..2 * d].iter_mut().zip(table.vector(ids[j])) {
                    *r += v / count as f64;
                }
            }
        }
        row[2 * d] = 1.0;
    }
    out
}
