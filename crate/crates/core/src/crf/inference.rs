//! Exact inference for the linear-chain CRF, all in log space.
//!
//! A path `y` scores `A[START][y_0] + Σ_i s[i][y_i] + Σ_i A[y_i][y_{i+1}] +
//! A[y_{n-1}][END]` where `s` are the emission scores.

use crate::emissions::EmissionMatrix;
use crate::error::{Error, Result};
use crate::linalg::{logsumexp, Matrix};
use crate::tagscheme::TagSequence;

use super::TransitionModel;

fn check(em: &EmissionMatrix, tr: &TransitionModel) {
    assert!(!em.is_empty(), "CRF inference needs at least one position");
    assert_eq!(em.num_tags(), tr.num_tags(), "emission / transition tag count differ");
}

/// Forward log-potentials `alpha[i][k]` and `log Z`.
pub(crate) fn forward(em: &EmissionMatrix, tr: &TransitionModel) -> (Matrix, f64) {
    check(em, tr);
    let s = em.scores();
    let (n, k) = (s.rows(), s.cols());
    let mut alpha = Matrix::zeros(n, k);
    for t in 0..k {
        alpha.set(0, t, tr.start(t) + s.get(0, t));
    }
    let mut buf = vec![0.0; k];
    for i in 1..n {
        for t in 0..k {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(i - 1, j) + tr.get(j, t);
            }
            alpha.set(i, t, s.get(i, t) + logsumexp(&buf));
        }
    }
    for (t, b) in buf.iter_mut().enumerate() {
        *b = alpha.get(n - 1, t) + tr.end(t);
    }
    let log_z = logsumexp(&buf);
    (alpha, log_z)
}

/// Backward log-potentials: `beta[i][j]` sums over suffixes after position `i` in state `j`.
pub(crate) fn backward(em: &EmissionMatrix, tr: &TransitionModel) -> Matrix {
    check(em, tr);
    let s = em.scores();
    let (n, k) = (s.rows(), s.cols());
    let mut beta = Matrix::zeros(n, k);
    for t in 0..k {
        beta.set(n - 1, t, tr.end(t));
    }
    let mut buf = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for j in 0..k {
            for (t, b) in buf.iter_mut().enumerate() {
                *b = tr.get(j, t) + s.get(i + 1, t) + beta.get(i + 1, t);
            }
            beta.set(i, j, logsumexp(&buf));
        }
    }
    beta
}

pub fn log_partition(em: &EmissionMatrix, tr: &TransitionModel) -> f64 {
    forward(em, tr).1
}

/// Unnormalised score of one path.
pub fn path_score(tags: &[usize], em: &EmissionMatrix, tr: &TransitionModel) -> f64 {
    let s = em.scores();
    let mut score = tr.start(tags[0]) + tr.end(tags[tags.len() - 1]);
    for (i, &t) in tags.iter().enumerate() {
        score += s.get(i, t);
        if i > 0 {
            score += tr.get(tags[i - 1], t);
        }
    }
    score
}

pub fn sequence_log_prob(y: &TagSequence, em: &EmissionMatrix, tr: &TransitionModel) -> Result<f64> {
    if y.len() != em.len() {
        return Err(Error::LengthMismatch(format!("{} tags for {} positions", y.len(), em.len())));
    }
    if let Some(&bad) = y.as_slice().iter().find(|&&t| t >= em.num_tags()) {
        return Err(Error::InvalidTag {
            tag: format!("index {bad} (K = {})", em.num_tags()),
        });
    }
    Ok(path_score(y.as_slice(), em, tr) - log_partition(em, tr))
}

/// Highest-scoring path and its unnormalised score; ties go to the lowest tag index.
pub fn viterbi(em: &EmissionMatrix, tr: &TransitionModel) -> (TagSequence, f64) {
    check(em, tr);
    let s = em.scores();
    let (n, k) = (s.rows(), s.cols());
    let mut delta: Vec<f64> = (0..k).map(|t| tr.start(t) + s.get(0, t)).collect();
    let mut next = vec![0.0; k];
    let mut back = vec![0usize; n * k];
    for i in 1..n {
        for t in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + tr.get(0, t);
            for (j, &d) in delta.iter().enumerate().skip(1) {
                let cand = d + tr.get(j, t);
                if cand > best_score {
                    best = j;
                    best_score = cand;
                }
            }
            back[i * k + t] = best;
            next[t] = best_score + s.get(i, t);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best_score = delta[0] + tr.end(0);
    for (t, &d) in delta.iter().enumerate().skip(1) {
        let cand = d + tr.end(t);
        if cand > best_score {
            last = t;
            best_score = cand;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i * k + path[i]];
    }
    (TagSequence(path), best_score)
}

/// Posterior `P(y_i = k | x)` for every position.
pub fn marginals(em: &EmissionMatrix, tr: &TransitionModel) -> Matrix {
    let (alpha, log_z) = forward(em, tr);
    let beta = backward(em, tr);
    let mut out = Matrix::zeros(alpha.rows(), alpha.cols());
    for (o, (a, b)) in out
        .as_mut_slice()
        .iter_mut()
        .zip(alpha.as_slice().iter().zip(beta.as_slice()))
    {
        *o = (a + b - log_z).exp();
    }
    out
}

/// Everything the likelihood gradient needs from one sentence.
pub(crate) struct Posterior {
    pub log_z: f64,
    pub unary: Matrix,
    /// Expected transition counts, `(K+2) × (K+2)` in [`TransitionModel`] layout.
    pub pairwise: Matrix,
}

pub(crate) fn posterior(em: &EmissionMatrix, tr: &TransitionModel) -> Posterior {
    let (alpha, log_z) = forward(em, tr);
    let beta = backward(em, tr);
    let s = em.scores();
    let (n, k) = (s.rows(), s.cols());
    let mut unary = Matrix::zeros(n, k);
    let mut pairwise = Matrix::zeros(k + 2, k + 2);
    for i in 0..n {
        for t in 0..k {
            unary.set(i, t, (alpha.get(i, t) + beta.get(i, t) - log_z).exp());
        }
    }
    let (start, end) = (k, k + 1);
    for t in 0..k {
        pairwise.set(start, t, unary.get(0, t));
        pairwise.set(t, end, unary.get(n - 1, t));
    }
    for i in 0..n.saturating_sub(1) {
        for j in 0..k {
            let a = alpha.get(i, j);
            for t in 0..k {
                let p = (a + tr.get(j, t) + s.get(i + 1, t) + beta.get(i + 1, t) - log_z).exp();
                let cur = pairwise.get(j, t);
                pairwise.set(j, t, cur + p);
            }
        }
    }
    Posterior {
        log_z,
        unary,
        pairwise,
    }
}
