//! Linear-chain CRF over emission scores.

mod inference;
mod train;

pub use inference::{log_partition, marginals, path_score, sequence_log_prob, viterbi};
pub use train::{
    default_epochs, nll_and_gradient, predict_all, predict_with_confidence, train, ConfidenceMode, CrfGradient, Init,
    TrainConfig, Trained,
};

use crate::corpus::Sentence;
use crate::emissions::{EmissionMatrix, EmissionScorer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tagscheme::{TagSequence, TagSet};

/// `(K+2) × (K+2)` transition log-scores; index `K` is START and `K+1` is END.
/// The START column and END row are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    num_tags: usize,
    scores: Matrix,
}

impl TransitionModel {
    pub fn zeros(num_tags: usize) -> Self {
        TransitionModel {
            num_tags,
            scores: Matrix::zeros(num_tags + 2, num_tags + 2),
        }
    }

    pub fn from_matrix(scores: Matrix) -> Result<Self> {
        if scores.rows() != scores.cols() || scores.rows() < 3 {
            return Err(Error::Dimension(format!(
                "transition matrix is {}x{}",
                scores.rows(),
                scores.cols()
            )));
        }
        if scores.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("transition matrix".into()));
        }
        Ok(TransitionModel {
            num_tags: scores.rows() - 2,
            scores,
        })
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn start_state(&self) -> usize {
        self.num_tags
    }

    pub fn end_state(&self) -> usize {
        self.num_tags + 1
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.scores.get(from, to)
    }

    #[inline]
    pub fn start(&self, to: usize) -> f64 {
        self.scores.get(self.num_tags, to)
    }

    #[inline]
    pub fn end(&self, from: usize) -> f64 {
        self.scores.get(from, self.num_tags + 1)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.scores
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.scores
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    scorer: EmissionScorer,
    transitions: TransitionModel,
    tagset: TagSet,
}

impl CrfModel {
    pub fn new(scorer: EmissionScorer, transitions: TransitionModel, tagset: TagSet) -> Result<Self> {
        let k = tagset.len();
        if scorer.num_tags() != k || transitions.num_tags() != k {
            return Err(Error::Dimension(format!(
                "tag set has K = {k}, scorer {}, transitions {}",
                scorer.num_tags(),
                transitions.num_tags()
            )));
        }
        Ok(CrfModel {
            scorer,
            transitions,
            tagset,
        })
    }

    pub fn scorer(&self) -> &EmissionScorer {
        &self.scorer
    }

    pub fn transitions(&self) -> &TransitionModel {
        &self.transitions
    }

    pub fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    pub fn num_params(&self) -> usize {
        self.scorer.weights().len() + self.transitions.matrix().as_slice().len()
    }

    /// Flat parameter view: emission weights followed by transitions.
    pub fn param(&self, i: usize) -> f64 {
        let e = self.scorer.weights().len();
        if i < e {
            self.scorer.weights()[i]
        } else {
            self.transitions.matrix().as_slice()[i - e]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let e = self.scorer.weights().len();
        if i < e {
            self.scorer.weights_mut()[i] = v;
        } else {
            self.transitions.matrix_mut().as_mut_slice()[i - e] = v;
        }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut EmissionScorer, &mut TransitionModel) {
        (&mut self.scorer, &mut self.transitions)
    }

    pub fn emissions(&self, sentence: &Sentence) -> Result<EmissionMatrix> {
        self.scorer.emission_scores(sentence)
    }

    pub fn decode(&self, sentence: &Sentence) -> Result<TagSequence> {
        Ok(viterbi(&self.emissions(sentence)?, &self.transitions).0)
    }

    pub fn squared_norm(&self) -> f64 {
        self.scorer
            .weights()
            .iter()
            .chain(self.transitions.matrix().as_slice())
            .map(|w| w * w)
            .sum()
    }
}
