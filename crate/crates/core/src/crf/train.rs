use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Examples, Sentence};
use crate::emissions::{EmissionMatrix, EmissionScorer, Representation, ScorerKind};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::Adagrad;
use crate::tagscheme::TagSequence;

use super::inference::{marginals, path_score, posterior, viterbi};
use super::{CrfModel, TransitionModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub rng_seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.1,
            l2: 1e-4,
            rng_seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// Fewer epochs for larger seed sets: 30 up to 10%, 20 up to 30%, else 10.
pub fn default_epochs(seed_ratio: f64) -> usize {
    if seed_ratio <= 0.1 {
        30
    } else if seed_ratio <= 0.3 {
        20
    } else {
        10
    }
}

/// Starting point for [`train`].
#[derive(Debug, Clone)]
pub enum Init<'a> {
    Fresh(ScorerKind),
    Warm(&'a CrfModel),
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: CrfModel,
    /// Full regularised objective evaluated after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Gradient of the regularised negative log-likelihood, in the same flat
/// layout as [`CrfModel::param`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradient {
    pub emission: Vec<f64>,
    pub transitions: Matrix,
}

impl CrfGradient {
    pub fn len(&self) -> usize {
        self.emission.len() + self.transitions.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        let e = self.emission.len();
        if i < e {
            self.emission[i]
        } else {
            self.transitions.as_slice()[i - e]
        }
    }

    pub fn norm(&self) -> f64 {
        self.emission
            .iter()
            .chain(self.transitions.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Adds one sentence's NLL gradient (expected minus empirical counts) and
/// returns its NLL.
fn sentence_gradient(
    scorer: &EmissionScorer,
    transitions: &TransitionModel,
    repr: &Representation,
    gold: &TagSequence,
    emission_sink: impl FnMut(usize, f64),
    trans_grad: &mut Matrix,
) -> Result<f64> {
    let em = EmissionMatrix::from_scores(scorer.scores_for(repr)?)?;
    let post = posterior(&em, transitions);
    let y = gold.as_slice();
    let nll = post.log_z - path_score(y, &em, transitions);

    let mut dscores = post.unary;
    for (i, &t) in y.iter().enumerate() {
        let cur = dscores.get(i, t);
        dscores.set(i, t, cur - 1.0);
    }
    scorer.backprop(repr, &dscores, emission_sink);

    for (g, p) in trans_grad.as_mut_slice().iter_mut().zip(post.pairwise.as_slice()) {
        *g += p;
    }
    let (start, end) = (transitions.start_state(), transitions.end_state());
    let mut sub = |from: usize, to: usize| {
        let cur = trans_grad.get(from, to);
        trans_grad.set(from, to, cur - 1.0);
    };
    sub(start, y[0]);
    sub(y[y.len() - 1], end);
    for w in y.windows(2) {
        sub(w[0], w[1]);
    }
    Ok(nll)
}

fn check_example(sentence: &Sentence, tags: &TagSequence, k: usize) -> Result<()> {
    if sentence.len() != tags.len() {
        return Err(Error::LengthMismatch(format!(
            "{} tokens but {} tags",
            sentence.len(),
            tags.len()
        )));
    }
    if tags.as_slice().iter().any(|&t| t >= k) {
        return Err(Error::InvalidTag {
            tag: format!("index out of range for K = {k}"),
        });
    }
    Ok(())
}

/// `−Σ log p(y|x) + (l2/2)·‖θ‖²` over `batch`, with its exact dense gradient.
pub fn nll_and_gradient(batch: &[(&Sentence, &TagSequence)], model: &CrfModel, l2: f64) -> Result<(f64, CrfGradient)> {
    if batch.is_empty() {
        return Err(Error::config("gradient batch is empty"));
    }
    let scorer = model.scorer();
    let mut grad = CrfGradient {
        emission: vec![0.0; scorer.weights().len()],
        transitions: Matrix::zeros(model.tagset().len() + 2, model.tagset().len() + 2),
    };
    let mut loss = 0.0;
    for (sentence, tags) in batch {
        check_example(sentence, tags, model.tagset().len())?;
        let repr = scorer.represent(sentence);
        let emission = &mut grad.emission;
        loss += sentence_gradient(
            scorer,
            model.transitions(),
            &repr,
            tags,
            |j, g| emission[j] += g,
            &mut grad.transitions,
        )?;
    }
    if l2 > 0.0 {
        loss += 0.5 * l2 * model.squared_norm();
        for (g, w) in grad.emission.iter_mut().zip(scorer.weights()) {
            *g += l2 * w;
        }
        for (g, w) in grad
            .transitions
            .as_mut_slice()
            .iter_mut()
            .zip(model.transitions().matrix().as_slice())
        {
            *g += l2 * w;
        }
    }
    Ok((loss, grad))
}

fn objective(model: &CrfModel, reprs: &[Representation], tags: &[&TagSequence], l2: f64) -> Result<f64> {
    let mut loss = 0.5 * l2 * model.squared_norm();
    for (repr, y) in reprs.iter().zip(tags) {
        let em = EmissionMatrix::from_scores(model.scorer().scores_for(repr)?)?;
        let post = super::inference::forward(&em, model.transitions()).1;
        loss += post - path_score(y.as_slice(), &em, model.transitions());
    }
    Ok(loss)
}

/// Per-sentence AdaGrad on the regularised NLL. The L2 term is spread
/// evenly over sentences and applied lazily to the parameters each
/// sentence touches.
pub fn train(data: &impl Examples, config: &TrainConfig, init: Init<'_>) -> Result<Trained> {
    config.validate()?;
    let examples = data.examples();
    if examples.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    let tagset = data.tagset();
    let k = tagset.len();
    for (s, t) in &examples {
        check_example(s, t, k)?;
    }
    let mut model = match init {
        Init::Fresh(kind) => CrfModel::new(EmissionScorer::zeros(kind, k)?, TransitionModel::zeros(k), tagset.clone())?,
        Init::Warm(m) => {
            if m.tagset() != tagset {
                return Err(Error::Dimension("warm-start model has a different tag set".into()));
            }
            m.clone()
        }
    };

    let reprs: Vec<Representation> = examples.iter().map(|(s, _)| model.scorer().represent(s)).collect();
    let golds: Vec<&TagSequence> = examples.iter().map(|(_, t)| *t).collect();
    let n_weights = model.scorer().weights().len();
    let mut opt_emission = Adagrad::new(n_weights, config.learning_rate);
    let mut opt_trans = Adagrad::new((k + 2) * (k + 2), config.learning_rate);
    let mut scratch = vec![0.0; n_weights];
    let mut seen = vec![false; n_weights];
    let mut touched: Vec<usize> = Vec::new();
    let mut trans_grad = Matrix::zeros(k + 2, k + 2);
    let reg = config.l2 / examples.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            trans_grad.as_mut_slice().iter_mut().for_each(|g| *g = 0.0);
            let nll = sentence_gradient(
                model.scorer(),
                model.transitions(),
                &reprs[i],
                golds[i],
                |j, g| {
                    if !seen[j] {
                        seen[j] = true;
                        touched.push(j);
                    }
                    scratch[j] += g;
                },
                &mut trans_grad,
            )?;
            if !nll.is_finite() {
                return Err(Error::TrainingAborted {
                    iteration: None,
                    message: format!("non-finite loss on sentence {i} in epoch {epoch}"),
                });
            }
            let (scorer, transitions) = model.parts_mut();
            let weights = scorer.weights_mut();
            for &j in &touched {
                let g = scratch[j] + reg * weights[j];
                opt_emission.update(weights, j, g);
                scratch[j] = 0.0;
                seen[j] = false;
            }
            touched.clear();
            let params = transitions.matrix_mut().as_mut_slice();
            for (j, &g) in trans_grad.as_slice().iter().enumerate() {
                let g = g + reg * params[j];
                opt_trans.update(params, j, g);
            }
        }
        let loss = objective(&model, &reprs, &golds, config.l2)?;
        if !loss.is_finite() {
            return Err(Error::TrainingAborted {
                iteration: None,
                message: format!("non-finite training objective after epoch {epoch}"),
            });
        }
        epoch_losses.push(loss);
    }
    Ok(Trained { model, epoch_losses })
}

/// Where per-token confidence comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceMode {
    /// Softmax of the emission scores at the decoded tag.
    #[default]
    Softmax,
    /// CRF posterior marginal at the decoded tag.
    Marginal,
}

/// Viterbi tags plus a confidence in `(0, 1]` for each of them.
pub fn predict_with_confidence(
    model: &CrfModel,
    sentence: &Sentence,
    mode: ConfidenceMode,
) -> Result<(TagSequence, Vec<f64>)> {
    let em = model.emissions(sentence)?;
    let (path, _) = viterbi(&em, model.transitions());
    let conf = match mode {
        ConfidenceMode::Softmax => path
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &t)| em.probs().get(i, t))
            .collect(),
        ConfidenceMode::Marginal => {
            let m = marginals(&em, model.transitions());
            path.as_slice().iter().enumerate().map(|(i, &t)| m.get(i, t)).collect()
        }
    };
    Ok((path, conf))
}

/// [`predict_with_confidence`] over many sentences, split across `threads`
/// scoped workers. Output order matches input order.
pub fn predict_all(
    model: &CrfModel,
    sentences: &[Sentence],
    mode: ConfidenceMode,
    threads: usize,
) -> Result<Vec<(TagSequence, Vec<f64>)>> {
    let threads = threads.max(1);
    if threads == 1 || sentences.len() < 2 * threads {
        return sentences
            .iter()
            .map(|s| predict_with_confidence(model, s, mode))
            .collect();
    }
    let chunk = sentences.len().div_ceil(threads);
    let parts: Vec<Result<Vec<_>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sentences
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| predict_with_confidence(model, s, mode))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(sentences.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
