//! Masked-language-model adaptation of an embedding table.
//!
//! The predictor is log-bilinear: the context of a masked position is the
//! mean input embedding of the unmasked tokens within `context_radius`, and
//! the logits over the vocabulary are `output · context + output_bias`.
//! Training minimises the mean cross-entropy of the original tokens at the
//! masked positions.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, UnlabeledCorpus};
use crate::error::{Error, Result};
use crate::linalg::{dot, logsumexp, Matrix};
use crate::optim::Adagrad;

pub const UNK: usize = 0;
pub const MASK: usize = 1;
pub const UNK_TOKEN: &str = "[UNK]";
pub const MASK_TOKEN: &str = "[MASK]";

/// Input embeddings plus the output projection of the masked-token predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
    output: Matrix,
    output_bias: Vec<f64>,
}

impl EmbeddingTable {
    /// Table over `words` (deduplicated, specials prepended) with small
    /// random input vectors and a zero predictor.
    pub fn random<S: AsRef<str>>(words: impl IntoIterator<Item = S>, dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        let mut vocab = vec![UNK_TOKEN.to_string(), MASK_TOKEN.to_string()];
        let mut index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        for w in words {
            let w = w.as_ref();
            if !index.contains_key(w) {
                index.insert(w.to_string(), vocab.len());
                vocab.push(w.to_string());
            }
        }
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let data = (0..v * dim).map(|_| rng.gen_range(-scale..scale)).collect();
        Ok(EmbeddingTable {
            vocab,
            index,
            vectors: Matrix::from_vec(v, dim, data),
            output: Matrix::zeros(v, dim),
            output_bias: vec![0.0; v],
        })
    }

    pub fn from_parts(vocab: Vec<String>, vectors: Matrix, output: Matrix, output_bias: Vec<f64>) -> Result<Self> {
        let v = vocab.len();
        if vocab.get(UNK).map(String::as_str) != Some(UNK_TOKEN) || vocab.get(MASK).map(String::as_str) != Some(MASK_TOKEN) {
            return Err(Error::Dimension("vocabulary must start with [UNK], [MASK]".into()));
        }
        if vectors.rows() != v || output.rows() != v || output_bias.len() != v || vectors.cols() != output.cols() || vectors.cols() < 2 {
            return Err(Error::Dimension(format!(
                "vocab {v}, vectors {}x{}, output {}x{}, bias {}",
                vectors.rows(),
                vectors.cols(),
                output.rows(),
                output.cols(),
                output_bias.len()
            )));
        }
        let all = vectors.as_slice().iter().chain(output.as_slice()).chain(&output_bias);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding table".into()));
        }
        let mut index = HashMap::with_capacity(v);
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Dimension(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(EmbeddingTable {
            vocab,
            index,
            vectors,
            output,
            output_bias,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.output_bias
    }

    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens().iter().map(|t| self.lookup(t.as_str())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub tokens: Vec<usize>,
    /// `(position, original id)`, positions strictly increasing.
    pub targets: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub mask_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub context_radius: usize,
    pub rng_seed: u64,
    pub shuffle: bool,
    /// Sequences are truncated to this many tokens.
    pub max_len: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            mask_rate: 0.15,
            epochs: 1,
            learning_rate: 0.1,
            context_radius: 2,
            rng_seed: 0,
            shuffle: true,
            max_len: 64,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::config("mask_rate must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("adapt learning_rate must be positive"));
        }
        if self.context_radius == 0 || self.max_len == 0 {
            return Err(Error::config("context_radius and max_len must be positive"));
        }
        Ok(())
    }
}

/// Selects each position independently with probability `mask_rate`,
/// forcing one uniformly chosen position when none was selected.
pub fn mask_sequence<R: Rng>(tokens: &[usize], config: &AdaptConfig, rng: &mut R) -> MaskedExample {
    assert!(!tokens.is_empty(), "cannot mask an empty sequence");
    let mut picked: Vec<usize> = (0..tokens.len())
        .filter(|_| rng.gen::<f64>() < config.mask_rate)
        .collect();
    if picked.is_empty() {
        picked.push(rng.gen_range(0..tokens.len()));
    }
    let mut masked = tokens.to_vec();
    let targets = picked
        .into_iter()
        .map(|p| {
            masked[p] = MASK;
            (p, tokens[p])
        })
        .collect();
    MaskedExample {
        tokens: masked,
        targets,
    }
}

/// Gradient of [`mlm_loss`], laid out like the table.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmGradient {
    pub vectors: Matrix,
    pub output: Matrix,
    pub output_bias: Vec<f64>,
}

fn context_positions(tokens: &[usize], p: usize, radius: usize) -> impl Iterator<Item = usize> + '_ {
    let lo = p.saturating_sub(radius);
    let hi = (p + radius).min(tokens.len() - 1);
    (lo..=hi).filter(move |&j| j != p && tokens[j] != MASK)
}

fn context_vector(table: &EmbeddingTable, tokens: &[usize], p: usize, radius: usize) -> (Vec<f64>, Vec<usize>) {
    let ctx: Vec<usize> = context_positions(tokens, p, radius).collect();
    let mut c = vec![0.0; table.dim()];
    for &j in &ctx {
        for (a, b) in c.iter_mut().zip(table.vector(tokens[j])) {
            *a += b;
        }
    }
    if !ctx.is_empty() {
        let n = ctx.len() as f64;
        c.iter_mut().for_each(|x| *x /= n);
    }
    (c, ctx)
}

/// Accumulates the gradient of `scale · Σ_targets CE` into `grad` and
/// returns the unscaled summed cross-entropy. `touched` collects the input
/// rows that received gradient.
fn accumulate(
    table: &EmbeddingTable,
    example: &MaskedExample,
    radius: usize,
    scale: f64,
    grad: &mut MlmGradient,
    touched: &mut Vec<usize>,
) -> f64 {
    let v = table.vocab_size();
    let d = table.dim();
    let mut total = 0.0;
    let mut logits = vec![0.0; v];
    for &(p, target) in &example.targets {
        let (c, ctx) = context_vector(table, &example.tokens, p, radius);
        for (w, l) in logits.iter_mut().enumerate() {
            *l = dot(table.output.row(w), &c) + table.output_bias[w];
        }
        let lse = logsumexp(&logits);
        total += lse - logits[target];

        let mut dc = vec![0.0; d];
        for (w, &logit) in logits.iter().enumerate() {
            let mut g = (logit - lse).exp();
            if w == target {
                g -= 1.0;
            }
            g *= scale;
            grad.output_bias[w] += g;
            let out_row = table.output.row(w);
            for ((go, &cx), (dcx, &o)) in grad
                .output
                .row_mut(w)
                .iter_mut()
                .zip(&c)
                .zip(dc.iter_mut().zip(out_row))
            {
                *go += g * cx;
                *dcx += g * o;
            }
        }
        if !ctx.is_empty() {
            let inv = 1.0 / ctx.len() as f64;
            for &j in &ctx {
                let id = example.tokens[j];
                touched.push(id);
                for (ge, &x) in grad.vectors.row_mut(id).iter_mut().zip(&dc) {
                    *ge += x * inv;
                }
            }
        }
    }
    total
}

fn zero_gradient(table: &EmbeddingTable) -> MlmGradient {
    MlmGradient {
        vectors: Matrix::zeros(table.vocab_size(), table.dim()),
        output: Matrix::zeros(table.vocab_size(), table.dim()),
        output_bias: vec![0.0; table.vocab_size()],
    }
}

fn count_targets(batch: &[MaskedExample]) -> usize {
    batch.iter().map(|e| e.targets.len()).sum()
}

/// Mean cross-entropy over all masked targets in `batch`, with its exact gradient.
pub fn mlm_loss(table: &EmbeddingTable, context_radius: usize, batch: &[MaskedExample]) -> (f64, MlmGradient) {
    let n = count_targets(batch);
    assert!(n > 0, "mlm_loss needs at least one masked target");
    let mut grad = zero_gradient(table);
    let mut touched = Vec::new();
    let scale = 1.0 / n as f64;
    let total: f64 = batch
        .iter()
        .map(|ex| accumulate(table, ex, context_radius, scale, &mut grad, &mut touched))
        .sum();
    (total * scale, grad)
}

/// Loss only, without allocating a gradient.
pub fn mlm_eval(table: &EmbeddingTable, context_radius: usize, batch: &[MaskedExample]) -> f64 {
    let n = count_targets(batch);
    if n == 0 {
        return f64::NAN;
    }
    let mut total = 0.0;
    let mut logits = vec![0.0; table.vocab_size()];
    for ex in batch {
        for &(p, target) in &ex.targets {
            let (c, _) = context_vector(table, &ex.tokens, p, context_radius);
            for (w, l) in logits.iter_mut().enumerate() {
                *l = dot(table.output.row(w), &c) + table.output_bias[w];
            }
            total += logsumexp(&logits) - logits[target];
        }
    }
    total / n as f64
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub table: EmbeddingTable,
    /// Mean training loss of each epoch (at the masks drawn during it).
    pub train_losses: Vec<f64>,
    /// Held-out loss before training followed by one entry per epoch;
    /// empty when no held-out corpus was supplied.
    pub heldout_losses: Vec<f64>,
}

const HELDOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn canonical(table: &EmbeddingTable, corpus: &UnlabeledCorpus, max_len: usize) -> Vec<Vec<usize>> {
    let mut seqs: Vec<Vec<usize>> = corpus
        .sentences()
        .iter()
        .map(|s| {
            let mut ids = table.encode(s);
            ids.truncate(max_len);
            ids
        })
        .collect();
    seqs.sort_unstable();
    seqs
}

/// Held-out examples with masks fixed by the config seed, so losses are
/// comparable across epochs and runs.
pub fn heldout_examples(table: &EmbeddingTable, corpus: &UnlabeledCorpus, config: &AdaptConfig) -> Vec<MaskedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ HELDOUT_STREAM);
    canonical(table, corpus, config.max_len)
        .iter()
        .map(|ids| mask_sequence(ids, config, &mut rng))
        .collect()
}

/// Trains a copy of `table` on `corpus` with the MLM objective.
///
/// Sentences are put in a canonical order (sorted by token ids, then
/// shuffled per epoch when `shuffle` is set), so the result does not depend
/// on the order of `corpus`. Each sentence is one AdaGrad step.
pub fn adapt(
    table: &EmbeddingTable,
    corpus: &UnlabeledCorpus,
    heldout: Option<&UnlabeledCorpus>,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::config("adaptation corpus is empty"));
    }
    let mut table = table.clone();
    let seqs = canonical(&table, corpus, config.max_len);
    let held = heldout.map(|h| heldout_examples(&table, h, config));
    let mut heldout_losses = Vec::new();
    if let Some(h) = &held {
        heldout_losses.push(mlm_eval(&table, config.context_radius, h));
    }

    let v = table.vocab_size();
    let d = table.dim();
    let mut opt_vectors = Adagrad::new(v * d, config.learning_rate);
    let mut opt_output = Adagrad::new(v * d, config.learning_rate);
    let mut opt_bias = Adagrad::new(v, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut grad = zero_gradient(&table);
    let mut touched = Vec::new();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut train_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        let (mut total, mut count) = (0.0, 0usize);
        for &i in &order {
            let ex = mask_sequence(&seqs[i], config, &mut rng);
            let n = ex.targets.len();
            touched.clear();
            let loss = accumulate(&table, &ex, config.context_radius, 1.0 / n as f64, &mut grad, &mut touched);
            if !loss.is_finite() {
                return Err(Error::TrainingAborted {
                    iteration: None,
                    message: format!("non-finite MLM loss in epoch {epoch}"),
                });
            }
            total += loss;
            count += n;

            let params = table.output.as_mut_slice();
            for (j, g) in grad.output.as_mut_slice().iter_mut().enumerate() {
                opt_output.update(params, j, *g);
                *g = 0.0;
            }
            for (j, g) in grad.output_bias.iter_mut().enumerate() {
                opt_bias.update(&mut table.output_bias, j, *g);
                *g = 0.0;
            }
            touched.sort_unstable();
            touched.dedup();
            for &row in &touched {
                for j in row * d..(row + 1) * d {
                    let g = std::mem::take(&mut grad.vectors.as_mut_slice()[j]);
                    opt_vectors.update(table.vectors.as_mut_slice(), j, g);
                }
            }
        }
        train_losses.push(total / count.max(1) as f64);
        if let Some(h) = &held {
            let l = mlm_eval(&table, config.context_radius, h);
            if !l.is_finite() {
                return Err(Error::TrainingAborted {
                    iteration: None,
                    message: format!("non-finite held-out MLM loss after epoch {epoch}"),
                });
            }
            heldout_losses.push(l);
        }
    }
    Ok(AdaptOutcome {
        table,
        train_losses,
        heldout_losses,
    })
}
