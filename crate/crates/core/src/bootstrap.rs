//! Iterative self-training with confidence-thresholded weak labels.
//!
//! `M_0` is trained on the seed set. Round `i` tags the whole unlabeled
//! corpus with `M_{i-1}`, resets every tag whose confidence is below `theta`
//! to `O`, and trains `M_i` on the seed set plus those weak labels. Seed
//! sentences always keep their gold tags.

use sha2::{Digest, Sha256};

use crate::corpus::{Examples, LabeledDataset, UnlabeledCorpus, WeakDataset};
use crate::crf::{predict_all, train, ConfidenceMode, CrfModel, Init, TrainConfig};
use crate::emissions::ScorerKind;
use crate::error::{Error, Result};
use crate::metrics::{average_last, micro_prf, Scores};
use crate::tagscheme::{repair, TagSequence, TagSet, OUTSIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retrain {
    #[default]
    Scratch,
    Previous,
}

/// Stop when dev F1 has not improved by more than `min_delta` for `patience` rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            patience: 3,
            min_delta: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub theta: f64,
    pub max_iterations: usize,
    pub train: TrainConfig,
    pub confidence_mode: ConfidenceMode,
    pub retrain_from: Retrain,
    /// Only consulted when a dev set is supplied.
    pub early_stop: Option<EarlyStop>,
    /// Worker threads for tagging the unlabeled corpus.
    pub threads: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            theta: 0.7,
            max_iterations: 10,
            train: TrainConfig::default(),
            confidence_mode: ConfidenceMode::Softmax,
            retrain_from: Retrain::Scratch,
            early_stop: None,
            threads: 1,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::config(format!("theta {} outside [0, 1]", self.theta)));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        self.train.validate()
    }
}

/// Evaluation data for the per-iteration records.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalSets<'a> {
    pub dev: Option<&'a LabeledDataset>,
    pub test: Option<&'a LabeledDataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 0 is the seed-only model.
    pub index: usize,
    pub dev: Option<Scores>,
    pub test: Option<Scores>,
    pub weak_non_o_count: usize,
    pub training_size: usize,
    pub model_ref: String,
}

impl IterationRecord {
    /// Test scores when available, dev otherwise.
    pub fn scores(&self) -> Option<Scores> {
        self.test.or(self.dev)
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub model: CrfModel,
    pub history: Vec<IterationRecord>,
    pub stopped_early: bool,
}

/// Sets positions with `conf < theta` to `O`, then repairs orphaned `I-` tags.
pub fn relabel(tags: &TagSequence, conf: &[f64], theta: f64, tagset: &TagSet) -> TagSequence {
    assert_eq!(tags.len(), conf.len(), "one confidence per tag");
    let out = tags
        .as_slice()
        .iter()
        .zip(conf)
        .map(|(&t, &c)| if c < theta { OUTSIDE } else { t })
        .collect();
    repair(&TagSequence(out), tagset)
}

/// Short content hash of the model parameters.
pub fn model_fingerprint(model: &CrfModel) -> String {
    let mut h = Sha256::new();
    for w in model.scorer().weights().iter().chain(model.transitions().matrix().as_slice()) {
        h.update(w.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn evaluate(model: &CrfModel, data: &LabeledDataset) -> Result<Scores> {
    let data = if data.tagset() == model.tagset() {
        std::borrow::Cow::Borrowed(data)
    } else {
        std::borrow::Cow::Owned(data.remap(model.tagset())?)
    };
    let mut pred = Vec::with_capacity(data.len());
    for s in data.sentences() {
        pred.push(model.decode(s)?);
    }
    let gold: Vec<TagSequence> = data.tags().cloned().collect();
    micro_prf(&gold, &pred, model.tagset())
}

fn record(index: usize, model: &CrfModel, training_size: usize, weak: usize, eval: &EvalSets<'_>) -> Result<IterationRecord> {
    Ok(IterationRecord {
        index,
        dev: eval.dev.map(|d| evaluate(model, d)).transpose()?,
        test: eval.test.map(|d| evaluate(model, d)).transpose()?,
        weak_non_o_count: weak,
        training_size,
        model_ref: format!("M{index}:{}", model_fingerprint(model)),
    })
}

fn at_iteration(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::TrainingAborted { message, .. } => Error::TrainingAborted {
            iteration: Some(iteration),
            message,
        },
        other => other,
    }
}

/// Weak-labels `corpus` with `model` and joins it to `seed`.
pub fn weak_dataset(
    seed: &LabeledDataset,
    corpus: &UnlabeledCorpus,
    model: &CrfModel,
    theta: f64,
    mode: ConfidenceMode,
    threads: usize,
) -> Result<WeakDataset> {
    let mut weak = WeakDataset::from_seed(seed);
    let preds = predict_all(model, corpus.sentences(), mode, threads)?;
    for (sentence, (tags, conf)) in corpus.sentences().iter().zip(preds) {
        weak.push_weak(sentence.clone(), relabel(&tags, &conf, theta, seed.tagset()))?;
    }
    Ok(weak)
}

pub fn weak_non_o(weak: &WeakDataset) -> usize {
    weak.items()
        .iter()
        .filter(|i| i.provenance == crate::corpus::Provenance::Weak)
        .map(|i| i.tags.non_outside())
        .sum()
}

pub fn bootstrap_run(
    seed: &LabeledDataset,
    corpus: &UnlabeledCorpus,
    scorer: &ScorerKind,
    config: &BootstrapConfig,
    eval: &EvalSets<'_>,
) -> Result<BootstrapOutcome> {
    config.validate()?;
    if seed.is_empty() {
        return Err(Error::config("seed dataset is empty"));
    }
    let mut model = train(seed, &config.train, Init::Fresh(scorer.clone()))
        .map_err(at_iteration(0))?
        .model;
    let mut history = vec![record(0, &model, seed.len(), 0, eval)?];
    let early = config.early_stop.filter(|_| eval.dev.is_some());
    let mut best_dev = history[0].dev.map_or(f64::NEG_INFINITY, |s| s.f1);
    let mut stale = 0;
    let mut stopped_early = false;

    for i in 1..=config.max_iterations {
        let weak = weak_dataset(seed, corpus, &model, config.theta, config.confidence_mode, config.threads)?;
        debug_assert_eq!(weak.len(), seed.len() + corpus.len());
        let init = match config.retrain_from {
            Retrain::Scratch => Init::Fresh(scorer.clone()),
            Retrain::Previous => Init::Warm(&model),
        };
        let next = train(&weak, &config.train, init).map_err(at_iteration(i))?.model;
        history.push(record(i, &next, weak.examples().len(), weak_non_o(&weak), eval)?);
        model = next;

        if let (Some(rule), Some(dev)) = (early, history[i].dev) {
            if dev.f1 > best_dev + rule.min_delta {
                best_dev = dev.f1;
                stale = 0;
            } else {
                stale += 1;
                if stale >= rule.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(BootstrapOutcome {
        model,
        history,
        stopped_early,
    })
}

/// Number of trailing iterations averaged for the reported result.
pub const REPORT_LAST: usize = 5;

/// Mean of the last [`REPORT_LAST`] records' primary scores.
pub fn reported_scores(history: &[IterationRecord]) -> Option<Scores> {
    let scores: Vec<Scores> = history.iter().filter_map(IterationRecord::scores).collect();
    (!scores.is_empty()).then(|| average_last(&scores, REPORT_LAST))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub theta: f64,
    /// Dev scores averaged over the last iterations of the run.
    pub dev: Scores,
    pub final_weak_non_o: usize,
}

/// One bootstrap run per threshold, all sharing the same seeds.
pub fn sweep_theta(
    seed: &LabeledDataset,
    corpus: &UnlabeledCorpus,
    dev: &LabeledDataset,
    thetas: &[f64],
    scorer: &ScorerKind,
    config: &BootstrapConfig,
) -> Result<Vec<ThetaPoint>> {
    if thetas.is_empty() {
        return Err(Error::config("no thresholds to sweep"));
    }
    thetas
        .iter()
        .map(|&theta| {
            let cfg = BootstrapConfig {
                theta,
                ..config.clone()
            };
            let out = bootstrap_run(
                seed,
                corpus,
                scorer,
                &cfg,
                &EvalSets {
                    dev: Some(dev),
                    test: None,
                },
            )?;
            let devs: Vec<Scores> = out.history.iter().filter_map(|r| r.dev).collect();
            Ok(ThetaPoint {
                theta,
                dev: average_last(&devs, REPORT_LAST),
                final_weak_non_o: out.history.last().map_or(0, |r| r.weak_non_o_count),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_seed, SyntheticSpec};

    fn ts() -> TagSet {
        TagSet::new(["PER"]).unwrap()
    }

    #[test]
    fn relabel_examples() {
        let ts = ts();
        let tags = TagSequence(vec![1, 2]);
        assert_eq!(relabel(&tags, &[0.9, 0.4], 0.5, &ts), TagSequence(vec![1, 0]));
        assert_eq!(relabel(&tags, &[0.9, 0.4], 0.0, &ts), tags);
        assert_eq!(relabel(&tags, &[0.99, 0.4], 1.0, &ts), TagSequence(vec![0, 0]));
        // Dropping the B leaves an I that becomes a B.
        assert_eq!(relabel(&tags, &[0.2, 0.9], 0.5, &ts), TagSequence(vec![0, 1]));
    }

    #[test]
    fn config_validation() {
        let mut c = BootstrapConfig {
            theta: 1.01,
            ..BootstrapConfig::default()
        };
        assert!(c.validate().is_err());
        c.theta = 1.0;
        assert!(c.validate().is_ok());
        c.max_iterations = 0;
        assert!(c.validate().is_err());
    }

    fn small_setup() -> (LabeledDataset, UnlabeledCorpus, LabeledDataset) {
        let data = generate_synthetic(&SyntheticSpec::new(60, &["A", "B"], 60, 4)).unwrap();
        let (train, test) = data.split_at(40);
        let (seed, rest) = split_seed(&train, 0.25, 1).unwrap();
        (seed, rest, test)
    }

    fn quick() -> BootstrapConfig {
        BootstrapConfig {
            max_iterations: 2,
            train: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            ..BootstrapConfig::default()
        }
    }

    #[test]
    fn loop_contract() {
        let (seed, rest, test) = small_setup();
        let kind = ScorerKind::Linear { hash_bits: 12 };
        let cfg = BootstrapConfig {
            max_iterations: 1,
            ..quick()
        };
        let eval = EvalSets {
            dev: None,
            test: Some(&test),
        };
        let out = bootstrap_run(&seed, &rest, &kind, &cfg, &eval).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[1].training_size, seed.len() + rest.len());

        let m0 = train(&seed, &cfg.train, Init::Fresh(kind.clone())).unwrap().model;
        assert_eq!(out.history[0].model_ref, format!("M0:{}", model_fingerprint(&m0)));
        assert_eq!(out.history[0].test, Some(evaluate(&m0, &test).unwrap()));
    }

    #[test]
    fn empty_corpus_keeps_seed_model() {
        let (seed, _, test) = small_setup();
        let kind = ScorerKind::Linear { hash_bits: 12 };
        let eval = EvalSets {
            dev: None,
            test: Some(&test),
        };
        let out = bootstrap_run(&seed, &UnlabeledCorpus::default(), &kind, &quick(), &eval).unwrap();
        let f1: Vec<f64> = out.history.iter().map(|r| r.test.unwrap().f1).collect();
        assert!(f1.windows(2).all(|w| w[0] == w[1]));
        let fp: Vec<&str> = out.history.iter().map(|r| r.model_ref.split(':').nth(1).unwrap()).collect();
        assert!(fp.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn early_stop_needs_dev() {
        let (seed, rest, test) = small_setup();
        let kind = ScorerKind::Linear { hash_bits: 12 };
        let cfg = BootstrapConfig {
            max_iterations: 6,
            early_stop: Some(EarlyStop {
                patience: 1,
                min_delta: 1.0,
            }),
            ..quick()
        };
        let no_dev = bootstrap_run(&seed, &rest, &kind, &cfg, &EvalSets { dev: None, test: Some(&test) }).unwrap();
        assert_eq!(no_dev.history.len(), 7);
        assert!(!no_dev.stopped_early);
        let with_dev = bootstrap_run(&seed, &rest, &kind, &cfg, &EvalSets { dev: Some(&test), test: None }).unwrap();
        assert_eq!(with_dev.history.len(), 2);
        assert!(with_dev.stopped_early);
    }

    #[test]
    fn warm_start_runs() {
        let (seed, rest, test) = small_setup();
        let kind = ScorerKind::Linear { hash_bits: 12 };
        let cfg = BootstrapConfig {
            retrain_from: Retrain::Previous,
            ..quick()
        };
        let out = bootstrap_run(&seed, &rest, &kind, &cfg, &EvalSets { dev: Some(&test), test: None }).unwrap();
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn sweep_is_deterministic() {
        let (seed, rest, dev) = small_setup();
        let kind = ScorerKind::Linear { hash_bits: 12 };
        let a = sweep_theta(&seed, &rest, &dev, &[0.0], &kind, &quick()).unwrap();
        let b = sweep_theta(&seed, &rest, &dev, &[0.0], &kind, &quick()).unwrap();
        assert_eq!(a, b);
        assert!(sweep_theta(&seed, &rest, &dev, &[], &kind, &quick()).is_err());
    }
}
