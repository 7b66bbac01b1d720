//! Shared fixtures for the benchmarks.

use bootner::corpus::{generate_synthetic, SyntheticSpec};
use bootner::crf::{train, Init, TrainConfig};
use bootner::{CrfModel, LabeledDataset, ScorerKind};

/// Synthetic corpus with `types` entity types (K = 2 * types + 1 tags).
pub fn corpus(sentences: usize, types: usize, seed: u64) -> LabeledDataset {
    let names: Vec<String> = (0..types).map(|t| format!("T{t}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut spec = SyntheticSpec::new(2000, &names, sentences, seed);
    spec.sentence_length_range = (20, 40);
    generate_synthetic(&spec).expect("valid spec")
}

/// A linear-scorer model trained briefly on `data`.
pub fn model(data: &LabeledDataset) -> CrfModel {
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    train(data, &cfg, Init::Fresh(ScorerKind::Linear { hash_bits: 18 }))
        .expect("training succeeds")
        .model
}
