use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bootner::artifact::{self, ModelArtifact};
use bootner::bootstrap::{
    bootstrap_run, evaluate, reported_scores, sweep_theta, BootstrapConfig, EarlyStop, EvalSets, Retrain,
};
use bootner::corpus::{
    generate_synthetic, read_conll, read_conll_tokens, read_raw, split_seed_labeled, strip_labels, write_conll,
    write_raw, ConllOptions, Separator, SyntheticSpec,
};
use bootner::crf::{default_epochs, predict_all, train, ConfidenceMode, Init, TrainConfig};
use bootner::mlm::{adapt, AdaptConfig};
use bootner::{micro_prf, report, CrfModel, EmbeddingTable, LabeledDataset, ScorerKind, Scores, TagSet, UnlabeledCorpus};

use crate::config::RunConfig;
use crate::error::{CliError, Context};

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// The named file, or stdout when the key is unset.
fn sink(cfg: &RunConfig, key: &str) -> Result<Box<dyn Write>> {
    Ok(match cfg.opt_output(key) {
        Some(p) => Box::new(create(&p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn separator(cfg: &RunConfig) -> Result<Separator> {
    Ok(match cfg.choice("separator", &["tab", "space"])?.as_str() {
        "tab" => Separator::Tab,
        _ => Separator::Space,
    })
}

fn tagset(cfg: &RunConfig) -> Result<Option<TagSet>> {
    let types: Vec<String> = cfg.list("types")?;
    if types.is_empty() {
        return Ok(None);
    }
    Ok(Some(TagSet::new(types)?))
}

fn read_labeled(cfg: &RunConfig, path: &Path) -> Result<LabeledDataset> {
    let options = ConllOptions {
        separator: separator(cfg)?,
        tagset: tagset(cfg)?,
    };
    read_conll(open(path)?, &options).at(path)
}

fn labeled(cfg: &RunConfig, key: &str) -> Result<LabeledDataset> {
    read_labeled(cfg, &cfg.input(key)?)
}

fn opt_labeled(cfg: &RunConfig, key: &str) -> Result<Option<LabeledDataset>> {
    cfg.opt_input(key)?.map(|p| read_labeled(cfg, &p)).transpose()
}

fn sentences(cfg: &RunConfig, key: &str, format_key: &str) -> Result<UnlabeledCorpus> {
    let path = cfg.input(key)?;
    let corpus = match cfg.choice(format_key, &["raw", "conll"])?.as_str() {
        "raw" => read_raw(open(&path)?),
        _ => read_conll_tokens(open(&path)?, separator(cfg)?),
    };
    corpus.at(&path)
}

fn raw_corpus(path: &Path) -> Result<UnlabeledCorpus> {
    read_raw(open(path)?).at(path)
}

fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let a = artifact::load(path).at(path)?;
    a.table
        .ok_or_else(|| CliError::Data(format!("{}: file holds no embedding table", path.display())))
}

fn load_model(path: &Path) -> Result<CrfModel> {
    let a = artifact::load(path).at(path)?;
    a.model
        .ok_or_else(|| CliError::Data(format!("{}: file holds no tagging model", path.display())))
}

fn metadata(cfg: &RunConfig, command: &str) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("command".to_string(), command.to_string());
    m.insert("config_hash".to_string(), cfg.hash());
    for key in ["split_seed", "train_seed", "adapt_seed", "init_seed", "synth_seed"] {
        if let Some(v) = cfg.raw(key) {
            m.insert(key.to_string(), v.to_string());
        }
    }
    m
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let epochs = match cfg.raw("epochs") {
        Some("auto") | None => default_epochs(cfg.get("seed_ratio")?),
        Some(_) => cfg.get("epochs")?,
    };
    let tc = TrainConfig {
        epochs,
        learning_rate: cfg.get("learning_rate")?,
        l2: cfg.get("l2")?,
        rng_seed: cfg.get("train_seed")?,
        shuffle: cfg.get("shuffle")?,
    };
    tc.validate()?;
    Ok(tc)
}

fn scorer(cfg: &RunConfig) -> Result<ScorerKind> {
    Ok(match cfg.choice("scorer", &["linear", "embedding"])?.as_str() {
        "linear" => ScorerKind::Linear {
            hash_bits: cfg.get("hash_bits")?,
        },
        _ => ScorerKind::Embedding {
            table: Arc::new(load_table(&cfg.input("embeddings")?)?),
            radius: cfg.get("radius")?,
        },
    })
}

fn bootstrap_config(cfg: &RunConfig) -> Result<BootstrapConfig> {
    let bc = BootstrapConfig {
        theta: cfg.get("theta")?,
        max_iterations: cfg.get("iterations")?,
        train: train_config(cfg)?,
        confidence_mode: match cfg.choice("confidence", &["softmax", "marginal"])?.as_str() {
            "softmax" => ConfidenceMode::Softmax,
            _ => ConfidenceMode::Marginal,
        },
        retrain_from: match cfg.choice("retrain", &["scratch", "previous"])?.as_str() {
            "scratch" => Retrain::Scratch,
            _ => Retrain::Previous,
        },
        early_stop: cfg
            .opt::<usize>("patience")?
            .map(|patience| -> Result<EarlyStop> {
                Ok(EarlyStop {
                    patience,
                    min_delta: cfg.get("min_delta")?,
                })
            })
            .transpose()?,
        threads: cfg.get("threads")?,
    };
    bc.validate()?;
    Ok(bc)
}

fn adapt_config(cfg: &RunConfig) -> Result<AdaptConfig> {
    let ac = AdaptConfig {
        mask_rate: cfg.get("mask_rate")?,
        epochs: cfg.get("adapt_epochs")?,
        learning_rate: cfg.get("adapt_learning_rate")?,
        context_radius: cfg.get("context_radius")?,
        rng_seed: cfg.get("adapt_seed")?,
        shuffle: cfg.get("shuffle")?,
        max_len: cfg.get("max_len")?,
    };
    ac.validate()?;
    Ok(ac)
}

fn print_scores(label: &str, s: &Scores) {
    println!(
        "{label}: P={:.4} R={:.4} F1={:.4} (tp {}, fp {}, fn {})",
        s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_
    );
}

fn save(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    artifact::save(artifact, path).at(path)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let types: Vec<String> = cfg.list("types")?;
    let types: Vec<&str> = if types.is_empty() {
        vec!["CHEM", "DIS"]
    } else {
        types.iter().map(String::as_str).collect()
    };
    let mut spec = SyntheticSpec::new(cfg.get("vocab_size")?, &types, cfg.get("num_sentences")?, cfg.get("synth_seed")?);
    spec.entity_rate = cfg.get("entity_rate")?;
    spec.trigger_rate = cfg.get("trigger_rate")?;
    spec.ambiguity = cfg.get("ambiguity")?;
    spec.domain = cfg.get("domain")?;
    spec.sentence_length_range = (cfg.get("min_sentence")?, cfg.get("max_sentence")?);
    let data = generate_synthetic(&spec)?;
    write_conll(&data, sink(cfg, "output")?, separator(cfg)?)?;
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<()> {
    let data = labeled(cfg, "train")?;
    let (seed, rest) = split_seed_labeled(&data, cfg.get("seed_ratio")?, cfg.get("split_seed")?)?;
    let sep = separator(cfg)?;
    let seed_path = cfg.output("seed_out")?;
    let rest_path = cfg.output("rest_out")?;
    let rest_format = cfg.choice("rest_format", &["raw", "conll"])?;
    write_conll(&seed, create(&seed_path)?, sep).at(&seed_path)?;
    if rest_format == "raw" {
        write_raw(&strip_labels(&rest), create(&rest_path)?).at(&rest_path)?;
    } else {
        write_conll(&rest, create(&rest_path)?, sep).at(&rest_path)?;
    }
    eprintln!("seed {} sentences, remainder {}", seed.len(), rest.len());
    Ok(())
}

fn report_eval(cfg: &RunConfig, model: &CrfModel) -> Result<()> {
    for key in ["dev", "test"] {
        if let Some(data) = opt_labeled(cfg, key)? {
            let s = evaluate(model, &data)?;
            print_scores(key, &s);
            if key == "test" || cfg.raw("test").is_none() {
                if let Some(p) = cfg.opt_output("scores_report") {
                    report::write_scores(&s, create(&p)?).at(&p)?;
                }
            }
        }
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let data = labeled(cfg, "train")?;
    let model_path = cfg.output("model")?;
    let tc = train_config(cfg)?;
    let run = train(&data, &tc, Init::Fresh(scorer(cfg)?))?;
    eprintln!(
        "trained {} epochs on {} sentences, final loss {:.6}",
        tc.epochs,
        data.len(),
        run.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    report_eval(cfg, &run.model)?;
    save(&ModelArtifact::from_model(run.model, metadata(cfg, "train")), &model_path)
}

pub fn adapt_cmd(cfg: &RunConfig) -> Result<()> {
    let corpus = raw_corpus(&cfg.input("corpus")?)?;
    let heldout = cfg.opt_input("heldout")?.map(|p| raw_corpus(&p)).transpose()?;
    let out_path = cfg.output("adapted")?;
    let ac = adapt_config(cfg)?;
    let table = match cfg.opt_input("embeddings")? {
        Some(p) => load_table(&p)?,
        None => {
            let words: BTreeSet<&str> = corpus
                .sentences()
                .iter()
                .flat_map(|s| s.tokens().iter().map(|t| t.as_str()))
                .collect();
            EmbeddingTable::random(words, cfg.get("dim")?, cfg.get("init_seed")?)?
        }
    };
    let out = adapt(&table, &corpus, heldout.as_ref(), &ac)?;
    if let (Some(first), Some(last)) = (out.heldout_losses.first(), out.heldout_losses.last()) {
        eprintln!("held-out MLM loss {first:.4} -> {last:.4}");
    }
    if let Some(p) = cfg.opt_output("adapt_report") {
        let mut w = create(&p)?;
        let io = (|| -> io::Result<()> {
            writeln!(w, "epoch\ttrain_loss\theldout_loss")?;
            for e in 0..=out.train_losses.len() {
                let train = if e == 0 { String::new() } else { format!("{:.6}", out.train_losses[e - 1]) };
                let held = out.heldout_losses.get(e).map(|h| format!("{h:.6}")).unwrap_or_default();
                writeln!(w, "{e}\t{train}\t{held}")?;
            }
            w.flush()
        })();
        io.map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    save(&ModelArtifact::from_table(out.table, metadata(cfg, "adapt")), &out_path)
}

pub fn bootstrap(cfg: &RunConfig) -> Result<()> {
    let seed = labeled(cfg, "train")?;
    let corpus = sentences(cfg, "unlabeled", "unlabeled_format")?;
    let dev = opt_labeled(cfg, "dev")?;
    let test = opt_labeled(cfg, "test")?;
    let model_path = cfg.output("model")?;
    let history_path = cfg.opt_output("history");
    let bc = bootstrap_config(cfg)?;
    let out = bootstrap_run(
        &seed,
        &corpus,
        &scorer(cfg)?,
        &bc,
        &EvalSets {
            dev: dev.as_ref(),
            test: test.as_ref(),
        },
    )?;
    for r in &out.history {
        match r.scores() {
            Some(s) => eprintln!("iteration {}: F1 {:.4}, weak non-O {}", r.index, s.f1, r.weak_non_o_count),
            None => eprintln!("iteration {}: weak non-O {}", r.index, r.weak_non_o_count),
        }
    }
    if out.stopped_early {
        eprintln!("stopped early after {} rounds", out.history.len() - 1);
    }
    if let Some(s) = reported_scores(&out.history) {
        print_scores("reported (mean of last iterations)", &s);
    }
    if let Some(p) = history_path {
        report::write_history(&out.history, create(&p)?).at(&p)?;
    }
    save(&ModelArtifact::from_model(out.model, metadata(cfg, "bootstrap")), &model_path)
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let model = load_model(&cfg.input("model")?)?;
    let corpus = sentences(cfg, "input", "input_format")?;
    let preds = predict_all(&model, corpus.sentences(), ConfidenceMode::Softmax, cfg.get("threads")?)?;
    let items = corpus
        .sentences()
        .iter()
        .cloned()
        .zip(preds.into_iter().map(|(tags, _)| tags))
        .collect();
    let data = LabeledDataset::new(model.tagset().clone(), items)?;
    write_conll(&data, sink(cfg, "output")?, separator(cfg)?)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, gold: &Path, pred: &Path) -> Result<()> {
    let (gold_data, pred_data) = (read_labeled(cfg, gold)?, read_labeled(cfg, pred)?);
    if gold_data.len() != pred_data.len() {
        return Err(CliError::Data(format!(
            "{} has {} sentences but {} has {}",
            gold.display(),
            gold_data.len(),
            pred.display(),
            pred_data.len()
        )));
    }
    for (i, (g, p)) in gold_data.sentences().zip(pred_data.sentences()).enumerate() {
        if g != p {
            return Err(CliError::Data(format!("sentence {} differs between the two files", i + 1)));
        }
    }
    let ts = gold_data.tagset().union(pred_data.tagset());
    let g: Vec<_> = gold_data.remap(&ts)?.tags().cloned().collect();
    let p: Vec<_> = pred_data.remap(&ts)?.tags().cloned().collect();
    let s = micro_prf(&g, &p, &ts)?;
    print_scores("span micro", &s);
    if let Some(path) = cfg.opt_output("scores_report") {
        report::write_scores(&s, create(&path)?).at(&path)?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let seed = labeled(cfg, "train")?;
    let corpus = sentences(cfg, "unlabeled", "unlabeled_format")?;
    let dev = labeled(cfg, "dev")?;
    let thetas: Vec<f64> = cfg.list("thetas")?;
    let bc = bootstrap_config(cfg)?;
    let points = sweep_theta(&seed, &corpus, &dev, &thetas, &scorer(cfg)?, &bc)?;
    for p in &points {
        println!("theta {:.2}: dev F1 {:.4}, weak non-O {}", p.theta, p.dev.f1, p.final_weak_non_o);
    }
    if let Some(path) = cfg.opt_output("sweep_report") {
        report::write_sweep(&points, create(&path)?).at(&path)?;
    }
    Ok(())
}

/// Paths named by eval's positional arguments, falling back to nothing.
pub fn eval_paths(gold: Option<PathBuf>, pred: Option<PathBuf>) -> Result<(PathBuf, PathBuf)> {
    let check = |p: Option<PathBuf>, what: &str| {
        let p = p.ok_or_else(|| CliError::Usage(format!("eval needs a {what} file")))?;
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Data(format!("{}: no such file", p.display())))
        }
    };
    Ok((check(gold, "gold")?, check(pred, "predicted")?))
}
