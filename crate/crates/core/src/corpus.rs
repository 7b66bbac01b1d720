//! Sentence corpora: CoNLL and raw-text IO, seed splitting and the
//! synthetic fixture generator.

use std::fmt;
use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tagscheme::{parse_bio, Tag, TagSequence, TagSet};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(Error::config(format!("invalid token surface {surface:?}")));
        }
        Ok(Token(surface))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence {
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::config("sentence must contain at least one token"));
        }
        Ok(Sentence { tokens })
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let tokens = words
            .iter()
            .map(|w| Token::new(w.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Sentence::new(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn word(&self, i: usize) -> &str {
        self.tokens[i].as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    tagset: TagSet,
    items: Vec<(Sentence, TagSequence)>,
}

impl LabeledDataset {
    pub fn new(tagset: TagSet, items: Vec<(Sentence, TagSequence)>) -> Result<Self> {
        for (i, (s, t)) in items.iter().enumerate() {
            if s.len() != t.len() {
                return Err(Error::LengthMismatch(format!(
                    "item {i}: {} tokens but {} tags",
                    s.len(),
                    t.len()
                )));
            }
            t.check(&tagset)?;
        }
        Ok(LabeledDataset { tagset, items })
    }

    pub fn empty(tagset: TagSet) -> Self {
        LabeledDataset {
            tagset,
            items: Vec::new(),
        }
    }

    pub fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    pub fn items(&self) -> &[(Sentence, TagSequence)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.items.iter().map(|(s, _)| s)
    }

    pub fn tags(&self) -> impl Iterator<Item = &TagSequence> {
        self.items.iter().map(|(_, t)| t)
    }

    /// Re-expresses all tags against `target`, which must contain every type in use.
    pub fn remap(&self, target: &TagSet) -> Result<LabeledDataset> {
        let mut table = Vec::with_capacity(self.tagset.len());
        for k in 0..self.tagset.len() {
            table.push(target.parse_tag(&self.tagset.tag_name(k))?);
        }
        let items = self
            .items
            .iter()
            .map(|(s, t)| (s.clone(), TagSequence(t.0.iter().map(|&k| table[k]).collect())))
            .collect();
        Ok(LabeledDataset {
            tagset: target.clone(),
            items,
        })
    }

    pub fn split_at(&self, mid: usize) -> (LabeledDataset, LabeledDataset) {
        let mid = mid.min(self.len());
        (
            LabeledDataset::new(self.tagset.clone(), self.items[..mid].to_vec()).unwrap(),
            LabeledDataset::new(self.tagset.clone(), self.items[mid..].to_vec()).unwrap(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnlabeledCorpus {
    sentences: Vec<Sentence>,
}

impl UnlabeledCorpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        UnlabeledCorpus { sentences }
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Seed,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakItem {
    pub sentence: Sentence,
    pub tags: TagSequence,
    pub provenance: Provenance,
}

/// Seed data plus model-labeled sentences, as assembled for one bootstrap round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakDataset {
    tagset: TagSet,
    items: Vec<WeakItem>,
}

impl WeakDataset {
    pub fn from_seed(seed: &LabeledDataset) -> Self {
        let items = seed
            .items()
            .iter()
            .map(|(s, t)| WeakItem {
                sentence: s.clone(),
                tags: t.clone(),
                provenance: Provenance::Seed,
            })
            .collect();
        WeakDataset {
            tagset: seed.tagset().clone(),
            items,
        }
    }

    pub fn push_weak(&mut self, sentence: Sentence, tags: TagSequence) -> Result<()> {
        if sentence.len() != tags.len() {
            return Err(Error::LengthMismatch(format!(
                "weak item: {} tokens but {} tags",
                sentence.len(),
                tags.len()
            )));
        }
        tags.check(&self.tagset)?;
        self.items.push(WeakItem {
            sentence,
            tags,
            provenance: Provenance::Weak,
        });
        Ok(())
    }

    pub fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    pub fn items(&self) -> &[WeakItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.items.iter().filter(|i| i.provenance == provenance).count()
    }
}

/// Anything the CRF trainer can consume.
pub trait Examples {
    fn tagset(&self) -> &TagSet;
    fn examples(&self) -> Vec<(&Sentence, &TagSequence)>;
}

impl Examples for LabeledDataset {
    fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    fn examples(&self) -> Vec<(&Sentence, &TagSequence)> {
        self.items.iter().map(|(s, t)| (s, t)).collect()
    }
}

impl Examples for WeakDataset {
    fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    fn examples(&self) -> Vec<(&Sentence, &TagSequence)> {
        self.items.iter().map(|i| (&i.sentence, &i.tags)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Separator {
    #[default]
    Tab,
    Space,
}

impl Separator {
    fn as_char(self) -> char {
        match self {
            Separator::Tab => '\t',
            Separator::Space => ' ',
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConllOptions {
    pub separator: Separator,
    /// When set, every tag must belong to this set; otherwise the set is
    /// inferred from the file with types sorted by name.
    pub tagset: Option<TagSet>,
}

fn is_docstart(line: &str, sep: char) -> bool {
    line.split(sep).next() == Some("-DOCSTART-")
}

/// Reads two-column CoNLL (`token<TAB>tag`, blank line between sentences).
pub fn read_conll<R: BufRead>(reader: R, options: &ConllOptions) -> Result<LabeledDataset> {
    let sep = options.separator.as_char();
    let mut raw: Vec<Vec<(Token, String)>> = Vec::new();
    let mut current: Vec<(Token, String)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            if !current.is_empty() {
                raw.push(std::mem::take(&mut current));
            }
            continue;
        }
        if is_docstart(line, sep) {
            continue;
        }
        let cols: Vec<&str> = line.split(sep).collect();
        if cols.len() != 2 {
            return Err(Error::Conll {
                line: lineno,
                message: format!("expected 2 columns, found {}", cols.len()),
            });
        }
        let token = Token::new(cols[0]).map_err(|_| Error::Conll {
            line: lineno,
            message: format!("invalid token {:?}", cols[0]),
        })?;
        let tag_ok = match &options.tagset {
            Some(ts) => ts.parse_tag(cols[1]).is_ok(),
            None => parse_bio(cols[1]).is_some(),
        };
        if !tag_ok {
            return Err(Error::Conll {
                line: lineno,
                message: format!("tag {:?} is not in the BIO alphabet", cols[1]),
            });
        }
        current.push((token, cols[1].to_string()));
    }
    if !current.is_empty() {
        raw.push(current);
    }

    let tagset = match &options.tagset {
        Some(ts) => ts.clone(),
        None => {
            let mut types: Vec<&str> = raw
                .iter()
                .flatten()
                .filter_map(|(_, tag)| match parse_bio(tag) {
                    Some(Tag::Entity(_, ty)) => Some(ty),
                    _ => None,
                })
                .collect();
            types.sort_unstable();
            types.dedup();
            TagSet::new(types)?
        }
    };
    let items = raw
        .into_iter()
        .map(|rows| {
            let tags = rows
                .iter()
                .map(|(_, t)| tagset.parse_tag(t))
                .collect::<Result<Vec<_>>>()?;
            let tokens = rows.into_iter().map(|(tok, _)| tok).collect();
            Ok((Sentence::new(tokens)?, TagSequence(tags)))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(tagset, items)
}

/// Writes the canonical form: every sentence, including the last, is
/// followed by one blank line.
pub fn write_conll<W: Write>(data: &LabeledDataset, mut writer: W, separator: Separator) -> Result<()> {
    let sep = separator.as_char();
    for (sentence, tags) in data.items() {
        for (tok, &t) in sentence.tokens().iter().zip(tags.as_slice()) {
            writeln!(writer, "{tok}{sep}{}", data.tagset().tag_name(t))?;
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads token-only CoNLL: the first column of each line is the token,
/// any further columns are ignored.
pub fn read_conll_tokens<R: BufRead>(reader: R, separator: Separator) -> Result<UnlabeledCorpus> {
    let sep = separator.as_char();
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(Sentence::new(std::mem::take(&mut current))?);
            }
            continue;
        }
        if is_docstart(line, sep) {
            continue;
        }
        let word = line.split(sep).next().unwrap_or_default();
        current.push(Token::new(word).map_err(|_| Error::Conll {
            line: lineno + 1,
            message: format!("invalid token {word:?}"),
        })?);
    }
    if !current.is_empty() {
        sentences.push(Sentence::new(current)?);
    }
    Ok(UnlabeledCorpus::new(sentences))
}

/// Raw corpus text: one sentence per line, whitespace separated; blank lines skipped.
pub fn read_raw<R: BufRead>(reader: R) -> Result<UnlabeledCorpus> {
    let mut sentences = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        if !words.is_empty() {
            sentences.push(Sentence::from_words(&words)?);
        }
    }
    Ok(UnlabeledCorpus::new(sentences))
}

pub fn write_raw<W: Write>(corpus: &UnlabeledCorpus, mut writer: W) -> Result<()> {
    for s in corpus.sentences() {
        let words: Vec<&str> = s.tokens().iter().map(Token::as_str).collect();
        writeln!(writer, "{}", words.join(" "))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn strip_labels(data: &LabeledDataset) -> UnlabeledCorpus {
    UnlabeledCorpus::new(data.sentences().cloned().collect())
}

/// Number of seed sentences for `ratio` of `m`: nearest integer, at least one.
pub fn seed_count(m: usize, ratio: f64) -> usize {
    ((ratio * m as f64).round() as usize).clamp(1, m.max(1))
}

/// Samples `max(1, round(ratio * M))` sentences uniformly without replacement
/// as the seed set; the rest become an unlabeled corpus. Both keep source order.
pub fn split_seed(data: &LabeledDataset, ratio: f64, rng_seed: u64) -> Result<(LabeledDataset, UnlabeledCorpus)> {
    let (seed, rest) = split_seed_labeled(data, ratio, rng_seed)?;
    Ok((seed, strip_labels(&rest)))
}

/// Like [`split_seed`] but keeps the gold labels of the remainder, for evaluation.
pub fn split_seed_labeled(
    data: &LabeledDataset,
    ratio: f64,
    rng_seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("seed ratio {ratio} outside (0, 1]")));
    }
    if data.is_empty() {
        return Err(Error::config("cannot split an empty dataset"));
    }
    let m = data.len();
    let k = seed_count(m, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut chosen = vec![false; m];
    for i in rand::seq::index::sample(&mut rng, m, k) {
        chosen[i] = true;
    }
    let (mut seed, mut rest) = (Vec::with_capacity(k), Vec::with_capacity(m - k));
    for (item, pick) in data.items().iter().zip(chosen) {
        if pick {
            seed.push(item.clone());
        } else {
            rest.push(item.clone());
        }
    }
    Ok((
        LabeledDataset::new(data.tagset().clone(), seed)?,
        LabeledDataset::new(data.tagset().clone(), rest)?,
    ))
}

/// Parameters of the synthetic NER corpus.
///
/// Vocabulary ids are partitioned into a general block, one small
/// context-word ("trigger") block per entity type and one entity block per
/// type. An entity chunk is a context word (a trigger of the entity's type
/// with probability `trigger_rate`, a general word otherwise) followed by
/// 1 to 3 tokens: one from the type's entity block, then heads from its
/// small head block. Token frequencies inside each block
/// are Zipfian. `domain` permutes the id-to-surface mapping so two domains
/// share surfaces but not their roles.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub entity_types: Vec<String>,
    pub sentence_length_range: (usize, usize),
    pub entity_rate: f64,
    pub rng_seed: u64,
    pub num_sentences: usize,
    pub trigger_rate: f64,
    /// Probability that a non-entity token is an entity-block word used
    /// outside any entity.
    pub ambiguity: f64,
    pub domain: u64,
}

impl SyntheticSpec {
    pub fn new(vocab_size: usize, entity_types: &[&str], num_sentences: usize, rng_seed: u64) -> Self {
        SyntheticSpec {
            vocab_size,
            entity_types: entity_types.iter().map(|s| s.to_string()).collect(),
            sentence_length_range: (6, 20),
            entity_rate: 0.15,
            rng_seed,
            num_sentences,
            trigger_rate: 0.8,
            ambiguity: 0.0,
            domain: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sentence_length_range;
        if self.vocab_size < 10 {
            return Err(Error::config("vocab_size must be at least 10"));
        }
        if !(0.0..1.0).contains(&self.entity_rate) {
            return Err(Error::config("entity_rate must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.trigger_rate) {
            return Err(Error::config("trigger_rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::config("ambiguity must lie in [0, 1]"));
        }
        if lo < 1 || hi < lo {
            return Err(Error::config("sentence length range must satisfy 1 <= min <= max"));
        }
        TagSet::new(self.entity_types.iter().cloned())?;
        self.layout()?;
        Ok(())
    }

    /// Vocabulary layout: general words first, then per-type trigger,
    /// head and entity blocks.
    pub fn layout(&self) -> Result<VocabLayout> {
        let v = self.vocab_size;
        let t = self.entity_types.len();
        if t == 0 {
            return Ok(VocabLayout {
                general: v,
                triggers: 0,
                heads: 0,
                entities: 0,
            });
        }
        let entities = ((2 * v / 5) / t).max(1);
        let remaining = v.saturating_sub(t * entities);
        let small = (remaining / (8 * t)).clamp(1, 3);
        let general = remaining.saturating_sub(2 * t * small);
        if general < 2 {
            return Err(Error::config(format!(
                "vocab_size {v} too small for {t} entity types"
            )));
        }
        Ok(VocabLayout {
            general,
            triggers: small,
            heads: small,
            entities,
        })
    }
}

/// Block sizes of the synthetic vocabulary; the last three are per type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabLayout {
    pub general: usize,
    pub triggers: usize,
    pub heads: usize,
    pub entities: usize,
}

impl VocabLayout {
    pub fn trigger_base(&self, ty: usize) -> usize {
        self.general + ty * self.triggers
    }

    pub fn head_base(&self, ty: usize, n_types: usize) -> usize {
        self.general + n_types * self.triggers + ty * self.heads
    }

    pub fn entity_base(&self, ty: usize, n_types: usize) -> usize {
        self.general + n_types * (self.triggers + self.heads) + ty * self.entities
    }
}

// Entity lengths in tokens with their probabilities.
const ENTITY_LENGTHS: [(usize, f64); 3] = [(1, 0.5), (2, 0.3), (3, 0.2)];

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("non-empty block")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let tagset = TagSet::new(spec.entity_types.iter().cloned())?;
    let layout = spec.layout()?;
    let n_types = spec.entity_types.len();

    let mut surfaces: Vec<usize> = (0..spec.vocab_size).collect();
    if spec.domain != 0 {
        surfaces.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.domain));
    }
    let surface = |id: usize| Token(format!("w{}", surfaces[id]));

    let mean_len: f64 = ENTITY_LENGTHS.iter().map(|(l, p)| *l as f64 * p).sum();
    let f = spec.entity_rate;
    let start_prob = (f / (mean_len * (1.0 - f))).min(1.0);
    let lengths = WeightedIndex::new(ENTITY_LENGTHS.iter().map(|(_, p)| *p)).unwrap();
    let general_dist = zipf(layout.general);
    let trig_dist = (n_types > 0).then(|| zipf(layout.triggers));
    let head_dist = (n_types > 0).then(|| zipf(layout.heads));
    let ent_dist = (n_types > 0).then(|| zipf(layout.entities));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (lo, hi) = spec.sentence_length_range;
    let mut items = Vec::with_capacity(spec.num_sentences);
    for _ in 0..spec.num_sentences {
        let len = rng.gen_range(lo..=hi);
        let mut tokens = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        while tokens.len() < len {
            let remaining = len - tokens.len();
            if n_types > 0 && f > 0.0 && remaining >= 2 && rng.gen::<f64>() < start_prob {
                let ty = rng.gen_range(0..n_types);
                let ent_len = ENTITY_LENGTHS[lengths.sample(&mut rng)].0.min(remaining - 1);
                let context = if rng.gen::<f64>() < spec.trigger_rate {
                    layout.trigger_base(ty) + trig_dist.as_ref().unwrap().sample(&mut rng)
                } else {
                    general_dist.sample(&mut rng)
                };
                tokens.push(surface(context));
                tags.push(crate::tagscheme::OUTSIDE);
                let first = layout.entity_base(ty, n_types) + ent_dist.as_ref().unwrap().sample(&mut rng);
                tokens.push(surface(first));
                tags.push(tagset.begin(ty));
                for _ in 1..ent_len {
                    let head = layout.head_base(ty, n_types) + head_dist.as_ref().unwrap().sample(&mut rng);
                    tokens.push(surface(head));
                    tags.push(tagset.inside(ty));
                }
            } else {
                let id = if n_types > 0 && spec.ambiguity > 0.0 && rng.gen::<f64>() < spec.ambiguity {
                    let ty = rng.gen_range(0..n_types);
                    layout.entity_base(ty, n_types) + ent_dist.as_ref().unwrap().sample(&mut rng)
                } else {
                    general_dist.sample(&mut rng)
                };
                tokens.push(surface(id));
                tags.push(crate::tagscheme::OUTSIDE);
            }
        }
        items.push((Sentence::new(tokens)?, TagSequence(tags)));
    }
    LabeledDataset::new(tagset, items)
}
