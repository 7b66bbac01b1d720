//! BIO tag alphabet, span conversion and sequence repair.
//!
//! Tag indices are laid out as `O = 0`, then `B-T, I-T` for every entity
//! type in declaration order, so `K = 2 * |types| + 1`.

use std::fmt;

use crate::error::{Error, Result};

/// Index of the `O` tag in every [`TagSet`].
pub const OUTSIDE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prefix {
    Begin,
    Inside,
}

/// A decoded tag: either `O` or a prefixed entity type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag<'a> {
    Outside,
    Entity(Prefix, &'a str),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagSet {
    types: Vec<String>,
}

impl TagSet {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Result<Self> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        for (i, t) in types.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("bad entity type name {t:?}")));
            }
            if types[..i].contains(t) {
                return Err(Error::config(format!("duplicate entity type {t:?}")));
            }
        }
        Ok(TagSet { types })
    }

    pub fn entity_types(&self) -> &[String] {
        &self.types
    }

    /// Number of tags, `K`.
    pub fn len(&self) -> usize {
        2 * self.types.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn begin(&self, type_index: usize) -> usize {
        1 + 2 * type_index
    }

    pub fn inside(&self, type_index: usize) -> usize {
        2 + 2 * type_index
    }

    pub fn tag(&self, index: usize) -> Tag<'_> {
        assert!(index < self.len(), "tag index {index} out of range");
        if index == OUTSIDE {
            return Tag::Outside;
        }
        let ty = &self.types[(index - 1) / 2];
        if index % 2 == 1 {
            Tag::Entity(Prefix::Begin, ty)
        } else {
            Tag::Entity(Prefix::Inside, ty)
        }
    }

    /// Entity type index for a non-`O` tag.
    pub fn type_of(&self, index: usize) -> Option<usize> {
        (index != OUTSIDE && index < self.len()).then(|| (index - 1) / 2)
    }

    pub fn is_inside(&self, index: usize) -> bool {
        index != OUTSIDE && index.is_multiple_of(2)
    }

    pub fn tag_name(&self, index: usize) -> String {
        match self.tag(index) {
            Tag::Outside => "O".to_string(),
            Tag::Entity(Prefix::Begin, t) => format!("B-{t}"),
            Tag::Entity(Prefix::Inside, t) => format!("I-{t}"),
        }
    }

    pub fn parse_tag(&self, s: &str) -> Result<usize> {
        let invalid = || Error::InvalidTag { tag: s.to_string() };
        match parse_bio(s).ok_or_else(invalid)? {
            Tag::Outside => Ok(OUTSIDE),
            Tag::Entity(prefix, ty) => {
                let t = self.type_index(ty).ok_or_else(invalid)?;
                Ok(match prefix {
                    Prefix::Begin => self.begin(t),
                    Prefix::Inside => self.inside(t),
                })
            }
        }
    }

    /// Tag set holding the types of `self` followed by any new types of `other`.
    pub fn union(&self, other: &TagSet) -> TagSet {
        let mut types = self.types.clone();
        for t in &other.types {
            if !types.contains(t) {
                types.push(t.clone());
            }
        }
        TagSet { types }
    }
}

/// Parses the BIO grammar `O | B-<TYPE> | I-<TYPE>` without consulting a tag set.
pub fn parse_bio(s: &str) -> Option<Tag<'_>> {
    if s == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, ty) = s.split_once('-')?;
    if ty.is_empty() || ty.chars().any(char::is_whitespace) {
        return None;
    }
    match prefix {
        "B" => Some(Tag::Entity(Prefix::Begin, ty)),
        "I" => Some(Tag::Entity(Prefix::Inside, ty)),
        _ => None,
    }
}

/// Per-token tag indices into a [`TagSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TagSequence(pub Vec<usize>);

impl TagSequence {
    pub fn outside(n: usize) -> Self {
        TagSequence(vec![OUTSIDE; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn non_outside(&self) -> usize {
        self.0.iter().filter(|&&t| t != OUTSIDE).count()
    }

    pub fn check(&self, tagset: &TagSet) -> Result<()> {
        match self.0.iter().find(|&&t| t >= tagset.len()) {
            Some(t) => Err(Error::InvalidTag {
                tag: format!("index {t} (K = {})", tagset.len()),
            }),
            None => Ok(()),
        }
    }
}

impl From<Vec<usize>> for TagSequence {
    fn from(v: Vec<usize>) -> Self {
        TagSequence(v)
    }
}

/// Half-open token range `[start, end)` carrying an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl Span {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        Span {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.start, self.end, self.entity_type)
    }
}

pub fn encode_spans(spans: &[Span], n: usize, tagset: &TagSet) -> Result<TagSequence> {
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut tags = vec![OUTSIDE; n];
    let mut covered_to = 0;
    for (i, span) in sorted.iter().enumerate() {
        if span.start >= span.end || span.end > n {
            return Err(Error::Span(format!("{span} outside sequence of length {n}")));
        }
        if i > 0 && span.start < covered_to {
            return Err(Error::Span(format!("{span} overlaps a previous span")));
        }
        let t = tagset
            .type_index(&span.entity_type)
            .ok_or_else(|| Error::Span(format!("unknown entity type in {span}")))?;
        tags[span.start] = tagset.begin(t);
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = tagset.inside(t);
        }
        covered_to = span.end;
    }
    Ok(TagSequence(tags))
}

/// Whether `current` may follow `previous` (`None` = sentence start) without repair.
fn continues(previous: Option<usize>, current: usize, tagset: &TagSet) -> bool {
    if !tagset.is_inside(current) {
        return true;
    }
    match previous {
        Some(p) if p != OUTSIDE => tagset.type_of(p) == tagset.type_of(current),
        _ => false,
    }
}

/// Positions holding an `I-X` tag with no `B-X`/`I-X` immediately before it.
pub fn validate(tags: &TagSequence, tagset: &TagSet) -> Vec<usize> {
    let mut previous = None;
    let mut out = Vec::new();
    for (i, &t) in tags.0.iter().enumerate() {
        if !continues(previous, t, tagset) {
            out.push(i);
        }
        previous = Some(t);
    }
    out
}

/// Rewrites every stray `I-X` as `B-X` (conlleval convention).
pub fn repair(tags: &TagSequence, tagset: &TagSet) -> TagSequence {
    let mut out = tags.0.clone();
    for i in 0..out.len() {
        let previous = i.checked_sub(1).map(|p| out[p]);
        if !continues(previous, out[i], tagset) {
            out[i] -= 1;
        }
    }
    TagSequence(out)
}

pub fn decode_spans(tags: &TagSequence, tagset: &TagSet) -> Vec<Span> {
    let tags = repair(tags, tagset);
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &t) in tags.0.iter().enumerate() {
        if tagset.is_inside(t) {
            continue;
        }
        if let Some((start, ty)) = open.take() {
            spans.push(Span::new(start, i, tagset.entity_types()[ty].clone()));
        }
        if let Some(ty) = tagset.type_of(t) {
            open = Some((i, ty));
        }
    }
    if let Some((start, ty)) = open {
        spans.push(Span::new(start, tags.len(), tagset.entity_types()[ty].clone()));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts() -> TagSet {
        TagSet::new(["PER", "LOC"]).unwrap()
    }

    fn seq(ts: &TagSet, tags: &[&str]) -> TagSequence {
        TagSequence(tags.iter().map(|t| ts.parse_tag(t).unwrap()).collect())
    }

    #[test]
    fn layout_puts_outside_first() {
        let ts = ts();
        assert_eq!(ts.len(), 5);
        assert_eq!(ts.tag_name(0), "O");
        assert_eq!(ts.tag_name(1), "B-PER");
        assert_eq!(ts.tag_name(2), "I-PER");
        assert_eq!(ts.tag_name(4), "I-LOC");
        assert_eq!(TagSet::new(Vec::<String>::new()).unwrap().len(), 1);
    }

    #[test]
    fn parse_rejects_non_bio() {
        let ts = ts();
        for bad in ["X", "B-", "E-PER", "B-ORG", "o", "I_PER"] {
            assert!(ts.parse_tag(bad).is_err(), "{bad}");
        }
        assert!(TagSet::new(["A", "A"]).is_err());
    }

    #[test]
    fn encode_examples() {
        let ts = ts();
        let got = encode_spans(&[Span::new(0, 2, "PER")], 3, &ts).unwrap();
        assert_eq!(got, seq(&ts, &["B-PER", "I-PER", "O"]));
        assert_eq!(encode_spans(&[], 2, &ts).unwrap(), seq(&ts, &["O", "O"]));
        let adjacent = [Span::new(1, 2, "LOC"), Span::new(2, 3, "LOC")];
        assert_eq!(
            encode_spans(&adjacent, 3, &ts).unwrap(),
            seq(&ts, &["O", "B-LOC", "B-LOC"])
        );
    }

    #[test]
    fn encode_errors() {
        let ts = ts();
        assert!(encode_spans(&[Span::new(0, 4, "PER")], 3, &ts).is_err());
        assert!(encode_spans(&[Span::new(1, 1, "PER")], 3, &ts).is_err());
        let overlap = [Span::new(0, 2, "PER"), Span::new(1, 3, "LOC")];
        assert!(encode_spans(&overlap, 3, &ts).is_err());
        assert!(encode_spans(&[Span::new(0, 1, "ORG")], 3, &ts).is_err());
    }

    #[test]
    fn decode_examples() {
        let ts = ts();
        assert_eq!(
            decode_spans(&seq(&ts, &["B-PER", "I-PER", "O"]), &ts),
            vec![Span::new(0, 2, "PER")]
        );
        assert!(decode_spans(&seq(&ts, &["O", "O"]), &ts).is_empty());
        assert_eq!(
            decode_spans(&seq(&ts, &["O", "I-PER"]), &ts),
            vec![Span::new(1, 2, "PER")]
        );
        // I-LOC after B-PER starts a new LOC entity.
        assert_eq!(
            decode_spans(&seq(&ts, &["B-PER", "I-LOC", "I-LOC"]), &ts),
            vec![Span::new(0, 1, "PER"), Span::new(1, 3, "LOC")]
        );
    }

    #[test]
    fn validate_examples() {
        let ts = ts();
        assert!(validate(&seq(&ts, &["B-PER", "I-PER"]), &ts).is_empty());
        assert_eq!(validate(&seq(&ts, &["O", "I-PER"]), &ts), vec![1]);
        assert_eq!(validate(&seq(&ts, &["B-PER", "I-LOC"]), &ts), vec![1]);
        assert_eq!(validate(&seq(&ts, &["I-PER"]), &ts), vec![0]);
    }

    fn arb_spans() -> impl Strategy<Value = (Vec<Span>, usize)> {
        (1usize..20).prop_flat_map(|n| {
            (
                proptest::collection::vec((0..n, 1usize..4, any::<bool>()), 0..6),
                Just(n),
            )
                .prop_map(|(raw, n)| {
                    let mut spans: Vec<Span> = Vec::new();
                    let mut raw = raw;
                    raw.sort();
                    for (start, len, per) in raw {
                        let end = (start + len).min(n);
                        if spans.last().is_some_and(|s| s.end > start) {
                            continue;
                        }
                        spans.push(Span::new(start, end, if per { "PER" } else { "LOC" }));
                    }
                    (spans, n)
                })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip((spans, n) in arb_spans()) {
            let ts = ts();
            let tags = encode_spans(&spans, n, &ts).unwrap();
            prop_assert!(validate(&tags, &ts).is_empty());
            prop_assert_eq!(decode_spans(&tags, &ts), spans);
        }

        #[test]
        fn decode_is_sorted_and_disjoint(raw in proptest::collection::vec(0usize..5, 0..30)) {
            let ts = ts();
            let spans = decode_spans(&TagSequence(raw), &ts);
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for s in &spans {
                prop_assert!(s.start < s.end);
            }
        }

        #[test]
        fn repair_yields_valid(raw in proptest::collection::vec(0usize..5, 0..30)) {
            let ts = ts();
            let fixed = repair(&TagSequence(raw.clone()), &ts);
            prop_assert!(validate(&fixed, &ts).is_empty());
            if validate(&TagSequence(raw.clone()), &ts).is_empty() {
                prop_assert_eq!(fixed.0, raw);
            }
        }
    }
}
