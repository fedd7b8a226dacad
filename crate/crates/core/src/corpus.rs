//! Posts, label schemas, labeled splits and label merging.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("post {0:?} has empty text")]
    EmptyText(String),
    #[error("duplicate post id {0:?}")]
    DuplicateId(String),
    #[error("dataset has no items")]
    EmptyDataset,
    #[error("label {label} is not a level of schema {schema:?}")]
    UnknownLabel { label: String, schema: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("mapping is not surjective: target level {0} has no preimage")]
    NonSurjective(usize),
    #[error("unknown split tag {0:?}")]
    UnknownSplit(String),
    #[error("mapping line {line}: {reason}")]
    MappingSyntax { line: usize, reason: String },
}

/// A single social-media post. Title and body, when both exist, are joined
/// by [`Post::with_title`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
}

impl Post {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText(id));
        }
        Ok(Self { id, text })
    }

    /// Stores `"<title> : <body>"`; an empty title or body falls back to the other part.
    pub fn with_title(id: impl Into<String>, title: &str, body: &str) -> Result<Self, CorpusError> {
        let (title, body) = (title.trim(), body.trim());
        let text = match (title.is_empty(), body.is_empty()) {
            (false, false) => format!("{title} : {body}"),
            (false, true) => title.to_string(),
            _ => body.to_string(),
        };
        Self::new(id, text)
    }
}

/// Ordered depression levels. Level `i` has index `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct LabelSchema {
    name: String,
    levels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    name: String,
    levels: Vec<String>,
}

impl TryFrom<SchemaRepr> for LabelSchema {
    type Error = CorpusError;
    fn try_from(r: SchemaRepr) -> Result<Self, Self::Error> {
        LabelSchema::new(r.name, r.levels)
    }
}

impl From<LabelSchema> for SchemaRepr {
    fn from(s: LabelSchema) -> Self {
        SchemaRepr { name: s.name, levels: s.levels }
    }
}

pub const THREE_LEVEL: &str = "depsign-3level";
pub const TWITTER_FOUR_LEVEL: &str = "twitter-4level";
pub const TWITTER_TO_THREE_LEVEL: &str = "twitter-to-3level";

impl LabelSchema {
    pub fn new<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let name = name.into();
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        if name.trim().is_empty() {
            return Err(CorpusError::InvalidSchema("schema name is empty".into()));
        }
        if levels.len() < 2 {
            return Err(CorpusError::InvalidSchema(format!("{name}: needs at least 2 levels, got {}", levels.len())));
        }
        let mut seen = BTreeSet::new();
        for level in &levels {
            if level.trim().is_empty() {
                return Err(CorpusError::InvalidSchema(format!("{name}: empty level name")));
            }
            if !seen.insert(level.as_str()) {
                return Err(CorpusError::InvalidSchema(format!("{name}: duplicate level {level:?}")));
            }
        }
        Ok(Self { name, levels })
    }

    /// Reddit levels: Not depressed, Moderate, Severe. Also the shared schema
    /// for cross-dataset transfer.
    pub fn three_level() -> Self {
        Self::new(THREE_LEVEL, ["Not depressed", "Moderate", "Severe"]).expect("valid builtin")
    }

    /// Twitter levels; "Change of feelings" sits between not depressed and moderate.
    pub fn twitter_four_level() -> Self {
        Self::new(TWITTER_FOUR_LEVEL, ["Not depressed", "Change of feelings", "Moderate", "Severe"]).expect("valid builtin")
    }

    /// Looks up a built-in schema by name or by dataset alias.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            THREE_LEVEL | "reddit" => Some(Self::three_level()),
            TWITTER_FOUR_LEVEL | "twitter" => Some(Self::twitter_four_level()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level_names(&self) -> &[String] {
        &self.levels
    }

    pub fn level_name(&self, index: usize) -> Option<&str> {
        self.levels.get(index).map(String::as_str)
    }

    pub fn contains(&self, index: usize) -> bool {
        index < self.levels.len()
    }

    /// Resolves a label written either as a level name (case-insensitive)
    /// or as an integer index.
    pub fn resolve(&self, token: &str) -> Result<usize, CorpusError> {
        let token = token.trim();
        if let Ok(i) = token.parse::<usize>() {
            if self.contains(i) {
                return Ok(i);
            }
        } else if let Some(i) = self.levels.iter().position(|l| l.eq_ignore_ascii_case(token)) {
            return Ok(i);
        }
        Err(CorpusError::UnknownLabel { label: token.to_string(), schema: self.name.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(SplitTag::Train),
            "validation" | "dev" | "development" | "val" => Ok(SplitTag::Validation),
            "test" => Ok(SplitTag::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPost {
    pub post: Post,
    pub label: usize,
}

/// One split of a labeled corpus. `name` identifies the corpus (e.g.
/// `reddit`, `twitter-merged`) and is what model lineages record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDataset {
    name: String,
    schema: LabelSchema,
    split: SplitTag,
    items: Vec<LabeledPost>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, schema: LabelSchema, split: SplitTag, items: Vec<LabeledPost>) -> Result<Self, CorpusError> {
        if items.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        let mut ids = BTreeSet::new();
        for item in &items {
            if !schema.contains(item.label) {
                return Err(CorpusError::UnknownLabel { label: item.label.to_string(), schema: schema.name.clone() });
            }
            if item.post.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(item.post.id.clone()));
            }
            if !ids.insert(item.post.id.as_str()) {
                return Err(CorpusError::DuplicateId(item.post.id.clone()));
            }
        }
        Ok(Self { name: name.into(), schema, split, items })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn items(&self) -> &[LabeledPost] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn posts(&self) -> Vec<Post> {
        self.items.iter().map(|i| i.post.clone()).collect()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Appends `other` (same corpus schema) to this split, as done when the
    /// final model is trained on training and validation data together.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset, CorpusError> {
        if self.schema != other.schema {
            return Err(CorpusError::SchemaMismatch(format!(
                "cannot concatenate {} ({}) with {} ({})",
                self.name, self.schema.name, other.name, other.schema.name
            )));
        }
        let mut items = self.items.clone();
        items.extend(other.items.iter().cloned());
        LabeledDataset::new(self.name.clone(), self.schema.clone(), self.split, items)
    }

    /// Class counts indexed by level.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.schema.len()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub level: usize,
    pub count: usize,
    pub fraction: f64,
}

/// Per-level counts and fractions, in level order.
pub fn class_distribution(ds: &LabeledDataset) -> Vec<ClassShare> {
    let total = ds.len() as f64;
    ds.counts()
        .into_iter()
        .enumerate()
        .map(|(level, count)| ClassShare { level, count, fraction: count as f64 / total })
        .collect()
}

/// A total, surjective map from the levels of one schema onto another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    name: String,
    source: LabelSchema,
    target: LabelSchema,
    map: Vec<usize>,
}

impl LabelMapping {
    pub fn new(name: impl Into<String>, source: LabelSchema, target: LabelSchema, map: Vec<usize>) -> Result<Self, CorpusError> {
        if map.len() != source.len() {
            return Err(CorpusError::SchemaMismatch(format!(
                "mapping covers {} source levels but {} has {}",
                map.len(),
                source.name,
                source.len()
            )));
        }
        let mut hit = alloc::vec![false; target.len()];
        for (from, &to) in map.iter().enumerate() {
            if !target.contains(to) {
                return Err(CorpusError::SchemaMismatch(format!(
                    "source level {from} maps to {to}, outside {} ({} levels)",
                    target.name,
                    target.len()
                )));
            }
            hit[to] = true;
        }
        if let Some(missing) = hit.iter().position(|h| !h) {
            return Err(CorpusError::NonSurjective(missing));
        }
        Ok(Self { name: name.into(), source, target, map })
    }

    pub fn identity(schema: &LabelSchema) -> Self {
        let map = (0..schema.len()).collect();
        Self { name: "identity".into(), source: schema.clone(), target: schema.clone(), map }
    }

    /// Twitter's four levels onto the shared three: "Change of feelings"
    /// and "Moderate" merge into Moderate.
    pub fn twitter_to_three_level() -> Self {
        Self::new(
            TWITTER_TO_THREE_LEVEL,
            LabelSchema::twitter_four_level(),
            LabelSchema::three_level(),
            alloc::vec![0, 1, 1, 2],
        )
        .expect("valid builtin")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            TWITTER_TO_THREE_LEVEL => Some(Self::twitter_to_three_level()),
            _ => None,
        }
    }

    /// Parses `source_index -> target_index` lines. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(name: impl Into<String>, source: LabelSchema, target: LabelSchema, text: &str) -> Result<Self, CorpusError> {
        let mut map: Vec<Option<usize>> = alloc::vec![None; source.len()];
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |reason: &str| CorpusError::MappingSyntax { line: line_no, reason: reason.to_string() };
            let (from, to) = line.split_once("->").ok_or_else(|| syntax("expected `source -> target`"))?;
            let from: usize = from.trim().parse().map_err(|_| syntax("source is not an index"))?;
            let to: usize = to.trim().parse().map_err(|_| syntax("target is not an index"))?;
            let slot = map.get_mut(from).ok_or_else(|| syntax("source index outside source schema"))?;
            if slot.is_some() {
                return Err(syntax("source index mapped twice"));
            }
            *slot = Some(to);
        }
        let map = map
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| CorpusError::SchemaMismatch(format!("source level {i} is unmapped"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, source, target, map)
    }

    /// Renders the mapping in the line format accepted by [`LabelMapping::parse`].
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (from, to) in self.map.iter().enumerate() {
            out.push_str(&format!("{from} -> {to}\n"));
        }
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &LabelSchema {
        &self.source
    }

    pub fn target(&self) -> &LabelSchema {
        &self.target
    }

    pub fn apply(&self, label: usize) -> usize {
        self.map[label]
    }

    pub fn is_identity(&self) -> bool {
        self.source == self.target && self.map.iter().enumerate().all(|(i, &t)| i == t)
    }
}

/// Relabels every item through `mapping`. The dataset keeps its name unless
/// the mapping is a real merge, in which case `-merged` is appended.
pub fn merge_labels(ds: &LabeledDataset, mapping: &LabelMapping) -> Result<LabeledDataset, CorpusError> {
    if ds.schema != mapping.source {
        return Err(CorpusError::SchemaMismatch(format!(
            "dataset {} uses schema {} but mapping {} expects {}",
            ds.name, ds.schema.name, mapping.name, mapping.source.name
        )));
    }
    if mapping.is_identity() {
        return Ok(ds.clone());
    }
    let items = ds
        .items
        .iter()
        .map(|item| LabeledPost { post: item.post.clone(), label: mapping.apply(item.label) })
        .collect();
    let name = if ds.name.ends_with("-merged") { ds.name.clone() } else { format!("{}-merged", ds.name) };
    LabeledDataset::new(name, mapping.target.clone(), ds.split, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn dataset(schema: LabelSchema, labels: &[usize]) -> LabeledDataset {
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledPost { post: Post::new(format!("p{i}"), format!("post number {i}")).unwrap(), label })
            .collect();
        LabeledDataset::new("toy", schema, SplitTag::Train, items).unwrap()
    }

    fn replicate(counts: &[usize]) -> Vec<usize> {
        counts.iter().enumerate().flat_map(|(level, &n)| core::iter::repeat_n(level, n)).collect()
    }

    #[test]
    fn schema_invariants() {
        assert!(LabelSchema::new("one", ["a"]).is_err());
        assert!(LabelSchema::new("dup", ["a", "a"]).is_err());
        let s = LabelSchema::three_level();
        assert_eq!(s.resolve("moderate").unwrap(), 1);
        assert_eq!(s.resolve("2").unwrap(), 2);
        assert!(matches!(s.resolve("3"), Err(CorpusError::UnknownLabel { .. })));
        assert!(matches!(s.resolve("mild"), Err(CorpusError::UnknownLabel { .. })));
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(Post::new("x", "  \n"), Err(CorpusError::EmptyText("x".into())));
        assert_eq!(Post::with_title("x", "Title", "body").unwrap().text, "Title : body");
        assert_eq!(Post::with_title("x", "", "body").unwrap().text, "body");
    }

    #[test]
    fn dataset_rejects_bad_items() {
        let schema = LabelSchema::three_level();
        assert_eq!(LabeledDataset::new("e", schema.clone(), SplitTag::Test, vec![]), Err(CorpusError::EmptyDataset));
        let p = Post::new("a", "text").unwrap();
        let dup = vec![LabeledPost { post: p.clone(), label: 0 }, LabeledPost { post: p.clone(), label: 1 }];
        assert!(matches!(LabeledDataset::new("d", schema.clone(), SplitTag::Test, dup), Err(CorpusError::DuplicateId(_))));
        let bad = vec![LabeledPost { post: p, label: 3 }];
        assert!(matches!(LabeledDataset::new("d", schema, SplitTag::Test, bad), Err(CorpusError::UnknownLabel { .. })));
    }

    #[test]
    fn reddit_test_distribution() {
        let ds = dataset(LabelSchema::three_level(), &replicate(&[2306, 1830, 360]));
        let dist = class_distribution(&ds);
        assert_eq!(dist.iter().map(|c| c.count).collect::<Vec<_>>(), vec![2306, 1830, 360]);
        let rounded: Vec<f64> = dist.iter().map(|c| libm::round(c.fraction * 1000.0) / 1000.0).collect();
        assert_eq!(rounded, vec![0.513, 0.407, 0.080]);
    }

    #[test]
    fn trivial_distributions() {
        let one = dataset(LabelSchema::three_level(), &[0]);
        assert_eq!(class_distribution(&one)[0], ClassShare { level: 0, count: 1, fraction: 1.0 });
        let uniform = dataset(LabelSchema::three_level(), &[0, 1, 2, 0, 1, 2, 0, 1, 2]);
        for share in class_distribution(&uniform) {
            assert!((share.fraction - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn twitter_merge_counts() {
        // 10 items: 3 at level 1 and 4 at level 2 merge into 7 at level 1.
        let labels = [0, 1, 1, 1, 2, 2, 2, 2, 3, 3];
        let ds = dataset(LabelSchema::twitter_four_level(), &labels);
        let merged = merge_labels(&ds, &LabelMapping::twitter_to_three_level()).unwrap();
        assert_eq!(merged.len(), 10);
        assert_eq!(merged.schema(), &LabelSchema::three_level());
        assert_eq!(merged.counts(), vec![1, 7, 2]);
        assert_eq!(merged.name(), "toy-merged");
    }

    #[test]
    fn identity_merge_is_noop() {
        let ds = dataset(LabelSchema::three_level(), &[0, 1, 2, 2]);
        assert_eq!(merge_labels(&ds, &LabelMapping::identity(ds.schema())).unwrap(), ds);
    }

    #[test]
    fn merge_requires_matching_schema() {
        let ds = dataset(LabelSchema::three_level(), &[0, 1]);
        assert!(matches!(
            merge_labels(&ds, &LabelMapping::twitter_to_three_level()),
            Err(CorpusError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn mapping_must_be_surjective() {
        let err = LabelMapping::new("bad", LabelSchema::twitter_four_level(), LabelSchema::three_level(), vec![0, 0, 1, 1]);
        assert_eq!(err, Err(CorpusError::NonSurjective(2)));
    }

    #[test]
    fn mapping_text_format() {
        let m = LabelMapping::twitter_to_three_level();
        let text = m.to_lines();
        assert_eq!(text, "0 -> 0\n1 -> 1\n2 -> 1\n3 -> 2\n");
        let parsed = LabelMapping::parse(TWITTER_TO_THREE_LEVEL, m.source().clone(), m.target().clone(), &text).unwrap();
        assert_eq!(parsed, m);
        let missing = LabelMapping::parse("m", m.source().clone(), m.target().clone(), "0 -> 0\n1 -> 1\n");
        assert!(matches!(missing, Err(CorpusError::SchemaMismatch(_))));
        let junk = LabelMapping::parse("m", m.source().clone(), m.target().clone(), "0 => 0");
        assert!(matches!(junk, Err(CorpusError::MappingSyntax { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn merge_preserves_size_and_preimage_counts(labels in prop::collection::vec(0usize..4, 1..80)) {
            let ds = dataset(LabelSchema::twitter_four_level(), &labels);
            let m = LabelMapping::twitter_to_three_level();
            let merged = merge_labels(&ds, &m).unwrap();
            prop_assert_eq!(merged.len(), ds.len());
            let before = ds.counts();
            let mut expected = vec![0usize; 3];
            for (level, n) in before.iter().enumerate() {
                expected[m.apply(level)] += n;
            }
            prop_assert_eq!(merged.counts(), expected);
        }

        #[test]
        fn fractions_sum_to_one(labels in prop::collection::vec(0usize..3, 1..200)) {
            let ds = dataset(LabelSchema::three_level(), &labels);
            let dist = class_distribution(&ds);
            prop_assert!(dist.iter().all(|c| c.fraction >= 0.0));
            prop_assert_eq!(dist.iter().map(|c| c.count).sum::<usize>(), ds.len());
            prop_assert!((dist.iter().map(|c| c.fraction).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
