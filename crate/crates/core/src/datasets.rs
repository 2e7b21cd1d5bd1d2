//! FSA benchmark datasets: loading, hard-sample flags, hard-set merging and
//! split statistics.
//!
//! The canonical on-disk form is a directory with `train.jsonl`, `dev.jsonl`
//! and `test.jsonl` (any may be absent), one [`FsaSample`] per line, plus an
//! optional `categories.txt` fixing the category space of an ASA dataset.
//! SemEval-14 and SemEval-16 XML files are converted with [`read_semeval_xml`].
//!
//! A sample is *implicit* when any of its pairs was annotated with an empty
//! opinion-word list, and *multiple* when its pairs carry at least two
//! distinct polarities (`conflict` counts as its own polarity). Pairs whose
//! opinion words were never annotated are neither.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::jsonl::{read_jsonl, JsonlError};
use crate::parser::{normalize_category, normalize_span, Polarity, Task, NULL_TARGET};
use crate::sampler::Domain;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {msg}")]
    Record {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {msg}")]
    Xml { path: PathBuf, msg: String },
    #[error("{0}: no train/dev/test files found")]
    NoSplits(PathBuf),
    #[error("cannot merge {hard} into {base}: {reason}")]
    InvalidMerge {
        base: DatasetName,
        hard: DatasetName,
        reason: String,
    },
    #[error("unknown dataset {0:?}")]
    UnknownName(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    TsaRest14,
    TsaLaptop14,
    AsaRest16,
    AsaLaptop16,
    RestHard,
    LaptopHard,
}

impl DatasetName {
    pub const ALL: [DatasetName; 6] = [
        DatasetName::TsaRest14,
        DatasetName::TsaLaptop14,
        DatasetName::AsaRest16,
        DatasetName::AsaLaptop16,
        DatasetName::RestHard,
        DatasetName::LaptopHard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::TsaRest14 => "tsa_rest14",
            DatasetName::TsaLaptop14 => "tsa_laptop14",
            DatasetName::AsaRest16 => "asa_rest16",
            DatasetName::AsaLaptop16 => "asa_laptop16",
            DatasetName::RestHard => "rest_hard",
            DatasetName::LaptopHard => "laptop_hard",
        }
    }

    /// Display name used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            DatasetName::TsaRest14 => "TSA-Rest14",
            DatasetName::TsaLaptop14 => "TSA-Laptop14",
            DatasetName::AsaRest16 => "ASA-Rest16",
            DatasetName::AsaLaptop16 => "ASA-Laptop16",
            DatasetName::RestHard => "Rest-Hard",
            DatasetName::LaptopHard => "Laptop-Hard",
        }
    }

    /// Hard sets carry aspect-level pairs with their targets.
    pub fn task(self) -> Task {
        match self {
            DatasetName::TsaRest14 | DatasetName::TsaLaptop14 => Task::Tsa,
            _ => Task::Asa,
        }
    }

    pub fn is_hard(self) -> bool {
        matches!(self, DatasetName::RestHard | DatasetName::LaptopHard)
    }

    pub fn domain(self) -> Domain {
        match self {
            DatasetName::TsaRest14 | DatasetName::AsaRest16 | DatasetName::RestHard => {
                Domain::Restaurant
            }
            _ => Domain::Laptop,
        }
    }

    /// The hard set merged into this dataset's test split.
    pub fn hard_set(self) -> Option<DatasetName> {
        if self.is_hard() {
            return None;
        }
        Some(match self.domain() {
            Domain::Restaurant => DatasetName::RestHard,
            Domain::Laptop => DatasetName::LaptopHard,
        })
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_lowercase().replace('-', "_");
        DatasetName::ALL
            .into_iter()
            .find(|n| n.as_str() == key)
            .ok_or_else(|| DatasetError::UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    OriginalTest,
    HardSet,
    Train,
    Dev,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub task: Task,
    /// Target span (TSA, `NULL` when only inferable) or aspect category (ASA).
    pub first: String,
    pub polarity: Polarity,
    /// `None`: never annotated. `Some(empty)`: annotated, no opinion words.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opinion_words: Option<Vec<String>>,
    /// Character offsets of the target span in the sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<usize>,
    /// For aspect-level pairs: the target the category is attached to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl GoldPair {
    pub fn is_null_target(&self) -> bool {
        self.task == Task::Tsa && self.first.eq_ignore_ascii_case(NULL_TARGET)
    }

    /// Pair-level implicit flag.
    pub fn is_implicit(&self) -> bool {
        self.opinion_words.as_ref().is_some_and(Vec::is_empty)
    }

    /// Comparison form of `first`.
    pub fn key(&self) -> String {
        match self.task {
            Task::Tsa => normalize_span(&self.first),
            Task::Asa => normalize_category(&self.first),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsaSample {
    pub sentence_id: String,
    pub sentence: String,
    pub pairs: Vec<GoldPair>,
    #[serde(default)]
    pub is_implicit: bool,
    #[serde(default)]
    pub is_multiple: bool,
    pub origin: Origin,
}

impl FsaSample {
    pub fn set_flags(&mut self) {
        self.is_implicit = self.pairs.iter().any(GoldPair::is_implicit);
        let distinct: HashSet<Polarity> = self.pairs.iter().map(|p| p.polarity).collect();
        self.is_multiple = distinct.len() >= 2;
    }

    pub fn has_opinion_annotations(&self) -> bool {
        self.pairs.iter().any(|p| p.opinion_words.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn origin(self) -> Origin {
        match self {
            Split::Train => Origin::Train,
            Split::Dev => Origin::Dev,
            Split::Test => Origin::OriginalTest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsaDataset {
    pub name: DatasetName,
    pub train: Vec<FsaSample>,
    pub dev: Vec<FsaSample>,
    pub test: Vec<FsaSample>,
    /// Normalized, sorted. Empty for TSA.
    pub category_space: Vec<String>,
}

impl FsaDataset {
    pub fn split(&self, split: Split) -> &[FsaSample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<FsaSample> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn task(&self) -> Task {
        self.name.task()
    }
}

fn record_err(path: &Path, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Record {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn validate_sample(
    s: &FsaSample,
    expected_task: Task,
    space: Option<&HashSet<String>>,
    path: &Path,
    line: usize,
) -> Result<(), DatasetError> {
    if s.sentence_id.trim().is_empty() {
        return Err(record_err(path, line, "empty sentence_id"));
    }
    let chars: Vec<char> = s.sentence.chars().collect();
    for (i, p) in s.pairs.iter().enumerate() {
        if p.task != expected_task {
            return Err(record_err(
                path,
                line,
                format!("pair {i}: task {:?}, dataset expects {expected_task:?}", p.task),
            ));
        }
        if p.first.trim().is_empty() {
            return Err(record_err(path, line, format!("pair {i}: empty first element")));
        }
        let span_text = match p.task {
            Task::Tsa if !p.is_null_target() => Some(&p.first),
            Task::Asa => p
                .target
                .as_ref()
                .filter(|t| !t.eq_ignore_ascii_case(NULL_TARGET)),
            _ => None,
        };
        if let Some(text) = span_text {
            match (p.from, p.to) {
                (Some(from), Some(to)) => {
                    if from > to || to > chars.len() {
                        return Err(record_err(
                            path,
                            line,
                            format!("pair {i}: span {from}..{to} outside sentence"),
                        ));
                    }
                    let got: String = chars[from..to].iter().collect();
                    if got != *text {
                        return Err(record_err(
                            path,
                            line,
                            format!("pair {i}: span {from}..{to} is {got:?}, expected {text:?}"),
                        ));
                    }
                }
                (None, None) => {
                    if !s.sentence.contains(text.as_str()) {
                        return Err(record_err(
                            path,
                            line,
                            format!("pair {i}: target {text:?} is not a substring of the sentence"),
                        ));
                    }
                }
                _ => return Err(record_err(path, line, format!("pair {i}: half-open span"))),
            }
        }
        if let (Task::Asa, Some(space)) = (p.task, space) {
            if !space.contains(&normalize_category(&p.first)) {
                return Err(record_err(
                    path,
                    line,
                    format!("pair {i}: category {:?} outside the category space", p.first),
                ));
            }
        }
    }
    Ok(())
}

fn read_split(path: &Path) -> Result<Vec<(usize, FsaSample)>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: FsaSample = serde_json::from_str(line)
            .map_err(|e| record_err(path, idx + 1, e.to_string()))?;
        out.push((idx + 1, sample));
    }
    Ok(out)
}

/// Loads a canonical dataset directory. Any malformed record aborts the load
/// with its file and line.
pub fn load_dataset(dir: &Path, name: DatasetName) -> Result<FsaDataset, DatasetError> {
    let task = name.task();
    let fixed_space: Option<HashSet<String>> = {
        let p = dir.join("categories.txt");
        if p.exists() {
            let text = std::fs::read_to_string(&p).map_err(|source| DatasetError::Io {
                path: p.clone(),
                source,
            })?;
            Some(
                text.lines()
                    .map(normalize_category)
                    .filter(|c| !c.is_empty())
                    .collect(),
            )
        } else {
            None
        }
    };

    let mut ds = FsaDataset {
        name,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        category_space: Vec::new(),
    };
    let mut found = false;
    let mut ids = HashSet::new();
    let mut space = BTreeSet::new();
    for split in Split::ALL {
        let path = dir.join(format!("{}.jsonl", split.as_str()));
        if !path.exists() {
            continue;
        }
        found = true;
        for (line, mut sample) in read_split(&path)? {
            validate_sample(&sample, task, fixed_space.as_ref(), &path, line)?;
            if !ids.insert((split, sample.sentence_id.clone())) {
                return Err(record_err(
                    &path,
                    line,
                    format!("duplicate sentence_id {}", sample.sentence_id),
                ));
            }
            if task == Task::Asa {
                for p in &mut sample.pairs {
                    p.first = normalize_category(&p.first);
                    space.insert(p.first.clone());
                }
            }
            sample.set_flags();
            ds.split_mut(split).push(sample);
        }
    }
    if !found {
        return Err(DatasetError::NoSplits(dir.to_path_buf()));
    }
    if task == Task::Asa {
        ds.category_space = match fixed_space {
            Some(s) => s.into_iter().collect::<BTreeSet<_>>().into_iter().collect(),
            None => space.into_iter().collect(),
        };
    }
    Ok(ds)
}

/// Writes the canonical directory form (flags included).
pub fn save_dataset(ds: &FsaDataset, dir: &Path) -> Result<(), DatasetError> {
    for split in Split::ALL {
        let samples = ds.split(split);
        if samples.is_empty() {
            continue;
        }
        crate::jsonl::write_jsonl(&dir.join(format!("{}.jsonl", split.as_str())), samples)?;
    }
    if !ds.category_space.is_empty() {
        let path = dir.join("categories.txt");
        std::fs::write(&path, ds.category_space.join("\n") + "\n")
            .map_err(|source| DatasetError::Io { path, source })?;
    }
    Ok(())
}

/// Recomputes `is_implicit`/`is_multiple` on every sample and returns the
/// flagged test counts `(implicit, multiple)`.
pub fn flag_hard(ds: &mut FsaDataset) -> (usize, usize) {
    for split in Split::ALL {
        for s in ds.split_mut(split) {
            s.set_flags();
        }
    }
    (
        ds.test.iter().filter(|s| s.is_implicit).count(),
        ds.test.iter().filter(|s| s.is_multiple).count(),
    )
}

/// Projects a hard-set sample (aspect-level pairs with targets) onto `task`.
fn project_hard_sample(s: &FsaSample, task: Task) -> FsaSample {
    let mut pairs: Vec<GoldPair> = Vec::new();
    for p in &s.pairs {
        let projected = match task {
            Task::Asa => GoldPair {
                task,
                first: normalize_category(&p.first),
                ..p.clone()
            },
            Task::Tsa => GoldPair {
                task,
                first: p.target.clone().unwrap_or_else(|| NULL_TARGET.to_string()),
                target: None,
                ..p.clone()
            },
        };
        let dup = pairs.iter_mut().find(|q| {
            q.first == projected.first
                && q.polarity == projected.polarity
                && (q.from, q.to) == (projected.from, projected.to)
        });
        match dup {
            // Explicit opinion words on any duplicate win.
            Some(q) => {
                if projected.opinion_words.as_ref().is_some_and(|w| !w.is_empty()) {
                    q.opinion_words = projected.opinion_words.clone();
                }
            }
            None => pairs.push(projected),
        }
    }
    let mut out = FsaSample {
        sentence_id: s.sentence_id.clone(),
        sentence: s.sentence.clone(),
        pairs,
        is_implicit: false,
        is_multiple: false,
        origin: Origin::HardSet,
    };
    out.set_flags();
    out
}

/// Appends a hard set's test samples to `base.test`.
pub fn merge_hard(base: &FsaDataset, hard: &FsaDataset) -> Result<FsaDataset, DatasetError> {
    let invalid = |reason: String| DatasetError::InvalidMerge {
        base: base.name,
        hard: hard.name,
        reason,
    };
    if !hard.name.is_hard() {
        return Err(invalid("not a hard set".to_string()));
    }
    if base.name.is_hard() {
        return Err(invalid("base is itself a hard set".to_string()));
    }
    if base.name.domain() != hard.name.domain() {
        return Err(invalid(format!(
            "domain mismatch ({:?} vs {:?})",
            base.name.domain(),
            hard.name.domain()
        )));
    }
    let existing: HashSet<&str> = base.test.iter().map(|s| s.sentence_id.as_str()).collect();
    if let Some(dup) = hard
        .test
        .iter()
        .find(|s| existing.contains(s.sentence_id.as_str()))
    {
        return Err(invalid(format!("sentence_id {} already in base test", dup.sentence_id)));
    }
    let mut merged = base.clone();
    let task = base.task();
    for s in &hard.test {
        merged.test.push(project_hard_sample(s, task));
    }
    if task == Task::Asa {
        let mut space: BTreeSet<String> = merged.category_space.iter().cloned().collect();
        let before = space.len();
        space.extend(hard.test.iter().flat_map(|s| s.pairs.iter().map(|p| normalize_category(&p.first))));
        if space.len() > before {
            log::warn!(
                "{} adds {} categories to the {} category space",
                hard.name,
                space.len() - before,
                base.name
            );
        }
        merged.category_space = space.into_iter().collect();
    }
    Ok(merged)
}

/// Loads a dataset and, when `hard_dir` is given, merges its hard set.
pub fn load_with_hard(
    dir: &Path,
    name: DatasetName,
    hard_dir: Option<&Path>,
) -> Result<FsaDataset, DatasetError> {
    let base = load_dataset(dir, name)?;
    match (hard_dir, name.hard_set()) {
        (Some(hd), Some(hard_name)) => {
            let hard = load_dataset(hd, hard_name)?;
            merge_hard(&base, &hard)
        }
        _ => Ok(base),
    }
}

// ---------------------------------------------------------------------------
// SemEval XML
// ---------------------------------------------------------------------------

fn xml_err(path: &Path, msg: impl Into<String>) -> DatasetError {
    DatasetError::Xml {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn parse_polarity(s: &str, path: &Path, sid: &str) -> Result<Polarity, DatasetError> {
    Polarity::parse_for(s, Task::Tsa)
        .ok_or_else(|| xml_err(path, format!("sentence {sid}: unknown polarity {s:?}")))
}

fn parse_offsets(
    node: roxmltree::Node,
    path: &Path,
    sid: &str,
) -> Result<(Option<usize>, Option<usize>), DatasetError> {
    let num = |attr: &str| -> Result<Option<usize>, DatasetError> {
        node.attribute(attr)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| xml_err(path, format!("sentence {sid}: bad {attr} offset {v:?}")))
            })
            .transpose()
    };
    Ok((num("from")?, num("to")?))
}

/// Reads SemEval-14 (`aspectTerm`/`aspectCategory`) or SemEval-16 (`Opinion`)
/// XML into samples for `task`. SemEval-16 TSA keeps only opinions with an
/// explicit target; `0..0` offsets and target `NULL` mean no target.
pub fn read_semeval_xml(
    path: &Path,
    task: Task,
    origin: Origin,
) -> Result<Vec<FsaSample>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| xml_err(path, e.to_string()))?;
    let mut out = Vec::new();
    for sent in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let sid = sent
            .attribute("id")
            .ok_or_else(|| xml_err(path, "sentence without id"))?
            .to_string();
        let sentence = sent
            .children()
            .find(|n| n.has_tag_name("text"))
            .and_then(|n| n.text())
            .ok_or_else(|| xml_err(path, format!("sentence {sid}: missing <text>")))?
            .to_string();
        let mut pairs = Vec::new();
        for node in sent.descendants() {
            let tag = node.tag_name().name();
            match (tag, task) {
                ("aspectTerm", Task::Tsa) => {
                    let term = node
                        .attribute("term")
                        .ok_or_else(|| xml_err(path, format!("sentence {sid}: aspectTerm without term")))?;
                    let (from, to) = parse_offsets(node, path, &sid)?;
                    pairs.push(GoldPair {
                        task,
                        first: term.to_string(),
                        polarity: parse_polarity(node.attribute("polarity").unwrap_or(""), path, &sid)?,
                        opinion_words: None,
                        from,
                        to,
                        target: None,
                    });
                }
                ("aspectCategory", Task::Asa) => {
                    let cat = node.attribute("category").ok_or_else(|| {
                        xml_err(path, format!("sentence {sid}: aspectCategory without category"))
                    })?;
                    pairs.push(GoldPair {
                        task,
                        first: normalize_category(cat),
                        polarity: parse_polarity(node.attribute("polarity").unwrap_or(""), path, &sid)?,
                        opinion_words: None,
                        from: None,
                        to: None,
                        target: None,
                    });
                }
                ("Opinion", _) => {
                    let polarity =
                        parse_polarity(node.attribute("polarity").unwrap_or(""), path, &sid)?;
                    let (from, to) = parse_offsets(node, path, &sid)?;
                    let target = node
                        .attribute("target")
                        .filter(|t| !t.eq_ignore_ascii_case(NULL_TARGET) && !t.is_empty())
                        .map(str::to_string);
                    let (from, to) = if target.is_some() { (from, to) } else { (None, None) };
                    match task {
                        Task::Asa => {
                            let cat = node.attribute("category").ok_or_else(|| {
                                xml_err(path, format!("sentence {sid}: Opinion without category"))
                            })?;
                            pairs.push(GoldPair {
                                task,
                                first: normalize_category(cat),
                                polarity,
                                opinion_words: None,
                                from,
                                to,
                                target,
                            });
                        }
                        Task::Tsa => {
                            if let Some(t) = target {
                                let dup = pairs.iter().any(|p: &GoldPair| {
                                    p.first == t && p.from == from && p.polarity == polarity
                                });
                                if !dup {
                                    pairs.push(GoldPair {
                                        task,
                                        first: t,
                                        polarity,
                                        opinion_words: None,
                                        from,
                                        to,
                                        target: None,
                                    });
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let mut sample = FsaSample {
            sentence_id: sid,
            sentence,
            pairs,
            is_implicit: false,
            is_multiple: false,
            origin,
        };
        sample.set_flags();
        out.push(sample);
    }
    Ok(out)
}

/// One opinion-word annotation line: `{sentence_id, first, opinion_words}`,
/// optionally pinned to a span with `from`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionAnnotation {
    pub sentence_id: String,
    pub first: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<usize>,
    pub opinion_words: Vec<String>,
}

/// Attaches opinion words to matching pairs; returns how many annotations
/// matched no pair.
pub fn apply_opinion_words(
    samples: &mut [FsaSample],
    annotations: &[OpinionAnnotation],
) -> usize {
    let mut by_sentence: HashMap<&str, Vec<&OpinionAnnotation>> = HashMap::new();
    for a in annotations {
        by_sentence.entry(a.sentence_id.as_str()).or_default().push(a);
    }
    let mut matched = HashSet::new();
    for s in samples.iter_mut() {
        let Some(anns) = by_sentence.get(s.sentence_id.as_str()) else {
            continue;
        };
        for p in &mut s.pairs {
            let key = p.key();
            for a in anns {
                let first = match p.task {
                    Task::Tsa => normalize_span(&a.first),
                    Task::Asa => normalize_category(&a.first),
                };
                if first == key && (a.from.is_none() || a.from == p.from) {
                    p.opinion_words
                        .get_or_insert_with(Vec::new)
                        .extend(a.opinion_words.iter().cloned());
                    matched.insert(*a as *const OpinionAnnotation);
                }
            }
        }
        s.set_flags();
    }
    annotations.len() - matched.len()
}

/// Converts SemEval XML files plus optional opinion-word annotations into a
/// canonical dataset.
pub fn convert_semeval(
    name: DatasetName,
    splits: &[(Split, PathBuf)],
    annotations: Option<&Path>,
) -> Result<FsaDataset, DatasetError> {
    let anns: Vec<OpinionAnnotation> = match annotations {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut ds = FsaDataset {
        name,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        category_space: Vec::new(),
    };
    let origin_for = |split: Split| if name.is_hard() { Origin::HardSet } else { split.origin() };
    let mut unmatched = anns.len();
    for (split, path) in splits {
        let mut samples = read_semeval_xml(path, name.task(), origin_for(*split))?;
        let missed = apply_opinion_words(&mut samples, &anns);
        unmatched = unmatched.min(missed);
        ds.split_mut(*split).extend(samples);
    }
    if unmatched > 0 && !splits.is_empty() {
        log::warn!("{unmatched} opinion-word annotations matched no pair");
    }
    if name.task() == Task::Asa {
        let space: BTreeSet<String> = Split::ALL
            .iter()
            .flat_map(|s| ds.split(*s).iter())
            .flat_map(|s| s.pairs.iter().map(|p| p.first.clone()))
            .collect();
        ds.category_space = space.into_iter().collect();
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub sentences: usize,
    /// Explicit (non-NULL) targets. For aspect-level data: distinct target spans.
    pub targets: Option<usize>,
    /// Aspect-level pairs; `None` for TSA.
    pub aspects: Option<usize>,
    /// Samples with implicit sentiment; `None` when the split has no
    /// opinion-word annotations.
    pub implicit: Option<usize>,
    pub multiple: usize,
    /// Pair-level implicit count, for comparing the two readings of `implicit`.
    pub implicit_pairs: Option<usize>,
    pub null_targets: usize,
}

pub fn split_stats(samples: &[FsaSample], task: Task) -> SplitStats {
    let annotated = samples.iter().any(FsaSample::has_opinion_annotations);
    let mut st = SplitStats {
        sentences: samples.len(),
        multiple: samples.iter().filter(|s| s.is_multiple).count(),
        ..Default::default()
    };
    match task {
        Task::Tsa => {
            st.targets = Some(
                samples
                    .iter()
                    .flat_map(|s| &s.pairs)
                    .filter(|p| !p.is_null_target())
                    .count(),
            );
            st.null_targets = samples
                .iter()
                .flat_map(|s| &s.pairs)
                .filter(|p| p.is_null_target())
                .count();
        }
        Task::Asa => {
            st.aspects = Some(samples.iter().map(|s| s.pairs.len()).sum());
            let mut with_targets = 0;
            let mut distinct = 0;
            for s in samples {
                let spans: HashSet<(&str, Option<usize>)> = s
                    .pairs
                    .iter()
                    .filter_map(|p| p.target.as_deref().map(|t| (t, p.from)))
                    .collect();
                distinct += spans.len();
                with_targets += usize::from(!spans.is_empty());
                st.null_targets += s.pairs.iter().filter(|p| p.target.is_none()).count();
            }
            st.targets = (with_targets > 0).then_some(distinct);
        }
    }
    if annotated {
        st.implicit = Some(samples.iter().filter(|s| s.is_implicit).count());
        st.implicit_pairs = Some(
            samples
                .iter()
                .flat_map(|s| &s.pairs)
                .filter(|p| p.is_implicit())
                .count(),
        );
    }
    st
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: DatasetName,
    pub train: SplitStats,
    pub dev: SplitStats,
    pub test: SplitStats,
    /// Test samples from the original test split only, when a hard set was merged.
    pub test_original: Option<SplitStats>,
    pub test_hard: Option<SplitStats>,
    pub category_count: usize,
}

pub fn dataset_stats(ds: &FsaDataset) -> DatasetStats {
    let task = ds.task();
    let has_hard = !ds.name.is_hard() && ds.test.iter().any(|s| s.origin == Origin::HardSet);
    let (orig, hard): (Vec<_>, Vec<_>) = ds
        .test
        .iter()
        .cloned()
        .partition(|s| s.origin != Origin::HardSet);
    DatasetStats {
        name: ds.name,
        train: split_stats(&ds.train, task),
        dev: split_stats(&ds.dev, task),
        test: split_stats(&ds.test, task),
        test_original: has_hard.then(|| split_stats(&orig, task)),
        test_hard: has_hard.then(|| split_stats(&hard, task)),
        category_count: ds.category_space.len(),
    }
}

/// `(sentences, targets, aspects, implicit, multiple)`.
pub type CountRow = (usize, Option<usize>, Option<usize>, Option<usize>, usize);

/// Published per-split counts for the original splits, used by `stats` to
/// flag discrepancies.
pub fn published_counts(name: DatasetName, split: Split) -> Option<CountRow> {
    use DatasetName::*;
    use Split::*;
    Some(match (name, split) {
        (TsaRest14, Train) => (2432, Some(2972), None, None, 277),
        (TsaRest14, Dev) => (609, Some(721), None, None, 78),
        (TsaRest14, Test) => (800, Some(1134), None, Some(192), 85),
        (TsaLaptop14, Train) => (2436, Some(1922), None, None, 148),
        (TsaLaptop14, Dev) => (609, Some(436), None, None, 34),
        (TsaLaptop14, Test) => (800, Some(654), None, Some(133), 40),
        (AsaRest16, Train) => (1600, Some(1386), Some(1823), None, 114),
        (AsaRest16, Dev) => (400, Some(386), Some(477), None, 29),
        (AsaRest16, Test) => (676, Some(623), Some(751), Some(199), 42),
        (AsaLaptop16, Train) => (2000, None, Some(2349), None, 126),
        (AsaLaptop16, Dev) => (500, None, Some(560), None, 25),
        (AsaLaptop16, Test) => (808, None, Some(801), Some(250), 35),
        (RestHard, Test) => (340, Some(383), Some(504), Some(285), 104),
        (LaptopHard, Test) => (237, Some(290), Some(382), Some(212), 59),
        _ => return None,
    })
}

/// Differences between computed and published counts for the original splits.
pub fn discrepancies(stats: &DatasetStats) -> Vec<String> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let Some((sent, trg, asp, imp, mul)) = published_counts(stats.name, split) else {
            continue;
        };
        let st = match split {
            Split::Train => &stats.train,
            Split::Dev => &stats.dev,
            Split::Test => stats.test_original.as_ref().unwrap_or(&stats.test),
        };
        if st.sentences == 0 {
            continue;
        }
        let mut check = |field: &str, got: Option<usize>, want: Option<usize>| {
            if want.is_some() && got != want {
                out.push(format!(
                    "{} {} {field}: computed {}, published {}",
                    stats.name,
                    split.as_str(),
                    got.map_or("-".to_string(), |v| v.to_string()),
                    want.map_or("-".to_string(), |v| v.to_string()),
                ));
            }
        };
        check("#Sent", Some(st.sentences), Some(sent));
        check("#Trg", st.targets, trg);
        check("#Asp", st.aspects, asp);
        check("#Imp", st.implicit, imp);
        check("#Mul", Some(st.multiple), Some(mul));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(first: &str, pol: Polarity, ow: Option<&[&str]>) -> GoldPair {
        GoldPair {
            task: Task::Tsa,
            first: first.to_string(),
            polarity: pol,
            opinion_words: ow.map(|w| w.iter().map(|s| s.to_string()).collect()),
            from: None,
            to: None,
            target: None,
        }
    }

    fn sample(id: &str, sentence: &str, pairs: Vec<GoldPair>) -> FsaSample {
        let mut s = FsaSample {
            sentence_id: id.to_string(),
            sentence: sentence.to_string(),
            pairs,
            is_implicit: false,
            is_multiple: false,
            origin: Origin::OriginalTest,
        };
        s.set_flags();
        s
    }

    #[test]
    fn multiple_flag() {
        let s = sample(
            "1",
            "A good, B bad",
            vec![pair("A", Polarity::Positive, None), pair("B", Polarity::Negative, None)],
        );
        assert!(s.is_multiple);
        let s = sample(
            "2",
            "A good, B good",
            vec![pair("A", Polarity::Positive, None), pair("B", Polarity::Positive, None)],
        );
        assert!(!s.is_multiple);
        let s = sample(
            "3",
            "A so-so, B good",
            vec![pair("A", Polarity::Conflict, None), pair("B", Polarity::Positive, None)],
        );
        assert!(s.is_multiple);
    }

    #[test]
    fn implicit_flag_needs_annotation() {
        let s = sample("1", "A", vec![pair("A", Polarity::Positive, None)]);
        assert!(!s.is_implicit);
        let s = sample("1", "A", vec![pair("A", Polarity::Positive, Some(&[]))]);
        assert!(s.is_implicit);
        let s = sample(
            "1",
            "A B",
            vec![
                pair("A", Polarity::Positive, Some(&["good"])),
                pair("B", Polarity::Positive, Some(&[])),
            ],
        );
        assert!(s.is_implicit);
    }

    fn write_split(dir: &Path, split: &str, samples: &[FsaSample]) {
        crate::jsonl::write_jsonl(&dir.join(format!("{split}.jsonl")), samples).unwrap();
    }

    #[test]
    fn load_validates_spans_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = pair("wine", Polarity::Positive, None);
        bad.from = Some(0);
        bad.to = Some(4);
        let good = sample("1", "The wine list", vec![pair("wine list", Polarity::Positive, None)]);
        let wrong = sample("2", "The wine list", vec![bad]);
        write_split(dir.path(), "test", &[good, wrong]);
        let err = load_dataset(dir.path(), DatasetName::TsaRest14).unwrap_err();
        match err {
            DatasetError::Record { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("span"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn load_rejects_non_substring_target() {
        let dir = tempfile::tempdir().unwrap();
        write_split(
            dir.path(),
            "train",
            &[sample("1", "The soup", vec![pair("bread", Polarity::Negative, None)])],
        );
        assert!(matches!(
            load_dataset(dir.path(), DatasetName::TsaRest14),
            Err(DatasetError::Record { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_gives_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("test.jsonl"), "").unwrap();
        let ds = load_dataset(dir.path(), DatasetName::AsaLaptop16).unwrap();
        assert!(ds.test.is_empty());
        let st = dataset_stats(&ds);
        assert_eq!(st.test.sentences, 0);
        assert_eq!(st.test.aspects, Some(0));
        assert!(matches!(
            load_dataset(&dir.path().join("missing"), DatasetName::AsaLaptop16),
            Err(DatasetError::NoSplits(_))
        ));
    }

    fn asa_pair(cat: &str, pol: Polarity, target: Option<&str>) -> GoldPair {
        GoldPair {
            task: Task::Asa,
            first: cat.to_string(),
            polarity: pol,
            opinion_words: Some(Vec::new()),
            from: None,
            to: None,
            target: target.map(str::to_string),
        }
    }

    fn asa_dataset(name: DatasetName, ids: &[&str]) -> FsaDataset {
        FsaDataset {
            name,
            train: Vec::new(),
            dev: Vec::new(),
            test: ids
                .iter()
                .map(|id| {
                    let mut s = sample(
                        id,
                        "The sushi was fresh but the waiter ignored us",
                        vec![
                            asa_pair("FOOD#QUALITY", Polarity::Positive, Some("sushi")),
                            asa_pair("SERVICE#GENERAL", Polarity::Negative, None),
                        ],
                    );
                    if name.is_hard() {
                        s.origin = Origin::HardSet;
                    }
                    s
                })
                .collect(),
            category_space: vec!["food quality".into(), "service general".into()],
        }
    }

    #[test]
    fn merge_counts_and_guards() {
        let base = asa_dataset(DatasetName::AsaRest16, &["b1", "b2", "b3"]);
        let hard = asa_dataset(DatasetName::RestHard, &["h1", "h2"]);
        let merged = merge_hard(&base, &hard).unwrap();
        assert_eq!(merged.test.len(), 5);
        assert_eq!(
            merged.test.iter().filter(|s| s.origin == Origin::HardSet).count(),
            2
        );
        assert!(matches!(
            merge_hard(&merged, &hard),
            Err(DatasetError::InvalidMerge { .. })
        ));

        let empty = asa_dataset(DatasetName::RestHard, &[]);
        assert_eq!(merge_hard(&base, &empty).unwrap(), base);

        let laptop = asa_dataset(DatasetName::AsaLaptop16, &["l1"]);
        assert!(matches!(
            merge_hard(&laptop, &hard),
            Err(DatasetError::InvalidMerge { .. })
        ));
    }

    #[test]
    fn hard_projection_to_tsa_keeps_null() {
        let mut base = asa_dataset(DatasetName::AsaRest16, &[]);
        base.name = DatasetName::TsaRest14;
        base.category_space.clear();
        let hard = asa_dataset(DatasetName::RestHard, &["h1"]);
        let merged = merge_hard(&base, &hard).unwrap();
        let firsts: Vec<_> = merged.test[0].pairs.iter().map(|p| p.first.as_str()).collect();
        assert_eq!(firsts, vec!["sushi", "NULL"]);
        assert!(merged.test[0].pairs[1].is_null_target());
        let st = split_stats(&merged.test, Task::Tsa);
        assert_eq!(st.targets, Some(1));
        assert_eq!(st.null_targets, 1);
    }

    #[test]
    fn semeval14_and_16_xml() {
        let dir = tempfile::tempdir().unwrap();
        let x14 = dir.path().join("r14.xml");
        std::fs::write(
            &x14,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<sentences>
  <sentence id="3121">
    <text>But the staff was so horrible to us.</text>
    <aspectTerms><aspectTerm term="staff" polarity="negative" from="8" to="13"/></aspectTerms>
    <aspectCategories><aspectCategory category="service" polarity="negative"/></aspectCategories>
  </sentence>
  <sentence id="2777"><text>To be completely fair, the only redeeming factor was the food.</text></sentence>
</sentences>"#,
        )
        .unwrap();
        let s = read_semeval_xml(&x14, Task::Tsa, Origin::OriginalTest).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].pairs[0].first, "staff");
        assert_eq!(s[0].pairs[0].from, Some(8));
        assert!(s[1].pairs.is_empty());

        let x16 = dir.path().join("r16.xml");
        std::fs::write(
            &x16,
            r#"<Reviews><Review rid="1"><sentences>
  <sentence id="1:0"><text>Judging from previous posts this used to be a good place, but not any longer.</text>
    <Opinions>
      <Opinion target="place" category="RESTAURANT#GENERAL" polarity="negative" from="51" to="56"/>
      <Opinion target="NULL" category="SERVICE#GENERAL" polarity="negative" from="0" to="0"/>
    </Opinions>
  </sentence>
</sentences></Review></Reviews>"#,
        )
        .unwrap();
        let asa = read_semeval_xml(&x16, Task::Asa, Origin::OriginalTest).unwrap();
        assert_eq!(asa[0].pairs.len(), 2);
        assert_eq!(asa[0].pairs[0].first, "restaurant general");
        assert_eq!(asa[0].pairs[0].target.as_deref(), Some("place"));
        assert_eq!(asa[0].pairs[1].target, None);
        let tsa = read_semeval_xml(&x16, Task::Tsa, Origin::OriginalTest).unwrap();
        assert_eq!(tsa[0].pairs.len(), 1);

        let mut samples = s;
        let missed = apply_opinion_words(
            &mut samples,
            &[OpinionAnnotation {
                sentence_id: "3121".into(),
                first: "Staff".into(),
                from: None,
                opinion_words: vec!["horrible".into()],
            }],
        );
        assert_eq!(missed, 0);
        assert_eq!(samples[0].pairs[0].opinion_words, Some(vec!["horrible".to_string()]));
        assert!(!samples[0].is_implicit);
    }

    #[test]
    fn discrepancy_report() {
        let ds = FsaDataset {
            name: DatasetName::TsaRest14,
            train: Vec::new(),
            dev: Vec::new(),
            test: vec![sample("1", "A", vec![pair("A", Polarity::Positive, Some(&[]))])],
            category_space: Vec::new(),
        };
        let d = discrepancies(&dataset_stats(&ds));
        assert!(d.iter().any(|l| l.contains("#Sent: computed 1, published 800")));
    }

    #[test]
    fn names_parse() {
        assert_eq!("TSA-Rest14".parse::<DatasetName>().unwrap(), DatasetName::TsaRest14);
        assert_eq!("rest_hard".parse::<DatasetName>().unwrap(), DatasetName::RestHard);
        assert!("rest15".parse::<DatasetName>().is_err());
        assert_eq!(DatasetName::AsaLaptop16.hard_set(), Some(DatasetName::LaptopHard));
    }

    fn arb_pair() -> impl Strategy<Value = GoldPair> {
        (
            proptest::sample::select(vec!["a", "b", "c"]),
            proptest::sample::select(vec![
                Polarity::Negative,
                Polarity::Neutral,
                Polarity::Positive,
                Polarity::Conflict,
            ]),
            proptest::option::of(proptest::collection::vec("[a-z]{1,5}", 0..2)),
        )
            .prop_map(|(f, p, ow)| GoldPair {
                task: Task::Tsa,
                first: f.to_string(),
                polarity: p,
                opinion_words: ow,
                from: None,
                to: None,
                target: None,
            })
    }

    proptest! {
        #[test]
        fn flags_match_definitions(pairs in proptest::collection::vec(arb_pair(), 0..6)) {
            let s = sample("x", "a b c", pairs.clone());
            let distinct: HashSet<_> = pairs.iter().map(|p| p.polarity).collect();
            prop_assert_eq!(s.is_multiple, distinct.len() >= 2);
            let any_empty = pairs.iter().any(|p| matches!(&p.opinion_words, Some(w) if w.is_empty()));
            prop_assert_eq!(s.is_implicit, any_empty);
        }

        #[test]
        fn load_save_load_identity(samples in proptest::collection::vec(
            proptest::collection::vec(arb_pair(), 0..4), 0..10)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let samples: Vec<FsaSample> = samples
                .into_iter()
                .enumerate()
                .map(|(i, p)| sample(&i.to_string(), "a b c", p))
                .collect();
            write_split(dir.path(), "test", &samples);
            let first = load_dataset(dir.path(), DatasetName::TsaLaptop14).unwrap();
            let out = tempfile::tempdir().unwrap();
            save_dataset(&first, out.path()).unwrap();
            if !first.test.is_empty() {
                let second = load_dataset(out.path(), DatasetName::TsaLaptop14).unwrap();
                prop_assert_eq!(first, second);
            }
        }
    }
}
