//! Benchmark scoring: exact-match micro F1 over (target/category, polarity)
//! pairs with implicit/multiple subsets, zero-shot accuracy, run aggregation,
//! human-evaluation tables and error-type proportions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{FsaSample, GoldPair};
use crate::llm_client::TeacherTag;
use crate::parser::{normalize_category, normalize_span, Polarity, PredPair, Task, NULL_TARGET};
use crate::report::{align, pct, round_half_up};
use crate::sampler::Domain;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("prediction for unknown sentence_id {0}")]
    UnknownSentence(String),
    #[error("sentence_id {0} predicted more than once")]
    DuplicatePrediction(String),
    #[error("{} gold instances have no prediction, e.g. {}", .0.len(), .0.iter().take(5).cloned().collect::<Vec<_>>().join(", "))]
    MissingPredictions(Vec<String>),
    #[error("prediction for unknown instance {0}")]
    UnknownInstance(String),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("items without exactly two annotators: {0:?}")]
    AnnotatorCount(Vec<String>),
    #[error("record {item} by {annotator}: {msg}")]
    BadScore {
        item: String,
        annotator: String,
        msg: String,
    },
    #[error("{labels} labels exceed {total} sampled predictions")]
    TooManyLabels { labels: usize, total: usize },
    #[error("prediction {0} labeled more than once")]
    DuplicateLabel(String),
    #[error("unknown subset {0:?} (expected all, imp or mul)")]
    BadSubset(String),
    #[error("unknown subset policy {0:?} (expected sentence or pair)")]
    BadPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrfScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfScore {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Imp,
    Mul,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Imp => "imp",
            Subset::Mul => "mul",
        }
    }
}

impl FromStr for Subset {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "all" => Ok(Subset::All),
            "imp" => Ok(Subset::Imp),
            "mul" => Ok(Subset::Mul),
            _ => Err(EvalError::BadSubset(s.to_string())),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How `imp`/`mul` restrict scoring. `Sentence` scores every pair of flagged
/// sentences. `Pair` scores only implicit gold pairs (for `mul` the two agree,
/// since multiplicity is a sentence property); predictions matching an
/// unflagged gold pair are then neither right nor wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetPolicy {
    #[default]
    Sentence,
    Pair,
}

impl FromStr for SubsetPolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "sentence" => Ok(SubsetPolicy::Sentence),
            "pair" => Ok(SubsetPolicy::Pair),
            _ => Err(EvalError::BadPolicy(s.to_string())),
        }
    }
}

/// Extraction prediction file line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sentence_id: String,
    pub pairs: Vec<PredPair>,
}

fn norm_first(task: Task, s: &str) -> String {
    match task {
        Task::Tsa => normalize_span(s),
        Task::Asa => normalize_category(s),
    }
}

/// Exact-match one-to-one counts between two pair multisets.
/// Returns (tp, fp, fn).
pub fn match_counts<K: Eq + std::hash::Hash>(gold: &[K], pred: &[K]) -> (usize, usize, usize) {
    let mut avail: HashMap<&K, usize> = HashMap::new();
    for g in gold {
        *avail.entry(g).or_default() += 1;
    }
    let mut tp = 0;
    for p in pred {
        if let Some(n) = avail.get_mut(p) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    (tp, pred.len() - tp, gold.len() - tp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub subset: Subset,
    pub policy: SubsetPolicy,
    pub score: PrfScore,
    pub sentences: usize,
    /// TSA gold pairs with a NULL target, left out of scoring.
    pub excluded_null_gold: usize,
    /// TSA predicted pairs with a NULL target, left out of scoring.
    pub excluded_null_pred: usize,
}

type Key = (String, Polarity);

fn gold_keys(pairs: &[GoldPair], task: Task, only_implicit: bool) -> (Vec<Key>, Vec<Key>, usize) {
    let mut flagged = Vec::new();
    let mut other = Vec::new();
    let mut nulls = 0;
    for p in pairs {
        if task == Task::Tsa && p.first.eq_ignore_ascii_case(NULL_TARGET) {
            nulls += 1;
            continue;
        }
        let key = (norm_first(task, &p.first), p.polarity);
        if !only_implicit || p.is_implicit() {
            flagged.push(key);
        } else {
            other.push(key);
        }
    }
    (flagged, other, nulls)
}

/// Micro P/R/F1 of `preds` against the `gold` samples of a `task` split.
/// Sentences without a prediction count as predicting nothing.
pub fn pair_f1(
    preds: &[Prediction],
    gold: &[FsaSample],
    task: Task,
    subset: Subset,
    policy: SubsetPolicy,
) -> Result<F1Report, EvalError> {
    let index: HashMap<&str, usize> = gold
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sentence_id.as_str(), i))
        .collect();
    let mut by_sentence: HashMap<usize, &Prediction> = HashMap::new();
    for p in preds {
        let i = *index
            .get(p.sentence_id.as_str())
            .ok_or_else(|| EvalError::UnknownSentence(p.sentence_id.clone()))?;
        if by_sentence.insert(i, p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.sentence_id.clone()));
        }
    }

    let pair_level = policy == SubsetPolicy::Pair && subset == Subset::Imp;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut report = F1Report {
        subset,
        policy,
        score: PrfScore::from_counts(0, 0, 0),
        sentences: 0,
        excluded_null_gold: 0,
        excluded_null_pred: 0,
    };
    for (i, sample) in gold.iter().enumerate() {
        let included = match subset {
            Subset::All => true,
            Subset::Imp if pair_level => sample.pairs.iter().any(GoldPair::is_implicit),
            Subset::Imp => sample.is_implicit,
            Subset::Mul => sample.is_multiple,
        };
        if !included {
            continue;
        }
        report.sentences += 1;
        let (flagged, other, nulls) = gold_keys(&sample.pairs, task, pair_level);
        report.excluded_null_gold += nulls;
        let mut pred_keys: Vec<Key> = Vec::new();
        for p in by_sentence.get(&i).map(|p| p.pairs.as_slice()).unwrap_or(&[]) {
            if task == Task::Tsa && p.first.trim().eq_ignore_ascii_case(NULL_TARGET) {
                report.excluded_null_pred += 1;
                continue;
            }
            pred_keys.push((norm_first(task, &p.first), p.polarity));
        }
        let (t, f, n) = match_counts(&flagged, &pred_keys);
        tp += t;
        fn_ += n;
        if pair_level {
            // Unmatched predictions that hit an unflagged gold pair are ignored.
            let mut left: Vec<Key> = Vec::new();
            let mut avail: HashMap<&Key, usize> = HashMap::new();
            for g in &flagged {
                *avail.entry(g).or_default() += 1;
            }
            for p in &pred_keys {
                match avail.get_mut(p) {
                    Some(n) if *n > 0 => *n -= 1,
                    _ => left.push(p.clone()),
                }
            }
            let (absorbed, _, _) = match_counts(&other, &left);
            fp += left.len() - absorbed;
        } else {
            fp += f;
        }
    }
    report.score = PrfScore::from_counts(tp, fp, fn_);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Zero-shot
// ---------------------------------------------------------------------------

/// Zero-shot prediction file line: one polarity per (sentence, target/category).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroshotPrediction {
    pub sentence_id: String,
    pub first: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub subset: Subset,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

/// Classification instances of a split: every non-NULL gold pair.
pub fn zeroshot_instances(gold: &[FsaSample], task: Task) -> Vec<(String, String, Polarity)> {
    gold.iter()
        .flat_map(|s| {
            s.pairs
                .iter()
                .filter(move |p| !(task == Task::Tsa && p.first.eq_ignore_ascii_case(NULL_TARGET)))
                .map(move |p| (s.sentence_id.clone(), p.first.clone(), p.polarity))
        })
        .collect()
}

pub fn zeroshot_accuracy(
    preds: &[ZeroshotPrediction],
    gold: &[FsaSample],
    task: Task,
    subset: Subset,
) -> Result<AccuracyReport, EvalError> {
    let mut lookup: HashMap<(String, String), Polarity> = HashMap::new();
    for p in preds {
        lookup.insert((p.sentence_id.clone(), norm_first(task, &p.first)), p.polarity);
    }
    let known: HashSet<(String, String)> = gold
        .iter()
        .flat_map(|s| {
            s.pairs
                .iter()
                .map(move |p| (s.sentence_id.clone(), norm_first(task, &p.first)))
        })
        .collect();
    if let Some(extra) = lookup.keys().find(|k| !known.contains(*k)) {
        return Err(EvalError::UnknownInstance(format!("{}/{}", extra.0, extra.1)));
    }
    let mut missing = Vec::new();
    let (mut correct, mut total) = (0, 0);
    for s in gold {
        let included = match subset {
            Subset::All => true,
            Subset::Imp => s.is_implicit,
            Subset::Mul => s.is_multiple,
        };
        for p in &s.pairs {
            if task == Task::Tsa && p.first.eq_ignore_ascii_case(NULL_TARGET) {
                continue;
            }
            let key = (s.sentence_id.clone(), norm_first(task, &p.first));
            match lookup.get(&key) {
                None => missing.push(format!("{}/{}", key.0, p.first)),
                Some(pol) if included => {
                    total += 1;
                    correct += usize::from(*pol == p.polarity);
                }
                Some(_) => {}
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }
    Ok(AccuracyReport {
        subset,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
    })
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub n: usize,
}

pub fn aggregate_runs(values: &[f64]) -> Result<RunSummary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(RunSummary {
        mean,
        stddev: var.sqrt(),
        n: values.len(),
    })
}

// ---------------------------------------------------------------------------
// Human evaluation
// ---------------------------------------------------------------------------

pub const DIMENSIONS: [&str; 6] = [
    "ta_precision",
    "ta_recall",
    "senti_accuracy",
    "reas_persuasiveness",
    "reas_exhaustiveness",
    "reas_hallucination",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub ta_precision: f64,
    pub ta_recall: f64,
    pub senti_accuracy: f64,
    pub reas_persuasiveness: f64,
    pub reas_exhaustiveness: f64,
    pub reas_hallucination: f64,
}

impl DimensionScores {
    pub fn to_array(self) -> [f64; 6] {
        [
            self.ta_precision,
            self.ta_recall,
            self.senti_accuracy,
            self.reas_persuasiveness,
            self.reas_exhaustiveness,
            self.reas_hallucination,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        DimensionScores {
            ta_precision: a[0],
            ta_recall: a[1],
            senti_accuracy: a[2],
            reas_persuasiveness: a[3],
            reas_exhaustiveness: a[4],
            reas_hallucination: a[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalRecord {
    pub item_id: String,
    pub model: TeacherTag,
    pub domain: Domain,
    pub annotator_id: String,
    pub scores: DimensionScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalRow {
    pub model: TeacherTag,
    pub domain: Domain,
    pub items: usize,
    pub means: DimensionScores,
    /// Mean of the six dimension means.
    pub avg: f64,
}

/// Per-item average of the two annotators, then per-(model, domain) means.
pub fn humaneval_aggregate(records: &[HumanEvalRecord]) -> Result<Vec<HumanEvalRow>, EvalError> {
    type ItemKey = (TeacherTag, Domain, String);
    let mut items: BTreeMap<ItemKey, Vec<&HumanEvalRecord>> = BTreeMap::new();
    for r in records {
        for (dim, v) in DIMENSIONS.iter().zip(r.scores.to_array()) {
            if !(v == 0.0 || v == 1.0 || v == 2.0) {
                return Err(EvalError::BadScore {
                    item: r.item_id.clone(),
                    annotator: r.annotator_id.clone(),
                    msg: format!("{dim} = {v}, expected 0, 1 or 2"),
                });
            }
        }
        items
            .entry((r.model.clone(), r.domain, r.item_id.clone()))
            .or_default()
            .push(r);
    }
    let bad: Vec<String> = items
        .iter()
        .filter(|(_, rs)| {
            let annotators: HashSet<&str> = rs.iter().map(|r| r.annotator_id.as_str()).collect();
            rs.len() != 2 || annotators.len() != 2
        })
        .map(|((m, d, id), rs)| format!("{m}/{d:?}/{id} ({} records)", rs.len()))
        .collect();
    if !bad.is_empty() {
        return Err(EvalError::AnnotatorCount(bad));
    }
    let mut cells: BTreeMap<(TeacherTag, Domain), Vec<[f64; 6]>> = BTreeMap::new();
    for ((model, domain, _), rs) in &items {
        let a = rs[0].scores.to_array();
        let b = rs[1].scores.to_array();
        let avg: [f64; 6] = std::array::from_fn(|i| (a[i] + b[i]) / 2.0);
        cells.entry((model.clone(), *domain)).or_default().push(avg);
    }
    Ok(cells
        .into_iter()
        .map(|((model, domain), rows)| {
            let n = rows.len() as f64;
            let means: [f64; 6] = std::array::from_fn(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n);
            HumanEvalRow {
                model,
                domain,
                items: rows.len(),
                means: DimensionScores::from_array(means),
                avg: means.iter().sum::<f64>() / 6.0,
            }
        })
        .collect())
}

pub fn format_humaneval_table(rows: &[HumanEvalRow]) -> String {
    let mut out = vec![vec![
        "Model".to_string(),
        "Domain".to_string(),
        "TA-P".to_string(),
        "TA-R".to_string(),
        "Senti-Acc".to_string(),
        "Reas-Pers".to_string(),
        "Reas-Exh".to_string(),
        "Reas-Hal".to_string(),
        "Avg".to_string(),
    ]];
    for r in rows {
        let mut row = vec![r.model.to_string(), format!("{:?}", r.domain).to_lowercase()];
        row.extend(
            r.means
                .to_array()
                .iter()
                .map(|v| format!("{:.2}", round_half_up(*v, 2))),
        );
        row.push(format!("{:.2}", round_half_up(r.avg, 2)));
        out.push(row);
    }
    align(&out)
}

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorType {
    Type1,
    Type2,
    Type3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLabel {
    pub prediction_id: String,
    #[serde(rename = "type")]
    pub error_type: ErrorType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub total_sampled: usize,
    pub counts: [usize; 3],
    /// count / total_sampled for type1..type3.
    pub proportions: [f64; 3],
}

pub fn error_report(labels: &[ErrorLabel], total_sampled: usize) -> Result<ErrorReport, EvalError> {
    if labels.len() > total_sampled {
        return Err(EvalError::TooManyLabels {
            labels: labels.len(),
            total: total_sampled,
        });
    }
    let mut seen = HashSet::new();
    let mut counts = [0usize; 3];
    for l in labels {
        if !seen.insert(l.prediction_id.as_str()) {
            return Err(EvalError::DuplicateLabel(l.prediction_id.clone()));
        }
        counts[l.error_type as usize] += 1;
    }
    let proportions = counts.map(|c| {
        if total_sampled == 0 {
            0.0
        } else {
            c as f64 / total_sampled as f64
        }
    });
    Ok(ErrorReport {
        total_sampled,
        counts,
        proportions,
    })
}

pub fn format_error_table(label: &str, r: &ErrorReport) -> String {
    align(&[
        vec![
            "Setting".to_string(),
            "Type 1".to_string(),
            "Type 2".to_string(),
            "Type 3".to_string(),
            "Sampled".to_string(),
        ],
        vec![
            label.to_string(),
            pct(r.proportions[0]),
            pct(r.proportions[1]),
            pct(r.proportions[2]),
            r.total_sampled.to_string(),
        ],
    ])
}

/// Rows of `(setting, subset → F1)` as percentages with two decimals.
pub fn format_f1_table(rows: &[(String, Vec<F1Report>)]) -> String {
    let mut subsets: Vec<Subset> = Vec::new();
    for (_, reps) in rows {
        for r in reps {
            if !subsets.contains(&r.subset) {
                subsets.push(r.subset);
            }
        }
    }
    let mut out = vec![std::iter::once("Setting".to_string())
        .chain(subsets.iter().map(|s| s.as_str().to_string()))
        .collect::<Vec<_>>()];
    for (name, reps) in rows {
        let mut row = vec![name.clone()];
        for s in &subsets {
            row.push(
                reps.iter()
                    .find(|r| r.subset == *s)
                    .map_or("-".to_string(), |r| pct(r.score.f1)),
            );
        }
        out.push(row);
    }
    align(&out)
}
