//! Seq2seq pretraining pairs `(x, u)`: x is the review, u the teacher's
//! understanding text (structured analysis or rewrite), plus the two
//! analysis ablations and sharded corpus output.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::jsonl::{sha256_file, write_jsonl, JsonlError};
use crate::llm_client::TeacherTag;
use crate::parser::{format_quadruples_with, BlockFields, Quadruple};
use crate::prompts::PromptKind;
use crate::sampler::{RawReview, Source};

pub const INPUT_CAP: usize = 128;
pub const OUTPUT_CAP: usize = 400;
pub const SHARD_SIZE: usize = 50_000;
/// Whitespace tokens are scaled by this to upper-bound subword counts.
pub const TOKEN_FACTOR: f64 = 1.3;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown variant {0:?} (expected anl, rw, anl_no_r, anl_no_l or merged)")]
    BadVariant(String),
    #[error("shard size must be positive")]
    ZeroShardSize,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: checksum mismatch (manifest {expected}, file {actual})")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Anl,
    Rw,
    AnlNoR,
    AnlNoL,
    Merged,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Anl => "anl",
            Variant::Rw => "rw",
            Variant::AnlNoR => "anl_no_r",
            Variant::AnlNoL => "anl_no_l",
            Variant::Merged => "merged",
        }
    }

    /// The prompt whose completions feed this variant.
    fn prompt_kind(self) -> Option<PromptKind> {
        match self {
            Variant::Rw => Some(PromptKind::Rewriting),
            Variant::Merged => None,
            _ => Some(PromptKind::Analysis),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_lowercase().replace('-', "_").as_str() {
            "anl" => Variant::Anl,
            "rw" => Variant::Rw,
            "anl_no_r" => Variant::AnlNoR,
            "anl_no_l" => Variant::AnlNoL,
            "merged" => Variant::Merged,
            _ => return Err(CorpusError::BadVariant(s.to_string())),
        })
    }
}

/// Parsed teacher output for one review, as written by `parse`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnderstandingRecord {
    pub review_id: String,
    pub teacher: TeacherTag,
    pub prompt_kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadruples: Option<Vec<Quadruple>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<String>,
}

/// One pretraining pair. In a merged corpus each pair keeps the variant of
/// the prompt it came from (`anl` or `rw`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPair {
    pub review_id: String,
    pub x: String,
    pub u: String,
    pub variant: Variant,
    pub teacher: TeacherTag,
    pub source: Source,
}

pub fn proxy_tokens(text: &str) -> usize {
    let ws = text.split_whitespace().count();
    (ws as f64 * TOKEN_FACTOR).ceil() as usize
}

/// Cuts `text` after the last whitespace token that keeps the proxy count
/// within `cap`, preserving the original spacing before that point.
pub fn truncate_to_cap(text: &str, cap: usize) -> (String, bool) {
    if proxy_tokens(text) <= cap {
        return (text.to_string(), false);
    }
    let mut keep = 0usize;
    while ((keep + 1) as f64 * TOKEN_FACTOR).ceil() as usize <= cap {
        keep += 1;
    }
    if keep == 0 {
        return (String::new(), true);
    }
    let mut end = 0;
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                seen += 1;
                end = i;
                in_token = false;
                if seen == keep {
                    break;
                }
            }
        } else {
            in_token = true;
        }
    }
    (text[..end].to_string(), true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthCaps {
    pub input: usize,
    pub output: usize,
}

impl Default for LengthCaps {
    fn default() -> Self {
        LengthCaps {
            input: INPUT_CAP,
            output: OUTPUT_CAP,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub records_seen: usize,
    pub pairs_kept: usize,
    pub missing_review: usize,
    pub wrong_kind: usize,
    pub empty_output: usize,
    pub other_teacher: usize,
    pub truncated_x: usize,
    pub truncated_u: usize,
}

/// u for an analysis-derived variant.
pub fn analysis_target(quads: &[Quadruple], variant: Variant) -> String {
    let fields = match variant {
        Variant::AnlNoR => BlockFields {
            labels: true,
            reasoning: false,
        },
        Variant::AnlNoL => BlockFields {
            labels: false,
            reasoning: true,
        },
        _ => BlockFields::FULL,
    };
    format_quadruples_with(quads, fields)
}

fn pair_for(
    rec: &UnderstandingRecord,
    review: &RawReview,
    variant: Variant,
    caps: LengthCaps,
    report: &mut BuildReport,
) -> Option<CorpusPair> {
    let u = match variant {
        Variant::Rw => rec.rewrite.clone().unwrap_or_default(),
        _ => analysis_target(rec.quadruples.as_deref().unwrap_or(&[]), variant),
    };
    if u.trim().is_empty() || review.text.trim().is_empty() {
        report.empty_output += 1;
        return None;
    }
    let (x, tx) = truncate_to_cap(&review.text, caps.input);
    let (u, tu) = truncate_to_cap(&u, caps.output);
    report.truncated_x += usize::from(tx);
    report.truncated_u += usize::from(tu);
    if x.is_empty() || u.is_empty() {
        report.empty_output += 1;
        return None;
    }
    Some(CorpusPair {
        review_id: rec.review_id.clone(),
        x,
        u,
        variant,
        teacher: rec.teacher.clone(),
        source: review.source,
    })
}

/// Builds pairs for `variant`, optionally restricted to one teacher. Output is
/// sorted by (review_id, variant, teacher) so it does not depend on record order.
pub fn build_pairs(
    records: &[UnderstandingRecord],
    reviews: &HashMap<&str, &RawReview>,
    variant: Variant,
    teacher: Option<&TeacherTag>,
    caps: LengthCaps,
) -> (Vec<CorpusPair>, BuildReport) {
    let mut report = BuildReport::default();
    let mut out = Vec::new();
    for rec in records {
        report.records_seen += 1;
        if teacher.is_some_and(|t| *t != rec.teacher) {
            report.other_teacher += 1;
            continue;
        }
        let pair_variant = match (variant, rec.prompt_kind) {
            (Variant::Merged, PromptKind::Analysis) => Variant::Anl,
            (Variant::Merged, PromptKind::Rewriting) => Variant::Rw,
            (v, k) if v.prompt_kind() == Some(k) => v,
            _ => {
                report.wrong_kind += 1;
                continue;
            }
        };
        let Some(review) = reviews.get(rec.review_id.as_str()) else {
            log::error!(
                "record for review {} ({}, {}) has no review text; skipped",
                rec.review_id,
                rec.teacher,
                rec.prompt_kind
            );
            report.missing_review += 1;
            continue;
        };
        if let Some(p) = pair_for(rec, review, pair_variant, caps, &mut report) {
            out.push(p);
        }
    }
    out.sort_by(|a, b| {
        (&a.review_id, a.variant, &a.teacher).cmp(&(&b.review_id, b.variant, &b.teacher))
    });
    report.pairs_kept = out.len();
    (out, report)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

pub const HIST_BUCKET: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    /// Keyed by `teacher/source/prompt_kind`.
    pub counts: BTreeMap<String, usize>,
    /// Proxy-token length histograms keyed by bucket start.
    pub x_hist: BTreeMap<usize, usize>,
    pub u_hist: BTreeMap<usize, usize>,
}

pub fn count_key(teacher: &TeacherTag, source: Source, kind: &str) -> String {
    format!("{teacher}/{source}/{kind}")
}

impl CorpusStats {
    pub fn add(&mut self, p: &CorpusPair) {
        self.total += 1;
        let kind = match p.variant {
            Variant::Rw => "rw",
            _ => "anl",
        };
        *self.counts.entry(count_key(&p.teacher, p.source, kind)).or_default() += 1;
        *self.x_hist.entry(proxy_tokens(&p.x) / HIST_BUCKET * HIST_BUCKET).or_default() += 1;
        *self.u_hist.entry(proxy_tokens(&p.u) / HIST_BUCKET * HIST_BUCKET).or_default() += 1;
    }

    /// Associative, order-independent combination.
    pub fn merge(&mut self, other: &CorpusStats) {
        self.total += other.total;
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_default() += v;
        }
        for (mine, theirs) in [(&mut self.x_hist, &other.x_hist), (&mut self.u_hist, &other.u_hist)] {
            for (k, v) in theirs {
                *mine.entry(*k).or_default() += v;
            }
        }
    }

    pub fn count(&self, teacher: &TeacherTag, source: Source, kind: &str) -> usize {
        self.counts
            .get(&count_key(teacher, source, kind))
            .copied()
            .unwrap_or(0)
    }
}

pub fn corpus_stats<'a>(pairs: impl IntoIterator<Item = &'a CorpusPair>) -> CorpusStats {
    let mut st = CorpusStats::default();
    for p in pairs {
        st.add(p);
    }
    st
}

/// Teacher rows against (source, prompt) columns.
pub fn format_stats_table(st: &CorpusStats) -> String {
    let mut teachers: Vec<String> = st
        .counts
        .keys()
        .filter_map(|k| k.split('/').next().map(str::to_string))
        .collect();
    teachers.dedup();
    let cols = [
        (Source::Yelp, "anl"),
        (Source::Yelp, "rw"),
        (Source::Amazon, "anl"),
        (Source::Amazon, "rw"),
    ];
    let mut rows = vec![std::iter::once("Teacher".to_string())
        .chain(cols.iter().map(|(s, k)| format!("{s}/{k}")))
        .collect::<Vec<_>>()];
    for t in &teachers {
        let mut row = vec![t.clone()];
        for (s, k) in cols {
            let key = format!("{t}/{s}/{k}");
            row.push(st.counts.get(&key).copied().unwrap_or(0).to_string());
        }
        rows.push(row);
    }
    let mut total = vec!["Total".to_string()];
    for (s, k) in cols {
        let sum: usize = st
            .counts
            .iter()
            .filter(|(key, _)| key.ends_with(&format!("/{s}/{k}")))
            .map(|(_, v)| v)
            .sum();
        total.push(sum.to_string());
    }
    rows.push(total);
    crate::report::align(&rows)
}

// ---------------------------------------------------------------------------
// Shards
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub pairs: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<TeacherTag>,
    pub caps: LengthCaps,
    pub total_pairs: usize,
    pub shards: Vec<ShardInfo>,
    pub build: BuildReport,
    pub stats: CorpusStats,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `shard-NNNNN.jsonl` files and `manifest.json` into `dir`.
pub fn write_corpus(
    pairs: &[CorpusPair],
    dir: &Path,
    shard_size: usize,
    variant: Variant,
    teacher: Option<TeacherTag>,
    caps: LengthCaps,
    build: BuildReport,
) -> Result<CorpusManifest, CorpusError> {
    if shard_size == 0 {
        return Err(CorpusError::ZeroShardSize);
    }
    std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut shards = Vec::new();
    for (i, chunk) in pairs.chunks(shard_size).enumerate() {
        let file = format!("shard-{i:05}.jsonl");
        let path = dir.join(&file);
        write_jsonl(&path, chunk)?;
        let sha256 = sha256_file(&path).map_err(|source| CorpusError::Io { path, source })?;
        shards.push(ShardInfo {
            file,
            pairs: chunk.len(),
            sha256,
        });
    }
    let manifest = CorpusManifest {
        variant,
        teacher,
        caps,
        total_pairs: pairs.len(),
        shards,
        build,
        stats: corpus_stats(pairs),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(JsonlError::from)?;
    std::fs::write(&path, json + "\n").map_err(|source| CorpusError::Io { path, source })?;
    Ok(manifest)
}

/// Reads a corpus directory back, verifying shard checksums and counts.
pub fn read_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<CorpusPair>), CorpusError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io {
        path: path.clone(),
        source,
    })?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    let mut pairs = Vec::with_capacity(manifest.total_pairs);
    for shard in &manifest.shards {
        let path = dir.join(&shard.file);
        let actual = sha256_file(&path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        if actual != shard.sha256 {
            return Err(CorpusError::Checksum {
                path,
                expected: shard.sha256.clone(),
                actual,
            });
        }
        let chunk: Vec<CorpusPair> = crate::jsonl::read_jsonl(&path)?;
        if chunk.len() != shard.pairs {
            return Err(CorpusError::Manifest(format!(
                "{} has {} pairs, manifest says {}",
                shard.file,
                chunk.len(),
                shard.pairs
            )));
        }
        pairs.extend(chunk);
    }
    if pairs.len() != manifest.total_pairs {
        return Err(CorpusError::Manifest(format!(
            "{} pairs on disk, manifest says {}",
            pairs.len(),
            manifest.total_pairs
        )));
    }
    Ok((manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::FiveLevel;
    use crate::sampler::Domain;
    use proptest::prelude::*;

    fn review(id: &str, text: &str, source: Source) -> RawReview {
        RawReview {
            id: id.into(),
            text: text.into(),
            stars: 3,
            domain: Domain::Restaurant,
            source,
        }
    }

    fn quads() -> Vec<Quadruple> {
        vec![
            Quadruple {
                target: Some("soup".into()),
                aspect: "food quality".into(),
                sentiment: FiveLevel::VeryPositive,
                reasoning: "The reviewer calls the soup superb.".into(),
            },
            Quadruple {
                target: None,
                aspect: "service speed".into(),
                sentiment: FiveLevel::Negative,
                reasoning: "They waited forty minutes.".into(),
            },
        ]
    }

    fn anl(id: &str, teacher: TeacherTag) -> UnderstandingRecord {
        UnderstandingRecord {
            review_id: id.into(),
            teacher,
            prompt_kind: PromptKind::Analysis,
            quadruples: Some(quads()),
            rewrite: None,
        }
    }

    fn rw(id: &str, text: &str) -> UnderstandingRecord {
        UnderstandingRecord {
            review_id: id.into(),
            teacher: TeacherTag::Mixtral8x7b,
            prompt_kind: PromptKind::Rewriting,
            quadruples: None,
            rewrite: Some(text.into()),
        }
    }

    #[test]
    fn anl_no_r_keeps_labels_only() {
        let rv = review("1", "Superb soup, slow service.", Source::Yelp);
        let idx: HashMap<&str, &RawReview> = [("1", &rv)].into_iter().collect();
        let (pairs, _) = build_pairs(
            &[anl("1", TeacherTag::Mixtral8x7b)],
            &idx,
            Variant::AnlNoR,
            None,
            LengthCaps::default(),
        );
        let u = &pairs[0].u;
        assert_eq!(u.matches("Opinion Target:").count(), 2);
        assert_eq!(u.matches("Sentiment:").count(), 2);
        assert!(!u.contains("Reasoning"));
    }

    #[test]
    fn anl_no_l_keeps_reasoning_only() {
        let rv = review("1", "Superb soup, slow service.", Source::Yelp);
        let idx: HashMap<&str, &RawReview> = [("1", &rv)].into_iter().collect();
        let (pairs, _) = build_pairs(
            &[anl("1", TeacherTag::Mixtral8x7b)],
            &idx,
            Variant::AnlNoL,
            None,
            LengthCaps::default(),
        );
        assert_eq!(
            pairs[0].u,
            "Reasoning: The reviewer calls the soup superb.\n\nReasoning: They waited forty minutes."
        );
    }

    #[test]
    fn rw_is_verbatim() {
        let text = "I was disappointed by the cold fries, though the shake was lovely.";
        let rv = review("1", "fries cold. shake good", Source::Yelp);
        let idx: HashMap<&str, &RawReview> = [("1", &rv)].into_iter().collect();
        let (pairs, _) = build_pairs(&[rw("1", text)], &idx, Variant::Rw, None, LengthCaps::default());
        assert_eq!(pairs[0].u.as_bytes(), text.as_bytes());
        assert_eq!(pairs[0].x, "fries cold. shake good");
    }

    #[test]
    fn merged_is_union_and_missing_reviews_skipped() {
        let a = review("1", "text one", Source::Yelp);
        let b = review("2", "text two", Source::Amazon);
        let idx: HashMap<&str, &RawReview> = [("1", &a), ("2", &b)].into_iter().collect();
        let records = vec![
            anl("1", TeacherTag::Mixtral8x7b),
            rw("1", "rewrite one"),
            anl("2", TeacherTag::Mixtral8x7b),
            rw("2", "rewrite two"),
            anl("3", TeacherTag::Mixtral8x7b),
        ];
        let (pairs, report) =
            build_pairs(&records, &idx, Variant::Merged, None, LengthCaps::default());
        assert_eq!(pairs.len(), 4);
        assert_eq!(report.missing_review, 1);
        let (anl_only, _) = build_pairs(&records, &idx, Variant::Anl, None, LengthCaps::default());
        let (rw_only, _) = build_pairs(&records, &idx, Variant::Rw, None, LengthCaps::default());
        assert_eq!(pairs.len(), anl_only.len() + rw_only.len());
        let st = corpus_stats(&pairs);
        assert_eq!(st.count(&TeacherTag::Mixtral8x7b, Source::Yelp, "anl"), 1);
        assert_eq!(st.count(&TeacherTag::Mixtral8x7b, Source::Amazon, "rw"), 1);
    }

    #[test]
    fn teacher_filter_and_failed_parses() {
        let a = review("1", "text", Source::Yelp);
        let idx: HashMap<&str, &RawReview> = [("1", &a)].into_iter().collect();
        let mut failed = anl("1", TeacherTag::Gpt35);
        failed.quadruples = None;
        let records = vec![anl("1", TeacherTag::Llama2_7b), failed];
        let (pairs, report) = build_pairs(
            &records,
            &idx,
            Variant::Anl,
            Some(&TeacherTag::Gpt35),
            LengthCaps::default(),
        );
        assert!(pairs.is_empty());
        assert_eq!(report.other_teacher, 1);
        assert_eq!(report.empty_output, 1);
    }

    #[test]
    fn empty_corpus_stats_are_zero() {
        let st = corpus_stats(&[]);
        assert_eq!(st, CorpusStats::default());
        assert_eq!(st.total, 0);
    }

    #[test]
    fn truncation_respects_cap() {
        let text = (0..200).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let (cut, truncated) = truncate_to_cap(&text, 128);
        assert!(truncated);
        assert!(proxy_tokens(&cut) <= 128);
        assert_eq!(cut.split_whitespace().count(), 98);
        assert!(text.starts_with(&cut));
        let (same, t) = truncate_to_cap("short text", 128);
        assert!(!t);
        assert_eq!(same, "short text");
    }

    #[test]
    fn shards_roundtrip_and_detect_tampering() {
        let a = review("1", "text", Source::Yelp);
        let idx: HashMap<&str, &RawReview> = [("1", &a)].into_iter().collect();
        let records: Vec<_> = (0..5).map(|i| rw("1", &format!("r{i}"))).collect();
        let (pairs, report) = build_pairs(&records, &idx, Variant::Rw, None, LengthCaps::default());
        let dir = tempfile::tempdir().unwrap();
        let m = write_corpus(&pairs, dir.path(), 2, Variant::Rw, None, LengthCaps::default(), report)
            .unwrap();
        assert_eq!(m.shards.len(), 3);
        assert_eq!(m.shards.iter().map(|s| s.pairs).sum::<usize>(), 5);
        let (_, back) = read_corpus(dir.path()).unwrap();
        assert_eq!(back, pairs);
        std::fs::write(dir.path().join("shard-00001.jsonl"), "{}\n").unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(CorpusError::Checksum { .. })));
    }

    fn arb_pair() -> impl Strategy<Value = CorpusPair> {
        (
            "[a-z]{1,3}",
            proptest::sample::select(vec![Variant::Anl, Variant::Rw]),
            proptest::sample::select(vec![TeacherTag::Gpt35, TeacherTag::Mixtral8x7b]),
            proptest::sample::select(vec![Source::Yelp, Source::Amazon]),
            "[a-z ]{1,40}",
        )
            .prop_map(|(id, variant, teacher, source, text)| CorpusPair {
                review_id: id,
                x: format!("x {text}"),
                u: format!("u {text}"),
                variant,
                teacher,
                source,
            })
    }

    proptest! {
        #[test]
        fn stats_merge_is_order_independent(
            pairs in proptest::collection::vec(arb_pair(), 0..40),
            split in 0usize..40,
        ) {
            let split = split.min(pairs.len());
            let whole = corpus_stats(&pairs);
            let mut left = corpus_stats(&pairs[..split]);
            let right = corpus_stats(&pairs[split..]);
            left.merge(&right);
            prop_assert_eq!(&left, &whole);
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert_eq!(corpus_stats(&rev), whole.clone());
            prop_assert_eq!(whole.counts.values().sum::<usize>(), whole.total);
        }

        #[test]
        fn truncation_never_exceeds_cap(words in proptest::collection::vec("[a-z]{1,6}", 0..300), cap in 1usize..200) {
            let text = words.join(" ");
            let (cut, _) = truncate_to_cap(&text, cap);
            prop_assert!(proxy_tokens(&cut) <= cap);
            prop_assert!(text.starts_with(&cut));
        }
    }
}
