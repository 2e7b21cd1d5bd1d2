//! Turning free-form teacher completions into typed records.
//!
//! Analysis completions are read as repeated blocks of four labeled fields:
//!
//! ```text
//! Opinion Target: chicken sandwich
//! Aspect: food quality
//! Sentiment: negative
//! Reasoning: comparing the taste to cardboard implies poor quality
//! ```
//!
//! Labels are matched case-insensitively and may carry list markers (`-`, `*`,
//! `1.`), markdown bold, or heading hashes. Reasoning may wrap onto following
//! lines until a blank line. This grammar is reconstructed from the field list
//! the analysis prompt asks for; [`format_quadruples`] writes its canonical
//! form.
//!
//! In-context-learning completions are python-style lists of 2-tuples, e.g.
//! `[('wine list', 'positive')]`, possibly surrounded by prose.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiveLevel {
    VeryNegative,
    Negative,
    Mild,
    Positive,
    VeryPositive,
}

impl FiveLevel {
    pub const ALL: [FiveLevel; 5] = [
        FiveLevel::VeryNegative,
        FiveLevel::Negative,
        FiveLevel::Mild,
        FiveLevel::Positive,
        FiveLevel::VeryPositive,
    ];

    /// The wording used by the analysis prompt.
    pub fn surface(self) -> &'static str {
        match self {
            FiveLevel::VeryNegative => "very negative",
            FiveLevel::Negative => "negative",
            FiveLevel::Mild => "mild sentiment",
            FiveLevel::Positive => "positive",
            FiveLevel::VeryPositive => "very positive",
        }
    }

    /// Parses one of the five surface forms, ignoring case, surrounding
    /// quotes/bold markers and a trailing period.
    pub fn from_surface(s: &str) -> Option<Self> {
        let cleaned = s
            .trim()
            .trim_matches(|c: char| matches!(c, '*' | '_' | '"' | '\'' | '`'))
            .trim_end_matches(['.', ','])
            .trim();
        let normalized = collapse_ws(&cleaned.to_lowercase());
        FiveLevel::ALL
            .into_iter()
            .find(|level| level.surface() == normalized)
    }
}

impl fmt::Display for FiveLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
    Conflict,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
            Polarity::Conflict => "conflict",
        }
    }

    /// Parses a label within the task's label space. ASA has no `conflict`.
    pub fn parse_for(s: &str, task: Task) -> Option<Self> {
        let p = match s.trim().to_lowercase().as_str() {
            "negative" => Polarity::Negative,
            "neutral" => Polarity::Neutral,
            "positive" => Polarity::Positive,
            "conflict" => Polarity::Conflict,
            _ => return None,
        };
        (task == Task::Tsa || p != Polarity::Conflict).then_some(p)
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Targeted (span) vs aspect-level (category) sentiment analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tsa,
    Asa,
}

impl Task {
    pub fn label_space(self) -> &'static [Polarity] {
        match self {
            Task::Tsa => &[
                Polarity::Negative,
                Polarity::Neutral,
                Polarity::Positive,
                Polarity::Conflict,
            ],
            Task::Asa => &[Polarity::Negative, Polarity::Neutral, Polarity::Positive],
        }
    }
}

/// Collapses the five-level understanding scale onto the three task labels.
pub fn map_to_task_polarity(level: FiveLevel) -> Polarity {
    match level {
        FiveLevel::VeryNegative | FiveLevel::Negative => Polarity::Negative,
        FiveLevel::Mild => Polarity::Neutral,
        FiveLevel::Positive | FiveLevel::VeryPositive => Polarity::Positive,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    /// `None` is the NULL target: the aspect is inferred without an explicit mention.
    pub target: Option<String>,
    pub aspect: String,
    pub sentiment: FiveLevel,
    pub reasoning: String,
}

pub const NULL_TARGET: &str = "NULL";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredPair {
    pub first: String,
    pub polarity: Polarity,
    /// Set for ASA categories outside the dataset's category space.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub out_of_space: bool,
}

impl PredPair {
    pub fn new(first: impl Into<String>, polarity: Polarity) -> Self {
        Self {
            first: first.into(),
            polarity,
            out_of_space: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoStructureFound,
    BadLabel,
    Truncated,
    SalvagePartial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure<T> {
    pub raw_text: String,
    pub reason: FailureReason,
    pub salvaged: Vec<T>,
    pub detail: String,
}

impl<T> fmt::Display for ParseFailure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} ({} salvaged): {}",
            self.reason,
            self.salvaged.len(),
            self.detail
        )
    }
}

impl<T: fmt::Debug> std::error::Error for ParseFailure<T> {}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased, trimmed, whitespace-collapsed span text.
pub fn normalize_span(s: &str) -> String {
    collapse_ws(&s.to_lowercase())
}

/// Category comparison form: `FOOD#QUALITY`, `food_quality` and `food quality`
/// all become `food quality`.
pub fn normalize_category(s: &str) -> String {
    let spaced: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c == '#' || c == '_' { ' ' } else { c })
        .collect();
    collapse_ws(&spaced)
}

// ---------------------------------------------------------------------------
// Analysis blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Field {
    Target,
    Aspect,
    Sentiment,
    Reasoning,
}

/// Strips list markers, heading hashes and bold markers from the start of a line.
fn strip_line_marker(line: &str) -> &str {
    let mut s = line.trim_start();
    loop {
        let before = s;
        s = s.trim_start_matches(['#', '>']).trim_start();
        for bullet in ["- ", "* ", "• ", "+ ", "– "] {
            if let Some(rest) = s.strip_prefix(bullet) {
                s = rest.trim_start();
            }
        }
        let digits = s.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && digits < 4 {
            let rest = &s[digits..];
            if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
                s = r.trim_start();
            }
        }
        if s == before {
            return s;
        }
    }
}

fn field_for_label(label: &str) -> Option<Field> {
    match collapse_ws(&label.to_lowercase()).as_str() {
        "opinion target" | "target" => Some(Field::Target),
        "aspect" | "aspects" | "aspect category" => Some(Field::Aspect),
        "sentiment" | "sentiment intensity" => Some(Field::Sentiment),
        "reasoning" | "reason" => Some(Field::Reasoning),
        _ => None,
    }
}

fn split_label(line: &str) -> Option<(Field, String)> {
    let s = strip_line_marker(line).trim_start_matches(['*', '_']);
    let colon = s.find(':')?;
    let label = s[..colon].trim().trim_matches(['*', '_']).trim();
    let field = field_for_label(label)?;
    let value = s[colon + 1..]
        .trim()
        .trim_matches(['*'])
        .trim()
        .to_string();
    Some((field, value))
}

fn is_separator(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with("```") || (t.len() >= 3 && t.chars().all(|c| c == '-'))
}

#[derive(Default)]
struct PartialBlock {
    target: Option<String>,
    aspect: Option<String>,
    sentiment: Option<String>,
    reasoning: Option<String>,
    reasoning_open: bool,
}

impl PartialBlock {
    fn next_field(&self) -> Option<Field> {
        if self.aspect.is_none() {
            Some(Field::Aspect)
        } else if self.sentiment.is_none() {
            Some(Field::Sentiment)
        } else if self.reasoning.is_none() {
            Some(Field::Reasoning)
        } else {
            None
        }
    }
}

enum BlockOutcome {
    Ok(Quadruple),
    BadLabel(String),
    Incomplete,
}

fn finish_block(b: PartialBlock) -> BlockOutcome {
    let (Some(target), Some(aspect), Some(sentiment), Some(reasoning)) =
        (b.target, b.aspect, b.sentiment, b.reasoning)
    else {
        return BlockOutcome::Incomplete;
    };
    if target.is_empty() || aspect.is_empty() || reasoning.trim().is_empty() {
        return BlockOutcome::Incomplete;
    }
    let Some(level) = FiveLevel::from_surface(&sentiment) else {
        return BlockOutcome::BadLabel(sentiment);
    };
    let target = (!target.eq_ignore_ascii_case(NULL_TARGET)).then_some(target);
    BlockOutcome::Ok(Quadruple {
        target,
        aspect,
        sentiment: level,
        reasoning: reasoning.trim().to_string(),
    })
}

/// Parses an analysis completion into quadruples.
///
/// Returns `Err` when nothing usable was found, when a block carried a
/// sentiment outside the five levels (`BadLabel`), or when a block was cut off
/// or interrupted (`SalvagePartial` if other blocks survived, `Truncated`
/// otherwise). Intact blocks are always kept in `salvaged`.
pub fn parse_analysis(completion: &str) -> Result<Vec<Quadruple>, ParseFailure<Quadruple>> {
    let mut quads = Vec::new();
    let mut bad_labels = Vec::new();
    let mut incomplete = 0usize;
    let mut current: Option<PartialBlock> = None;

    fn close(
        block: PartialBlock,
        quads: &mut Vec<Quadruple>,
        bad: &mut Vec<String>,
        incomplete: &mut usize,
    ) {
        match finish_block(block) {
            BlockOutcome::Ok(q) => quads.push(q),
            BlockOutcome::BadLabel(s) => bad.push(s),
            BlockOutcome::Incomplete => *incomplete += 1,
        }
    }

    for line in completion.lines() {
        if is_separator(line) {
            if let Some(b) = current.as_mut() {
                b.reasoning_open = false;
            }
            continue;
        }
        match split_label(line) {
            Some((Field::Target, value)) => {
                if let Some(b) = current.take() {
                    close(b, &mut quads, &mut bad_labels, &mut incomplete);
                }
                current = Some(PartialBlock {
                    target: Some(value),
                    ..Default::default()
                });
            }
            Some((field, value)) => match current.as_mut() {
                Some(b) if b.next_field() == Some(field) => {
                    match field {
                        Field::Aspect => b.aspect = Some(value),
                        Field::Sentiment => b.sentiment = Some(value),
                        Field::Reasoning => {
                            b.reasoning = Some(value);
                            b.reasoning_open = true;
                        }
                        Field::Target => unreachable!(),
                    }
                }
                Some(b) if b.next_field().is_none() => {
                    // A finished block followed by an orphan field.
                    let b = current.take().expect("matched Some");
                    close(b, &mut quads, &mut bad_labels, &mut incomplete);
                    incomplete += 1;
                }
                Some(_) => {
                    // Out-of-order or repeated field: the block is corrupted.
                    current = None;
                    incomplete += 1;
                }
                None => incomplete += 1,
            },
            None => {
                if let Some(b) = current.as_mut() {
                    if b.reasoning_open {
                        let r = b.reasoning.get_or_insert_with(String::new);
                        if !r.is_empty() {
                            r.push(' ');
                        }
                        r.push_str(line.trim());
                    } else if b.next_field().is_some() {
                        // Stray text inside an unfinished block.
                        let b = current.take().expect("matched Some");
                        close(b, &mut quads, &mut bad_labels, &mut incomplete);
                    }
                }
            }
        }
    }
    if let Some(b) = current.take() {
        close(b, &mut quads, &mut bad_labels, &mut incomplete);
    }

    if bad_labels.is_empty() && incomplete == 0 {
        if quads.is_empty() {
            return Err(ParseFailure {
                raw_text: completion.to_string(),
                reason: FailureReason::NoStructureFound,
                salvaged: Vec::new(),
                detail: "no analysis blocks found".to_string(),
            });
        }
        return Ok(quads);
    }
    let reason = if !bad_labels.is_empty() {
        FailureReason::BadLabel
    } else if quads.is_empty() {
        FailureReason::Truncated
    } else {
        FailureReason::SalvagePartial
    };
    let mut detail = Vec::new();
    if !bad_labels.is_empty() {
        detail.push(format!("unrecognized sentiment {:?}", bad_labels));
    }
    if incomplete > 0 {
        detail.push(format!("{incomplete} incomplete block(s)"));
    }
    Err(ParseFailure {
        raw_text: completion.to_string(),
        reason,
        salvaged: quads,
        detail: detail.join("; "),
    })
}

/// Which fields to emit when writing blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockFields {
    pub labels: bool,
    pub reasoning: bool,
}

impl BlockFields {
    pub const FULL: BlockFields = BlockFields {
        labels: true,
        reasoning: true,
    };
}

/// Canonical block text: one block per quadruple, blank line between blocks.
pub fn format_quadruples(quads: &[Quadruple]) -> String {
    format_quadruples_with(quads, BlockFields::FULL)
}

pub fn format_quadruples_with(quads: &[Quadruple], fields: BlockFields) -> String {
    let mut blocks = Vec::with_capacity(quads.len());
    for q in quads {
        let mut lines = Vec::with_capacity(4);
        if fields.labels {
            lines.push(format!(
                "Opinion Target: {}",
                q.target.as_deref().unwrap_or(NULL_TARGET)
            ));
            lines.push(format!("Aspect: {}", q.aspect));
            lines.push(format!("Sentiment: {}", q.sentiment.surface()));
        }
        if fields.reasoning {
            lines.push(format!("Reasoning: {}", q.reasoning));
        }
        if !lines.is_empty() {
            blocks.push(lines.join("\n"));
        }
    }
    blocks.join("\n\n")
}

// ---------------------------------------------------------------------------
// Pair lists
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    chars: &'a [char],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// A single- or double-quoted string. A closing quote only counts when the
    /// next non-space character is `,` or `)`, so `'chef's special'` survives.
    fn string(&mut self) -> Option<String> {
        self.skip_ws();
        let quote = self.peek().filter(|c| *c == '\'' || *c == '"')?;
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        while let Some(c) = self.peek() {
            self.pos += 1;
            if c == '\\' {
                if let Some(next) = self.peek() {
                    out.push(next);
                    self.pos += 1;
                }
                continue;
            }
            if c == quote {
                let mut look = self.pos;
                while look < self.chars.len() && self.chars[look].is_whitespace() {
                    look += 1;
                }
                if matches!(self.chars.get(look), Some(',') | Some(')') | None) {
                    return Some(out);
                }
            }
            out.push(c);
        }
        self.pos = start;
        None
    }
}

struct ListScan {
    tuples: Vec<(String, String)>,
    complete: bool,
}

/// Scans a list starting at an opening bracket. `None` if this bracket does not
/// start a tuple list at all.
fn scan_list(chars: &[char], open: usize) -> Option<ListScan> {
    let mut c = Cursor {
        chars,
        pos: open + 1,
    };
    let mut tuples = Vec::new();
    if c.eat(']') {
        return Some(ListScan {
            tuples,
            complete: true,
        });
    }
    loop {
        if !c.eat('(') {
            break;
        }
        let Some(first) = c.string() else { break };
        if !c.eat(',') {
            break;
        }
        let Some(second) = c.string() else { break };
        c.eat(',');
        if !c.eat(')') {
            break;
        }
        tuples.push((first, second));
        if c.eat(']') {
            return Some(ListScan {
                tuples,
                complete: true,
            });
        }
        if !c.eat(',') {
            break;
        }
        if c.eat(']') {
            return Some(ListScan {
                tuples,
                complete: true,
            });
        }
    }
    (!tuples.is_empty()).then_some(ListScan {
        tuples,
        complete: false,
    })
}

/// Parses a list of `(first, polarity)` tuples out of an ICL completion.
///
/// For ASA, categories outside `category_space` are kept with `out_of_space`
/// set; comparison uses [`normalize_category`]. Tuples whose label is outside
/// the task's label space are dropped and reported as `BadLabel`.
pub fn parse_pair_list(
    completion: &str,
    task: Task,
    category_space: Option<&[String]>,
) -> Result<Vec<PredPair>, ParseFailure<PredPair>> {
    let chars: Vec<char> = completion.chars().collect();
    let mut best: Option<ListScan> = None;
    for (i, _) in chars.iter().enumerate().filter(|(_, c)| **c == '[') {
        if let Some(scan) = scan_list(&chars, i) {
            if scan.complete {
                best = Some(scan);
                break;
            }
            if best
                .as_ref()
                .is_none_or(|b| scan.tuples.len() > b.tuples.len())
            {
                best = Some(scan);
            }
        }
    }
    let Some(scan) = best else {
        return Err(ParseFailure {
            raw_text: completion.to_string(),
            reason: FailureReason::NoStructureFound,
            salvaged: Vec::new(),
            detail: "no bracketed tuple list found".to_string(),
        });
    };

    let space: Option<Vec<String>> = category_space
        .filter(|_| task == Task::Asa)
        .map(|cs| cs.iter().map(|c| normalize_category(c)).collect());
    let mut pairs = Vec::with_capacity(scan.tuples.len());
    let mut bad = Vec::new();
    for (first, label) in scan.tuples {
        let Some(polarity) = Polarity::parse_for(&label, task) else {
            bad.push(label);
            continue;
        };
        let first = first.trim().to_string();
        let out_of_space = space
            .as_ref()
            .is_some_and(|s| !s.contains(&normalize_category(&first)));
        pairs.push(PredPair {
            first,
            polarity,
            out_of_space,
        });
    }

    if bad.is_empty() && scan.complete {
        return Ok(pairs);
    }
    let reason = if !bad.is_empty() {
        FailureReason::BadLabel
    } else if pairs.is_empty() {
        FailureReason::Truncated
    } else {
        FailureReason::SalvagePartial
    };
    let mut detail = Vec::new();
    if !bad.is_empty() {
        detail.push(format!("labels outside label space {bad:?}"));
    }
    if !scan.complete {
        detail.push("list not closed".to_string());
    }
    Err(ParseFailure {
        raw_text: completion.to_string(),
        reason,
        salvaged: pairs,
        detail: detail.join("; "),
    })
}

/// Reads a single sentiment label from a zero-shot completion: the first word
/// on the first non-empty line (after an optional `Label:`) that is in the
/// task's label space.
pub fn parse_label(completion: &str, task: Task) -> Option<Polarity> {
    let line = completion.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = match line.get(..6) {
        Some(head) if head.eq_ignore_ascii_case("label:") => &line[6..],
        _ => line,
    };
    line.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .find_map(|w| Polarity::parse_for(w, task))
}

/// Python `repr`-style string literal: single quotes unless the text contains one.
pub fn python_str(s: &str) -> String {
    if s.contains('\'') && !s.contains('"') {
        format!("\"{s}\"")
    } else {
        format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
    }
}

/// Double-quoted literal with `\\` and `\"` escaped, as the ICL instructions ask for.
pub fn double_quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Formats pairs the way the ICL demonstrations show them.
pub fn format_pair_list(pairs: &[(String, Polarity)]) -> String {
    let items: Vec<String> = pairs
        .iter()
        .map(|(first, p)| format!("({}, {})", double_quoted(first), double_quoted(p.as_str())))
        .collect();
    format!("[{}]", items.join(", "))
}

/// Strips a leading `Rewrite:`-style label and wrapping quotes from a rewriting
/// completion. `None` when nothing remains.
pub fn clean_rewrite(text: &str) -> Option<String> {
    let mut s = text.trim();
    for label in ["rewritten review:", "rewrite:", "rewritten:"] {
        if s.len() >= label.len() && s[..label.len()].eq_ignore_ascii_case(label) {
            s = s[label.len()..].trim();
            break;
        }
    }
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') && !s[1..s.len() - 1].contains('"') {
        s = s[1..s.len() - 1].trim();
    }
    (!s.is_empty()).then(|| s.to_string())
}
