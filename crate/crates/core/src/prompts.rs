//! Prompt templates and rendering.
//!
//! Templates are plain text with `{slot}` markers (`{{` and `}}` for literal
//! braces). A template is parsed once into literal and slot segments, and
//! rendering substitutes each slot in a single pass, so slot values are never
//! re-scanned: a review that itself contains `{demo}` stays literal text.
//!
//! The bundled templates live in `templates/` next to a `MANIFEST` of sha256
//! checksums, which is verified whenever a template set is loaded.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::DatasetName;
use crate::jsonl::sha256_hex;
use crate::parser::{normalize_category, python_str, Task};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("review text is empty")]
    EmptyReview,
    #[error("{0} is empty")]
    EmptyField(&'static str),
    #[error("aspect-level prompts need a category space")]
    MissingCategorySpace,
    #[error("template {template}: slot {{{slot}}} has no value")]
    MissingSlot { template: String, slot: String },
    #[error("template {template}: unbalanced brace at byte {offset}")]
    BadTemplate { template: String, offset: usize },
    #[error("template file {file}: checksum {actual} does not match manifest {expected}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("template file {0} is not listed in the manifest")]
    NotInManifest(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("demos.json: {0}")]
    Demos(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Analysis,
    Rewriting,
    IclTsa,
    IclAsa,
    ZeroshotTsa,
    ZeroshotAsa,
}

impl PromptKind {
    /// Short tag used in request ids and corpus bookkeeping.
    pub fn tag(self) -> &'static str {
        match self {
            PromptKind::Analysis => "anl",
            PromptKind::Rewriting => "rw",
            PromptKind::IclTsa => "icl_tsa",
            PromptKind::IclAsa => "icl_asa",
            PromptKind::ZeroshotTsa => "zs_tsa",
            PromptKind::ZeroshotAsa => "zs_asa",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Analysis => "analysis",
            PromptKind::Rewriting => "rewriting",
            PromptKind::IclTsa => "icl_tsa",
            PromptKind::IclAsa => "icl_asa",
            PromptKind::ZeroshotTsa => "zeroshot_tsa",
            PromptKind::ZeroshotAsa => "zeroshot_asa",
        })
    }
}

/// Zero-shot prompts differ between chat APIs (with an instruction line) and
/// open models scored by label-word probability (bare form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    ChatApi,
    OpenLm,
}

/// A worked example shown to the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub review: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let bad = |offset| PromptError::BadTemplate {
            template: name.to_string(),
            offset,
        };
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(pos) = rest.find(['{', '}']) {
            literal.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                literal.push_str(&tail[..1]);
                rest = &tail[2..];
                offset += pos + 2;
                continue;
            }
            if tail.starts_with('}') {
                return Err(bad(offset + pos));
            }
            let close = tail.find('}').ok_or_else(|| bad(offset + pos))?;
            let slot = &tail[1..close];
            if slot.is_empty() || !slot.chars().all(|c| c.is_ascii_lowercase() || c == ' ' || c == '_') {
                return Err(bad(offset + pos));
            }
            if !literal.is_empty() {
                segments.push(Segment::Literal(std::mem::take(&mut literal)));
            }
            segments.push(Segment::Slot(slot.to_string()));
            rest = &tail[close + 1..];
            offset += pos + close + 1;
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self {
            name: name.to_string(),
            source: source.to_string(),
            segments,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(name) => Some(name.as_str()),
            Segment::Literal(_) => None,
        })
    }

    /// Substitutes every slot. Values are inserted verbatim.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.source.len() + 256);
        for seg in &self.segments {
            match seg {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(slot) => {
                    let value = values
                        .iter()
                        .find(|(name, _)| name == slot)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::MissingSlot {
                            template: self.name.clone(),
                            slot: slot.clone(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

const BUNDLED: [(&str, &str); 8] = [
    ("analysis.txt", include_str!("../templates/analysis.txt")),
    ("rewriting.txt", include_str!("../templates/rewriting.txt")),
    ("icl_tsa.txt", include_str!("../templates/icl_tsa.txt")),
    ("icl_asa.txt", include_str!("../templates/icl_asa.txt")),
    ("zeroshot_tsa_chat.txt", include_str!("../templates/zeroshot_tsa_chat.txt")),
    ("zeroshot_asa_chat.txt", include_str!("../templates/zeroshot_asa_chat.txt")),
    ("zeroshot_tsa_open.txt", include_str!("../templates/zeroshot_tsa_open.txt")),
    ("zeroshot_asa_open.txt", include_str!("../templates/zeroshot_asa_open.txt")),
];
const BUNDLED_DEMOS: &str = include_str!("../templates/demos.json");
const BUNDLED_MANIFEST: &str = include_str!("../templates/MANIFEST");

#[derive(Debug, Clone, Deserialize)]
struct DemoFile {
    analysis: Demo,
    rewriting: Demo,
}

/// All prompt templates plus the fixed analysis/rewriting demonstrations.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<String, Template>,
    analysis_demo: Demo,
    rewriting_demo: Demo,
    /// sha256 over the manifest text; identifies the template version.
    pub fingerprint: String,
}

fn parse_manifest(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            let sum = parts.next()?;
            let file = parts.next()?;
            Some((file.to_string(), sum.to_string()))
        })
        .collect()
}

fn verify(manifest: &HashMap<String, String>, file: &str, body: &str) -> Result<(), PromptError> {
    let expected = manifest
        .get(file)
        .ok_or_else(|| PromptError::NotInManifest(file.to_string()))?;
    let actual = sha256_hex(body.as_bytes());
    if *expected != actual {
        return Err(PromptError::ChecksumMismatch {
            file: file.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(())
}

impl TemplateSet {
    /// The templates compiled into the binary.
    pub fn bundled() -> Result<Self, PromptError> {
        let files: Vec<(String, String)> = BUNDLED
            .iter()
            .map(|(f, b)| (f.to_string(), b.to_string()))
            .collect();
        Self::from_parts(files, BUNDLED_DEMOS, BUNDLED_MANIFEST)
    }

    /// Loads a template directory laid out like the bundled `templates/`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let manifest = read("MANIFEST")?;
        let mut files = Vec::new();
        for (name, _) in BUNDLED {
            files.push((name.to_string(), read(name)?));
        }
        let demos = read("demos.json")?;
        Self::from_parts(files, &demos, &manifest)
    }

    fn from_parts(
        files: Vec<(String, String)>,
        demos: &str,
        manifest_text: &str,
    ) -> Result<Self, PromptError> {
        let manifest = parse_manifest(manifest_text);
        let mut templates = HashMap::new();
        for (file, body) in files {
            verify(&manifest, &file, &body)?;
            let name = file.trim_end_matches(".txt").to_string();
            templates.insert(name.clone(), Template::parse(&name, &body)?);
        }
        verify(&manifest, "demos.json", demos)?;
        let demos: DemoFile = serde_json::from_str(demos)?;
        Ok(Self {
            templates,
            analysis_demo: demos.analysis,
            rewriting_demo: demos.rewriting,
            fingerprint: sha256_hex(manifest_text.as_bytes()),
        })
    }

    pub fn template(&self, name: &str) -> Option<&Template> {
        self.templates.get(name)
    }

    fn get(&self, name: &str) -> &Template {
        self.templates
            .get(name)
            .unwrap_or_else(|| panic!("template {name} missing from a verified set"))
    }

    pub fn analysis_demo(&self) -> &Demo {
        &self.analysis_demo
    }

    pub fn rewriting_demo(&self) -> &Demo {
        &self.rewriting_demo
    }

    pub fn render_analysis(&self, review: &str, demo: &Demo) -> Result<String, PromptError> {
        if review.trim().is_empty() {
            return Err(PromptError::EmptyReview);
        }
        let demo_text = if demo.review.is_empty() && demo.completion.is_empty() {
            String::new()
        } else {
            format!("Review: {}\n\n{}", demo.review, demo.completion)
        };
        self.get("analysis")
            .render(&[("demo", &demo_text), ("input review", review)])
    }

    pub fn render_rewriting(&self, review: &str, demo: &Demo) -> Result<String, PromptError> {
        if review.trim().is_empty() {
            return Err(PromptError::EmptyReview);
        }
        let demo_text = if demo.review.is_empty() && demo.completion.is_empty() {
            String::new()
        } else {
            format!("Review: {}\nRewrite: {}", demo.review, demo.completion)
        };
        self.get("rewriting")
            .render(&[("demo", &demo_text), ("input review", review)])
    }

    /// Analysis or rewriting prompt with the bundled demonstration.
    pub fn render_generation(&self, kind: PromptKind, review: &str) -> Result<String, PromptError> {
        match kind {
            PromptKind::Analysis => self.render_analysis(review, &self.analysis_demo),
            PromptKind::Rewriting => self.render_rewriting(review, &self.rewriting_demo),
            other => panic!("{other} is not a generation prompt"),
        }
    }

    /// In-context-learning extraction prompt. Demonstrations appear in the
    /// given order, each as a `Sentence:`/`Label:` pair.
    pub fn render_icl(
        &self,
        task: Task,
        sentence: &str,
        demos: &[Demo],
        category_space: Option<&[String]>,
    ) -> Result<String, PromptError> {
        if sentence.trim().is_empty() {
            return Err(PromptError::EmptyField("sentence"));
        }
        let mut demo_text = String::new();
        for d in demos {
            demo_text.push_str(&format!("Sentence: {}\nLabel: {}\n", d.review, d.completion));
        }
        if !demo_text.is_empty() {
            demo_text.push('\n');
        }
        match task {
            Task::Tsa => self
                .get("icl_tsa")
                .render(&[("demonstrations", &demo_text), ("sentence", sentence)]),
            Task::Asa => {
                let space = category_space.ok_or(PromptError::MissingCategorySpace)?;
                let rendered = format_category_space(space);
                self.get("icl_asa").render(&[
                    ("category space", &rendered),
                    ("demonstrations", &demo_text),
                    ("sentence", sentence),
                ])
            }
        }
    }

    pub fn render_zeroshot(
        &self,
        task: Task,
        sentence: &str,
        target_or_category: &str,
        family: ModelFamily,
    ) -> Result<String, PromptError> {
        if sentence.trim().is_empty() {
            return Err(PromptError::EmptyField("sentence"));
        }
        if target_or_category.trim().is_empty() {
            return Err(PromptError::EmptyField("target"));
        }
        let name = match (task, family) {
            (Task::Tsa, ModelFamily::ChatApi) => "zeroshot_tsa_chat",
            (Task::Asa, ModelFamily::ChatApi) => "zeroshot_asa_chat",
            (Task::Tsa, ModelFamily::OpenLm) => "zeroshot_tsa_open",
            (Task::Asa, ModelFamily::OpenLm) => "zeroshot_asa_open",
        };
        let target = match task {
            Task::Tsa => target_or_category.to_string(),
            Task::Asa => normalize_category(target_or_category),
        };
        self.get(name)
            .render(&[("sentence", sentence), ("target", &target)])
    }
}

/// `['food quality', 'service general']`, categories in comparison form.
pub fn format_category_space(space: &[String]) -> String {
    let items: Vec<String> = space
        .iter()
        .map(|c| python_str(&normalize_category(c)))
        .collect();
    format!("[{}]", items.join(", "))
}

/// Number of ICL demonstrations per dataset: 4 for TSA-Laptop14, 8 otherwise.
pub fn default_demo_count(dataset: DatasetName) -> usize {
    match dataset {
        DatasetName::TsaLaptop14 => 4,
        _ => 8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_analysis, parse_pair_list, Polarity};

    fn set() -> TemplateSet {
        TemplateSet::bundled().unwrap()
    }

    fn sentinel(slot: &str) -> String {
        format!("\u{1}{slot}\u{2}")
    }

    #[test]
    fn manifest_matches_bundled_files() {
        let s = set();
        assert_eq!(s.templates.len(), 8);
    }

    #[test]
    fn sentinel_render_restores_source() {
        let s = set();
        for (file, _) in BUNDLED {
            let t = s.template(file.trim_end_matches(".txt")).unwrap();
            let slots: Vec<String> = t.slots().map(str::to_string).collect();
            let values: Vec<(String, String)> =
                slots.iter().map(|n| (n.clone(), sentinel(n))).collect();
            let borrowed: Vec<(&str, &str)> =
                values.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let mut out = t.render(&borrowed).unwrap();
            for n in &slots {
                out = out.replace(&sentinel(n), &format!("{{{n}}}"));
            }
            assert_eq!(out, t.source(), "{file}");
        }
    }

    #[test]
    fn analysis_prompt_content() {
        let s = set();
        let p = s.render_analysis("great pad thai", s.analysis_demo()).unwrap();
        for label in ["Opinion Target", "Aspect", "Sentiment", "Reasoning"] {
            assert!(p.contains(&format!("- {label}:")), "{label}");
        }
        assert!(p.contains("very negative, negative, mild sentiment, positive, and very positive"));
        assert!(p.ends_with("Review: great pad thai"));
        assert!(!p.contains("{demo}") && !p.contains("{input review}"));
        assert!(!p.contains('{'));
        assert!(matches!(
            s.render_analysis("  ", s.analysis_demo()),
            Err(PromptError::EmptyReview)
        ));
    }

    #[test]
    fn empty_demo_keeps_example_section() {
        let s = set();
        let p = s.render_analysis("ok food", &Demo::default()).unwrap();
        assert!(p.contains("Example:\n\n\n\nYour Task:"));
    }

    #[test]
    fn rewriting_prompt_and_injection() {
        let s = set();
        let p = s.render_rewriting("fine", s.rewriting_demo()).unwrap();
        assert!(p.contains("clarify them with direct assessments"));
        assert_eq!(p, s.render_rewriting("fine", s.rewriting_demo()).unwrap());

        let nasty = "tasty {demo} and {input review} }{";
        let with = s.render_rewriting(nasty, s.rewriting_demo()).unwrap();
        let plain = s.render_rewriting("X", s.rewriting_demo()).unwrap();
        assert_eq!(with, plain.replace("Review: X", &format!("Review: {nasty}")));
    }

    #[test]
    fn bundled_analysis_demo_parses() {
        let s = set();
        let quads = parse_analysis(&s.analysis_demo().completion).unwrap();
        assert_eq!(quads.len(), 3);
        assert!(quads[1].target.is_none());
    }

    #[test]
    fn icl_tsa_matches_table_layout() {
        let s = set();
        let demos = vec![
            Demo {
                review: "I've been several times and am totally smitten.".into(),
                completion: "[]".into(),
            },
            Demo {
                review: "The wine list is also really nice.".into(),
                completion: "[('wine list', 'positive')]".into(),
            },
        ];
        let p = s
            .render_icl(
                Task::Tsa,
                "I have to say they have one of the fastest delivery times in the city.",
                &demos,
                None,
            )
            .unwrap();
        assert!(p.contains("['negative', 'neutral', 'positive', 'conflict']"));
        assert!(p.contains("Sentence: The wine list is also really nice.\nLabel: [('wine list', 'positive')]\n\n"));
        assert!(p.ends_with(
            "Sentence: I have to say they have one of the fastest delivery times in the city.\nLabel:"
        ));
        let pairs = parse_pair_list(&demos[1].completion, Task::Tsa, None).unwrap();
        assert_eq!(pairs[0].polarity, Polarity::Positive);
    }

    #[test]
    fn icl_asa_requires_space_and_counts_demos() {
        let s = set();
        assert!(matches!(
            s.render_icl(Task::Asa, "so delicious", &[], None),
            Err(PromptError::MissingCategorySpace)
        ));
        let space = vec!["FOOD#QUALITY".to_string(), "SERVICE#GENERAL".to_string()];
        let p = s.render_icl(Task::Asa, "Serves really good sushi.", &[], Some(&space)).unwrap();
        assert!(p.contains("selected from ['food quality', 'service general']"));
        assert!(p.contains("['negative', 'neutral', 'positive']."));
        assert!(!p.contains("conflict"));
        assert!(p.ends_with("texts.\n\nSentence: Serves really good sushi.\nLabel:"));

        let demos: Vec<Demo> = (0..8)
            .map(|i| Demo {
                review: format!("sentence {i}"),
                completion: "[]".into(),
            })
            .collect();
        let p = s.render_icl(Task::Asa, "task", &demos, Some(&space)).unwrap();
        assert_eq!(p.matches("Sentence: ").count(), 9);
        assert_eq!(p.matches("Label:").count(), 9);
        let order: Vec<usize> = (0..8).map(|i| p.find(&format!("sentence {i}")).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zeroshot_variants() {
        let s = set();
        let p = s
            .render_zeroshot(Task::Tsa, "The staff was rude.", "staff", ModelFamily::ChatApi)
            .unwrap();
        assert!(p.starts_with("Please perform the targeted sentiment classification task."));
        assert!(p.ends_with("Sentence: The staff was rude.\nOpinion target: staff\nLabel:"));

        let p = s
            .render_zeroshot(Task::Asa, "Loved it.", "FOOD#QUALITY", ModelFamily::OpenLm)
            .unwrap();
        assert_eq!(p, "Sentence: Loved it.\nAspect category: food quality\nLabel:");
        assert_eq!(p.lines().count(), 3);
        assert!(s
            .render_zeroshot(Task::Tsa, "x", " ", ModelFamily::OpenLm)
            .is_err());
    }

    #[test]
    fn demo_counts() {
        assert_eq!(default_demo_count(DatasetName::TsaLaptop14), 4);
        assert_eq!(default_demo_count(DatasetName::TsaRest14), 8);
        assert_eq!(default_demo_count(DatasetName::AsaLaptop16), 8);
    }

    #[test]
    fn template_parse_errors() {
        assert!(Template::parse("t", "a {b").is_err());
        assert!(Template::parse("t", "a } b").is_err());
        assert!(Template::parse("t", "a {B1} b").is_err());
        let t = Template::parse("t", "{{literal}} {x}").unwrap();
        assert_eq!(t.render(&[("x", "y")]).unwrap(), "{literal} y");
        assert!(matches!(
            t.render(&[]),
            Err(PromptError::MissingSlot { .. })
        ));
    }

    #[test]
    fn tampered_dir_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in BUNDLED {
            std::fs::write(dir.path().join(name), body).unwrap();
        }
        std::fs::write(dir.path().join("demos.json"), BUNDLED_DEMOS).unwrap();
        std::fs::write(dir.path().join("MANIFEST"), BUNDLED_MANIFEST).unwrap();
        let loaded = TemplateSet::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.fingerprint, set().fingerprint);

        std::fs::write(dir.path().join("analysis.txt"), "changed {demo}").unwrap();
        assert!(matches!(
            TemplateSet::load_dir(dir.path()),
            Err(PromptError::ChecksumMismatch { .. })
        ));
    }
}
