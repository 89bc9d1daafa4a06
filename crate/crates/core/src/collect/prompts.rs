//! Prompt templates, slot rendering and the `### <view>` response parser.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_view_name, read_to_string, AttributeViewSet};
use crate::error::{MadsError, Result};

pub const SLOT_TYPE: &str = "{type}";
pub const SLOT_DOCUMENT: &str = "{collected document}";
pub const SLOT_ATTRIBUTES: &str = "{visual attributes}";
pub const SLOT_CATEGORY: &str = "{category}";
pub const SLOT_DIVIDED: &str = "{divided document}";

/// Prefix of the rendered `{visual attributes}` slot.
pub const ATTRIBUTES_PREFIX: &str = "Attribute views: ";
/// Separator between the prompt body and the format instruction.
pub const FORMAT_SEPARATOR: &str = "\n\nFormat: ";

const VIEW: &str = "Given an image, what visual attribute views can be used to determine what {type} species it is?";
const DIVIDE: &str = "As an {type} expert, your task is to divide documents into paragraphs based on the following attribute views. Each paragraph contains descriptions of one attribute view. {collected document}. {visual attributes}.";
const ENRICH: &str = "As an {type} expert, your task is to enrich the attribute documents with concise visual details. Try to keep the original description unchanged. Below is the document about {category} that needs additional descriptions: {divided document}.";
const EXPLAIN: &str = "As an {type} expert, explain in one sentence how each of the following visual attribute views helps to determine what {type} species an image shows. {visual attributes}.";

const VIEW_FORMAT: &str = "list each view as a line `### <view name>` followed by a one-sentence explanation.";
const DIVIDE_FORMAT: &str = "write one section per attribute view, each starting with a line `### <view name>` followed by its paragraph. Leave a section empty when the document does not describe that view.";
const ENRICH_FORMAT: &str = "keep one section per attribute view, each starting with a line `### <view name>` followed by its paragraph.";
const EXPLAIN_FORMAT: &str = "one section per view, each starting with a line `### <view name>` followed by the explanation.";

/// One prompt: the template body plus the response-format instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub body: String,
    pub format: String,
}

impl PromptTemplate {
    fn new(body: &str, format: &str) -> Self {
        Self { body: body.into(), format: format.into() }
    }

    /// Fills `slots` in the body and appends the format instruction.
    pub fn render(&self, slots: &[(&str, &str)]) -> String {
        let mut out = self.body.clone();
        for (slot, value) in slots {
            out = out.replace(slot, value);
        }
        format!("{out}{FORMAT_SEPARATOR}{}", self.format)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub view: PromptTemplate,
    pub divide: PromptTemplate,
    pub enrich: PromptTemplate,
    /// Asks for one explanation per agreed view after the intersection.
    pub explain: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            view: PromptTemplate::new(VIEW, VIEW_FORMAT),
            divide: PromptTemplate::new(DIVIDE, DIVIDE_FORMAT),
            enrich: PromptTemplate::new(ENRICH, ENRICH_FORMAT),
            explain: PromptTemplate::new(EXPLAIN, EXPLAIN_FORMAT),
        }
    }
}

impl PromptTemplates {
    /// Reads `view.txt`, `divide.txt`, `enrich.txt` and `explain.txt` from
    /// `dir`; missing files keep the default body. Format instructions are
    /// always the defaults since the parser depends on them.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("view.txt", &mut t.view),
            ("divide.txt", &mut t.divide),
            ("enrich.txt", &mut t.enrich),
            ("explain.txt", &mut t.explain),
        ] {
            let path = dir.join(name);
            if path.exists() {
                slot.body = read_to_string(&path)?.trim().to_string();
            }
        }
        Ok(t)
    }
}

/// Renders the `{visual attributes}` slot.
pub fn render_attributes<'a>(names: impl IntoIterator<Item = &'a str>) -> String {
    format!("{ATTRIBUTES_PREFIX}{}", names.into_iter().collect::<Vec<_>>().join("; "))
}

/// Renders a per-view document as `### <view>` sections.
pub fn render_sections<'a>(sections: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    sections.into_iter().map(|(v, p)| format!("### {v}\n{p}")).collect::<Vec<_>>().join("\n")
}

/// Splits a response into `(header, body)` sections. A header is a line
/// starting with `#`; markdown emphasis and a trailing colon are removed.
/// Text before the first header is ignored. Body lines are joined with a space.
pub fn parse_sections(raw: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, Vec<&str>)> = Vec::new();
    for line in raw.lines() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('#') {
            let name = h.trim_start_matches('#').trim().trim_matches('*').trim().trim_end_matches(':').trim();
            if name.is_empty() {
                continue;
            }
            out.push((name.to_string(), Vec::new()));
        } else if let Some((_, body)) = out.last_mut() {
            if !t.is_empty() {
                body.push(t);
            }
        }
    }
    if out.is_empty() {
        return Err(MadsError::Parse { message: "no `### <view name>` headers found".into(), raw: raw.to_string() });
    }
    Ok(out.into_iter().map(|(h, b)| (h, b.join(" "))).collect())
}

/// Splits text into sentences after `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            let s = cur.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

fn sentence_key(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Maps parsed sections onto `views`. Headers are matched after name
/// normalization, repeated headers are concatenated, unknown headers are
/// dropped and a sentence already placed under an earlier view is skipped.
/// Returns one paragraph per view (possibly empty) and the number of views
/// that had a header.
pub fn assign_sections(views: &AttributeViewSet, sections: &[(String, String)]) -> (Vec<String>, usize) {
    let mut paragraphs: Vec<Vec<String>> = vec![Vec::new(); views.len()];
    let mut found = vec![false; views.len()];
    let mut used = HashSet::new();
    for (header, body) in sections {
        let Some(i) = views.position(header) else {
            log::debug!("ignoring section for unknown view {header:?}");
            continue;
        };
        found[i] = true;
        for s in split_sentences(body) {
            if used.insert(sentence_key(&s)) {
                paragraphs[i].push(s);
            }
        }
    }
    (paragraphs.into_iter().map(|p| p.join(" ")).collect(), found.iter().filter(|&&f| f).count())
}

/// Case-folded view-name key used for intersections.
pub fn view_key(name: &str) -> String {
    normalize_view_name(name)
}
