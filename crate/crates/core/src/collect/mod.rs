//! LLM-driven document collection: attribute views agreed over repeated
//! queries, per-class division into view paragraphs, and enrichment of
//! thin paragraphs. Every valid exchange is cached on disk, so reruns are
//! free and interrupted runs resume.

mod cache;
mod client;
mod mock;
mod prompts;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use client::{CompletionRequest, CountingClient, HttpClient, LlmClient, ScriptedClient};
pub use mock::{mock_encyclopedia_entry, MockLlm};
pub use prompts::{
    assign_sections, parse_sections, render_attributes, render_sections, split_sentences, PromptTemplate,
    PromptTemplates, SLOT_ATTRIBUTES, SLOT_CATEGORY, SLOT_DIVIDED, SLOT_DOCUMENT, SLOT_TYPE,
};

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{save_documents, AttributeView, AttributeViewSet, MultiAttributeDocument};
use crate::error::{MadsError, Result};

/// File written to the cache directory when `collect_all` fails part-way.
pub const PARTIAL_DOCUMENTS: &str = "partial_documents.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionConfig {
    /// Dataset domain for the `{type}` slot, e.g. `animal`.
    pub domain: String,
    pub t_repeat: usize,
    pub temperature: f64,
    pub model_id: String,
    /// Re-queries after an unusable response.
    pub max_retries: usize,
    pub cache_dir: Option<PathBuf>,
    /// Classes processed concurrently.
    pub concurrency: usize,
    pub templates: PromptTemplates,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            domain: "animal".into(),
            t_repeat: 5,
            temperature: 1.0,
            model_id: "gpt-4".into(),
            max_retries: 3,
            cache_dir: None,
            concurrency: 4,
            templates: PromptTemplates::default(),
        }
    }
}

impl CollectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_repeat == 0 {
            return Err(MadsError::Config("t_repeat must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(MadsError::Config("concurrency must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(MadsError::Config(format!("temperature {} is not a valid value", self.temperature)));
        }
        if self.domain.trim().is_empty() {
            return Err(MadsError::Config("domain must not be empty".into()));
        }
        if !(0.6..=1.4).contains(&self.temperature) {
            log::warn!("temperature {} is outside the recommended range [0.6, 1.4]", self.temperature);
        }
        Ok(())
    }
}

/// Views and documents produced by [`collect_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub views: AttributeViewSet,
    pub documents: Vec<MultiAttributeDocument>,
}

struct Session<'a, C: ?Sized> {
    client: &'a C,
    config: &'a CollectionConfig,
    cache: ResponseCache,
}

impl<'a, C: LlmClient + ?Sized> Session<'a, C> {
    fn new(client: &'a C, config: &'a CollectionConfig) -> Self {
        Self { client, config, cache: ResponseCache::new(config.cache_dir.as_deref()) }
    }

    /// Cached or fresh response that `parse` accepts. Only accepted responses
    /// are cached; a cached response that no longer parses is re-queried.
    fn query<T>(&self, prompt: &str, sample: u32, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        let c = self.config;
        if let Some(cached) = self.cache.get(&c.model_id, c.temperature, prompt, sample) {
            match parse(&cached) {
                Ok(v) => return Ok(v),
                Err(e) => log::warn!("cached response no longer parses, re-querying: {e}"),
            }
        }
        let mut last = None;
        for attempt in 0..=c.max_retries {
            let request =
                CompletionRequest { prompt, temperature: c.temperature, model_id: &c.model_id, sample, attempt: attempt as u32 };
            let outcome = self.client.complete(&request).and_then(|raw| parse(&raw).map(|v| (v, raw)));
            match outcome {
                Ok((value, raw)) => {
                    self.cache.put(&CacheEntry {
                        prompt: prompt.to_string(),
                        temperature: c.temperature,
                        model_id: c.model_id.clone(),
                        sample,
                        response: raw,
                    })?;
                    return Ok(value);
                }
                Err(e) => {
                    log::warn!("attempt {} of {} failed: {}", attempt + 1, c.max_retries + 1, e);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn parse_view_list(raw: &str) -> Result<Vec<AttributeView>> {
    Ok(parse_sections(raw)?
        .into_iter()
        .map(|(name, explanation)| AttributeView { name, explanation })
        .collect())
}

/// Views present in every response (case-folded names), in the order and
/// spelling of the first response.
pub fn intersect_views(responses: &[Vec<AttributeView>]) -> Vec<AttributeView> {
    let Some((first, rest)) = responses.split_first() else { return Vec::new() };
    let sets: Vec<HashSet<String>> =
        rest.iter().map(|r| r.iter().map(|v| prompts::view_key(&v.name)).collect()).collect();
    let mut taken = HashSet::new();
    first
        .iter()
        .filter(|v| {
            let key = prompts::view_key(&v.name);
            sets.iter().all(|s| s.contains(&key)) && taken.insert(key)
        })
        .cloned()
        .collect()
}

/// Queries the view prompt `t_repeat` times and keeps the common views.
pub fn generate_views<C: LlmClient + ?Sized>(client: &C, config: &CollectionConfig) -> Result<AttributeViewSet> {
    config.validate()?;
    let session = Session::new(client, config);
    let prompt = config.templates.view.render(&[(SLOT_TYPE, &config.domain)]);
    let responses = (0..config.t_repeat as u32)
        .map(|s| session.query(&prompt, s, parse_view_list))
        .collect::<Result<Vec<_>>>()?;
    let common = intersect_views(&responses);
    if common.is_empty() {
        return Err(MadsError::EmptyViews { responses: responses.len() });
    }
    AttributeViewSet::new(common)
}

/// One query asking for an explanation of each agreed view. Views the
/// response does not cover keep their previous explanation.
pub fn explain_views<C: LlmClient + ?Sized>(
    client: &C,
    config: &CollectionConfig,
    views: &AttributeViewSet,
) -> Result<AttributeViewSet> {
    let session = Session::new(client, config);
    let attrs = render_attributes(views.names());
    let prompt = config.templates.explain.render(&[(SLOT_TYPE, &config.domain), (SLOT_ATTRIBUTES, &attrs)]);
    let sections = session.query(&prompt, 0, parse_sections)?;
    let mut out = views.views().to_vec();
    for (name, text) in sections {
        if let Some(i) = views.position(&name) {
            if !text.trim().is_empty() {
                out[i].explanation = text.trim().to_string();
            }
        }
    }
    AttributeViewSet::new(out)
}

fn to_map(views: &AttributeViewSet, paragraphs: Vec<String>) -> BTreeMap<String, String> {
    views.names().map(str::to_string).zip(paragraphs).collect()
}

/// Splits a collected document into one paragraph per view. Views the
/// document does not describe map to an empty string.
pub fn divide_document<C: LlmClient + ?Sized>(
    client: &C,
    config: &CollectionConfig,
    views: &AttributeViewSet,
    collected_doc: &str,
) -> Result<BTreeMap<String, String>> {
    let doc = collected_doc.trim();
    if doc.is_empty() {
        return Err(MadsError::EmptyInput("collected document is empty".into()));
    }
    let session = Session::new(client, config);
    let attrs = render_attributes(views.names());
    let prompt = config.templates.divide.render(&[
        (SLOT_TYPE, &config.domain),
        (SLOT_DOCUMENT, doc.trim_end_matches('.')),
        (SLOT_ATTRIBUTES, &attrs),
    ]);
    let paragraphs = session.query(&prompt, 0, |raw| {
        let (paragraphs, found) = assign_sections(views, &parse_sections(raw)?);
        if found == 0 {
            return Err(MadsError::Parse {
                message: format!("none of the {} attribute views has a section", views.len()),
                raw: raw.to_string(),
            });
        }
        Ok(paragraphs)
    })?;
    Ok(to_map(views, paragraphs))
}

/// Fills thin or empty view paragraphs. A view the response leaves out keeps
/// its divided paragraph; a view that is still empty is an error.
pub fn enrich_document<C: LlmClient + ?Sized>(
    client: &C,
    config: &CollectionConfig,
    category_name: &str,
    views: &AttributeViewSet,
    divided: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, String>> {
    let originals = views
        .names()
        .map(|n| {
            divided
                .get(n)
                .cloned()
                .ok_or_else(|| MadsError::Validation(format!("divided document of {category_name:?} lacks view {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let session = Session::new(client, config);
    let rendered = render_sections(views.names().zip(originals.iter().map(String::as_str)));
    let prompt = config.templates.enrich.render(&[
        (SLOT_TYPE, &config.domain),
        (SLOT_CATEGORY, category_name),
        (SLOT_DIVIDED, &rendered),
    ]);
    let paragraphs = session.query(&prompt, 0, |raw| {
        let (enriched, _) = assign_sections(views, &parse_sections(raw)?);
        let merged: Vec<String> = enriched
            .into_iter()
            .zip(&originals)
            .map(|(e, o)| if e.trim().is_empty() { o.trim().to_string() } else { e })
            .collect();
        if let Some(i) = merged.iter().position(|p| p.is_empty()) {
            return Err(MadsError::Enrichment {
                category: category_name.to_string(),
                view: views.views()[i].name.clone(),
            });
        }
        Ok(merged)
    })?;
    Ok(to_map(views, paragraphs))
}

/// Full collection: `t_repeat` view queries and one explanation query, then
/// divide and enrich for every class. A cold run issues exactly
/// `1 + t_repeat + 2 * classes` client calls. When a class fails, the
/// documents that succeeded are written to [`PARTIAL_DOCUMENTS`] in the cache
/// directory before the error is returned.
pub fn collect_all<C: LlmClient + ?Sized>(
    client: &C,
    config: &CollectionConfig,
    class_names: &[String],
    raw_docs: &BTreeMap<String, String>,
) -> Result<Collection> {
    config.validate()?;
    let missing: Vec<&str> =
        class_names.iter().filter(|c| !raw_docs.contains_key(*c)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(MadsError::Validation(format!("no raw document for {}", missing.join(", "))));
    }
    let views = generate_views(client, config)?;
    let views = explain_views(client, config, &views)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<MultiAttributeDocument>>>> =
        Mutex::new((0..class_names.len()).map(|_| None).collect());
    let workers = config.concurrency.min(class_names.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(name) = class_names.get(i) else { break };
                let doc = divide_document(client, config, &views, &raw_docs[name])
                    .and_then(|divided| enrich_document(client, config, name, &views, &divided))
                    .map(|paragraphs| MultiAttributeDocument {
                        category_id: i as u32,
                        category_name: name.clone(),
                        paragraphs,
                    })
                    .map_err(|e| e.with_context(format!("class {name:?}")));
                results.lock().expect("result slots")[i] = Some(doc);
            });
        }
    });

    let mut documents = Vec::with_capacity(class_names.len());
    let mut first_err = None;
    for r in results.into_inner().expect("result slots").into_iter().flatten() {
        match r {
            Ok(d) => documents.push(d),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        if let Some(dir) = &config.cache_dir {
            save_documents(&dir.join(PARTIAL_DOCUMENTS), &documents)?;
        }
        return Err(e);
    }
    Ok(Collection { views, documents })
}
