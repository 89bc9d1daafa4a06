//! Seeded mock LLM that follows the response-format contract.
//!
//! The mock recognizes the four default prompts by their wording. View
//! queries return the shipped view table of the domain plus random extra
//! views; division assigns sentences to views by keyword; enrichment keeps
//! every paragraph as a prefix and appends a sentence to short ones. Output
//! depends only on the seed, prompt, sample and attempt.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::client::{CompletionRequest, LlmClient};
use super::prompts::{parse_sections, render_sections, ATTRIBUTES_PREFIX, FORMAT_SEPARATOR};
use crate::corpus::{normalize_word, split_words, AttributeView, AttributeViewSet};
use crate::error::{MadsError, Result};

const EXTRA_VIEWS: &[&str] =
    &["Eye Color", "Posture", "Ear Shape", "Movement", "Seasonal Changes", "Group Size", "Body Proportions"];

/// View-name trigger words and the sentence keywords they imply.
const KEYWORDS: &[(&[&str], &[&str])] = &[
    (
        &["color", "colour", "markings", "patterns", "pattern", "coloration"],
        &[
            "color", "colour", "colored", "coloured", "red", "orange", "yellow", "green", "blue", "purple", "pink",
            "brown", "black", "white", "gray", "grey", "golden", "striped", "stripes", "spotted", "spots",
            "markings", "patterned", "patches",
        ],
    ),
    (
        &["size", "shape"],
        &[
            "size", "large", "small", "big", "tiny", "long", "short", "tall", "length", "weighs", "body", "shape",
            "slender", "stocky", "round", "compact", "elongated", "metres", "meters", "centimetres", "diameter",
        ],
    ),
    (
        &["habitat", "environment", "location"],
        &[
            "habitat", "lives", "found", "forest", "forests", "grassland", "grasslands", "savanna", "wetland",
            "wetlands", "desert", "mountains", "river", "rivers", "ocean", "coast", "garden", "gardens", "meadow",
            "meadows", "woodland", "woodlands",
        ],
    ),
    (
        &["features", "physical"],
        &["horns", "antlers", "ears", "nose", "snout", "paws", "claws", "eyes", "tusks", "mane", "trunk", "hooves"],
    ),
    (
        &["texture", "fur", "feathers", "scales"],
        &["fur", "feathers", "scales", "coat", "hair", "skin", "wool", "texture", "thick", "smooth", "rough", "soft"],
    ),
    (&["beak"], &["beak", "bill"]),
    (&["legs", "feet"], &["legs", "feet", "toes", "talons"]),
    (&["tail"], &["tail", "tails"]),
    (&["wing", "wings"], &["wing", "wings", "wingspan"]),
    (&["behavior", "behaviour"], &["flies", "forages", "hops", "perches", "soars", "dives", "flock", "flocks"]),
    (&["petal", "petals"], &["petal", "petals"]),
    (&["center", "centre"], &["stamen", "stamens", "pistil", "pollen", "center", "centre"]),
    (&["leaf", "stem"], &["leaf", "leaves", "stem", "stems", "hairs"]),
];

const STOP: &[&str] = &["and", "the", "of", "or", "with", "flower", "a"];

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end)? + s;
    Some(&text[s..e])
}

fn body_of(prompt: &str) -> &str {
    prompt.split(FORMAT_SEPARATOR).next().unwrap_or(prompt)
}

fn attribute_names(prompt: &str) -> Vec<String> {
    let body = body_of(prompt);
    let Some(pos) = body.rfind(ATTRIBUTES_PREFIX) else { return Vec::new() };
    let list = body[pos + ATTRIBUTES_PREFIX.len()..].trim().trim_end_matches('.');
    list.split("; ").map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// Keywords that route a sentence to a view.
fn view_keywords(view: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in split_words(view) {
        if w.len() >= 3 && !STOP.contains(&w.as_str()) {
            out.push(w.clone());
        }
        for (triggers, kws) in KEYWORDS {
            if triggers.contains(&w.as_str()) {
                out.extend(kws.iter().map(|k| k.to_string()));
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

fn shipped_explanation(name: &str) -> Option<String> {
    [AttributeViewSet::animal(), AttributeViewSet::bird(), AttributeViewSet::flower()]
        .iter()
        .find_map(|set| set.position(name).map(|i| set.views()[i].explanation.clone()))
}

#[derive(Debug, Clone)]
pub struct MockLlm {
    pub seed: u64,
    /// Probability that a view response carries extra, non-shared views.
    pub extra_view_rate: f64,
    /// Paragraphs with fewer words are enriched.
    pub enrich_below_words: usize,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        Self { seed, extra_view_rate: 0.6, enrich_below_words: 8 }
    }

    fn rng(&self, r: &CompletionRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(r.sample.to_le_bytes());
        h.update(r.attempt.to_le_bytes());
        h.update(r.prompt.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn domain_views(domain: &str) -> Vec<AttributeView> {
        AttributeViewSet::for_domain(domain)
            .map(|s| s.views().to_vec())
            .unwrap_or_else(|| {
                ["Size and Shape", "Color and Patterns", "Habitat and Environment"]
                    .iter()
                    .map(|n| AttributeView { name: n.to_string(), explanation: format!("Visual cues about {}.", n.to_lowercase()) })
                    .collect()
            })
    }

    fn views(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let domain = between(prompt, "determine what ", " species").unwrap_or("animal");
        let mut views = Self::domain_views(domain);
        if rng.random::<f64>() < self.extra_view_rate {
            let n = rng.random_range(1..=2);
            for name in EXTRA_VIEWS.choose_multiple(rng, n) {
                let at = rng.random_range(0..=views.len());
                views.insert(at, AttributeView { name: name.to_string(), explanation: format!("{name} may help.") });
            }
        }
        for v in &mut views {
            if rng.random::<f64>() < 0.2 {
                v.name = v.name.to_lowercase();
            }
        }
        let mut out = String::from("Here are useful visual attribute views.\n");
        for v in views {
            out.push_str(&format!("### {}\n{}\n", v.name, v.explanation));
        }
        out
    }

    fn divide(&self, prompt: &str) -> String {
        let names = attribute_names(prompt);
        let body = body_of(prompt);
        let end = body.rfind(&format!(". {ATTRIBUTES_PREFIX}")).unwrap_or(body.len());
        let start = body.find("one attribute view. ").map(|p| p + "one attribute view. ".len()).unwrap_or(0);
        let doc = &body[start.min(end)..end];
        let keywords: Vec<Vec<String>> = names.iter().map(|n| view_keywords(n)).collect();
        let mut paragraphs: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        for sentence in super::prompts::split_sentences(doc) {
            let words: Vec<String> = sentence.split_whitespace().map(normalize_word).collect();
            if let Some(i) = keywords.iter().position(|kw| words.iter().any(|w| kw.contains(w))) {
                paragraphs[i].push(sentence);
            }
        }
        let joined: Vec<String> = paragraphs.iter().map(|p| p.join(" ")).collect();
        render_sections(names.iter().map(String::as_str).zip(joined.iter().map(String::as_str)))
    }

    fn enrich(&self, prompt: &str, rng: &mut ChaCha8Rng) -> Result<String> {
        let body = body_of(prompt);
        let category = between(body, "document about ", " that needs").unwrap_or("this species").to_string();
        let marker = "additional descriptions: ";
        let divided = body.find(marker).map(|p| &body[p + marker.len()..]).unwrap_or("");
        let divided = divided.strip_suffix('.').unwrap_or(divided);
        let sections = parse_sections(divided)?;
        let mut out = Vec::new();
        for (name, text) in sections {
            let mut text = text.trim().to_string();
            if text.split_whitespace().count() < self.enrich_below_words {
                let kws = view_keywords(&name);
                let picked: Vec<&String> = kws.choose_multiple(rng, 2).collect();
                let detail = match picked.as_slice() {
                    [a, b] => format!("{a} and {b}"),
                    [a] => a.to_string(),
                    _ => "distinctive".to_string(),
                };
                let extra = format!("The {} shows {} details in its {}.", category, detail, name.to_lowercase());
                text = if text.is_empty() { extra } else { format!("{text} {extra}") };
            }
            out.push((name, text));
        }
        Ok(render_sections(out.iter().map(|(n, t)| (n.as_str(), t.as_str()))))
    }

    fn explain(&self, prompt: &str) -> String {
        let names = attribute_names(prompt);
        let texts: Vec<String> = names
            .iter()
            .map(|n| shipped_explanation(n).unwrap_or_else(|| format!("Visual cues about {} separate similar species.", n.to_lowercase())))
            .collect();
        render_sections(names.iter().map(String::as_str).zip(texts.iter().map(String::as_str)))
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let mut rng = self.rng(request);
        let p = request.prompt;
        if p.contains("what visual attribute views") {
            Ok(self.views(p, &mut rng))
        } else if p.contains("divide documents into paragraphs") {
            Ok(self.divide(p))
        } else if p.contains("enrich the attribute documents") {
            self.enrich(p, &mut rng).map_err(|e| MadsError::Client(format!("mock cannot read enrich prompt: {e}")))
        } else if p.contains("explain in one sentence") {
            Ok(self.explain(p))
        } else {
            Err(MadsError::Client("mock LLM does not recognize the prompt".into()))
        }
    }
}

/// A seeded stand-in for an encyclopedia entry: visual sentences about
/// color, size and habitat mixed with non-visual ones about diet and sound.
pub fn mock_encyclopedia_entry(domain: &str, category: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update(category.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let colors = ["brown", "black", "white", "gray", "golden", "red", "yellow", "spotted", "striped"];
    let sizes = ["large", "small", "slender", "stocky", "compact", "elongated", "round"];
    let places = ["forests", "grasslands", "wetlands", "mountains", "deserts", "gardens", "meadows", "rivers"];
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).expect("non-empty");
    let mut sentences = vec![
        format!("The {category} is a {domain} with {} and {} coloration.", pick(&mut rng, &colors), pick(&mut rng, &colors)),
        format!("The {category} feeds mostly on seeds and insects."),
        format!("It has a {} body shape.", pick(&mut rng, &sizes)),
        format!("Its call is a loud repeated whistle heard at dawn."),
        format!("It lives in {} and nearby {}.", pick(&mut rng, &places), pick(&mut rng, &places)),
        format!("The name was first recorded in the eighteenth century."),
    ];
    if rng.random::<f64>() < 0.5 {
        sentences.remove(2);
    }
    sentences.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collect::prompts::{render_attributes, PromptTemplates, SLOT_ATTRIBUTES, SLOT_DOCUMENT, SLOT_TYPE};

    fn req(prompt: &str) -> CompletionRequest<'_> {
        CompletionRequest { prompt, temperature: 1.0, model_id: "mock", sample: 0, attempt: 0 }
    }

    #[test]
    fn deterministic_per_sample() {
        let m = MockLlm::new(3);
        let p = PromptTemplates::default().view.render(&[(SLOT_TYPE, "animal")]);
        let a = m.complete(&req(&p)).unwrap();
        assert_eq!(a, m.complete(&req(&p)).unwrap());
        let other: Vec<String> =
            (1..6).map(|s| m.complete(&CompletionRequest { sample: s, ..req(&p) }).unwrap()).collect();
        assert!(other.iter().any(|o| *o != a));
    }

    #[test]
    fn divide_routes_sentences_by_keyword() {
        let m = MockLlm::new(0);
        let doc = "The otter eats fish. It has brown fur. It lives near rivers";
        let attrs = render_attributes(["Color and Patterns", "Habitat and Environment"]);
        let p = PromptTemplates::default().divide.render(&[
            (SLOT_TYPE, "animal"),
            (SLOT_DOCUMENT, doc),
            (SLOT_ATTRIBUTES, &attrs),
        ]);
        let out = m.complete(&req(&p)).unwrap();
        let s = parse_sections(&out).unwrap();
        assert_eq!(s[0], ("Color and Patterns".to_string(), "It has brown fur.".to_string()));
        assert_eq!(s[1], ("Habitat and Environment".to_string(), "It lives near rivers".to_string()));
        assert!(!out.contains("fish"));
    }

    #[test]
    fn unknown_prompt_is_client_error() {
        assert!(matches!(MockLlm::new(0).complete(&req("hello")), Err(MadsError::Client(_))));
    }

    #[test]
    fn encyclopedia_is_seeded() {
        let a = mock_encyclopedia_entry("animal", "otter", 1);
        assert_eq!(a, mock_encyclopedia_entry("animal", "otter", 1));
        assert!(a.contains("otter") && a.contains("feeds"));
    }
}
