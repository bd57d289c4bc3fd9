//! Sub-target prompt production: instruction templates, an OpenAI-compatible
//! chat-completion client, a deterministic rule-based splitter, and the
//! attribute-block decomposer used by toy scenes.

use regex::Regex;
use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::field::Condition;

pub mod stub;

/// Source/target prompt pair for an edit.
#[derive(Debug, Clone)]
pub struct PromptPair {
    pub source_text: String,
    pub target_text: String,
}

impl PromptPair {
    pub fn new(source_text: impl Into<String>, target_text: impl Into<String>) -> Result<Self> {
        let pair = PromptPair {
            source_text: source_text.into(),
            target_text: target_text.into(),
        };
        if pair.source_text.trim().is_empty() || pair.target_text.trim().is_empty() {
            return Err(Error::config("prompt pair texts must be non-empty"));
        }
        Ok(pair)
    }
}

/// Instruction template used to ask the model for a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Psi1,
    Psi2,
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psi1" => Ok(Template::Psi1),
            "psi2" => Ok(Template::Psi2),
            other => Err(Error::config(format!("unknown template '{other}'"))),
        }
    }
}

const PSI1_TEMPLATE: &str = include_str!("../resources/psi1.txt");
const PSI2_TEMPLATE: &str = include_str!("../resources/psi2.txt");

/// Renders the instruction template with the pair's texts substituted verbatim.
pub fn render_template(pair: &PromptPair, template: Template) -> String {
    let text = match template {
        Template::Psi1 => PSI1_TEMPLATE,
        Template::Psi2 => PSI2_TEMPLATE,
    };
    text.replace("{source}", &pair.source_text)
        .replace("{target}", &pair.target_text)
}

/// Where a decomposition came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Llm,
    Rule,
    Manual,
    Attribute,
}

/// Ordered sub-target prompts, as text or as ready-made conditions.
#[derive(Debug, Clone)]
pub enum SubPrompts {
    Texts(Vec<String>),
    Conditions(Vec<Condition>),
}

impl SubPrompts {
    pub fn len(&self) -> usize {
        match self {
            SubPrompts::Texts(t) => t.len(),
            SubPrompts::Conditions(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decomposition output: 1 to N_max sub-prompts plus provenance.
#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub sub_prompts: SubPrompts,
    pub provenance: Provenance,
    pub template_used: Option<Template>,
}

impl DecompositionResult {
    fn texts(
        texts: Vec<String>,
        provenance: Provenance,
        template: Option<Template>,
    ) -> Result<Self> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::config("sub-prompts must be non-empty"));
        }
        Ok(DecompositionResult {
            sub_prompts: SubPrompts::Texts(texts),
            provenance,
            template_used: template,
        })
    }

    pub fn text_list(&self) -> Option<&[String]> {
        match &self.sub_prompts {
            SubPrompts::Texts(t) => Some(t),
            SubPrompts::Conditions(_) => None,
        }
    }

    pub fn condition_list(&self) -> Option<&[Condition]> {
        match &self.sub_prompts {
            SubPrompts::Conditions(c) => Some(c),
            SubPrompts::Texts(_) => None,
        }
    }
}

/// Extracts numbered items (`1.`, `1)`, `1:`) from text, in order of
/// appearance; an empty result signals an unparseable reply to the caller.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let re = Regex::new(r"^\s*\d+\s*[.):]\s*(.+?)\s*$").expect("static regex compiles");
    text.lines()
        .filter_map(|line| {
            re.captures(line)
                .map(|caps| caps.get(1).expect("capture group").as_str().to_string())
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Endpoint settings for the chat-completion client. The API key is looked up
/// from the named environment variable at request time; without it the
/// request is sent unauthenticated (fine against the stub server).
#[derive(Debug, Clone)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub temperature: f64,
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let cfg = LlmEndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: 30,
            temperature: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::config(format!(
                "endpoint base url must start with http:// or https://, got '{}'",
                self.base_url
            )));
        }
        if self.timeout_secs == 0 {
            return Err(Error::config("endpoint timeout must be positive"));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

/// Sends the rendered template to an OpenAI-compatible chat-completion
/// endpoint and parses the numbered reply into at most `n_max` sub-prompts.
pub fn decompose_llm(
    pair: &PromptPair,
    template: Template,
    endpoint: &LlmEndpointConfig,
    n_max: usize,
) -> Result<DecompositionResult> {
    endpoint.validate()?;
    if n_max == 0 {
        return Err(Error::config("n_max must be >= 1"));
    }
    let prompt = render_template(pair, template);
    let url = format!(
        "{}/v1/chat/completions",
        endpoint.base_url.trim_end_matches('/')
    );
    let body = json!({
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": endpoint.temperature,
    });

    let config = ureq::Agent::config_builder()
        .timeout_global(Some(std::time::Duration::from_secs(endpoint.timeout_secs)))
        .build();
    let agent = ureq::Agent::new_with_config(config);
    let mut request = agent.post(&url).header("content-type", "application/json");
    if let Some(var) = &endpoint.api_key_env {
        if let Ok(key) = std::env::var(var) {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
    }
    let mut response = request
        .send_json(&body)
        .map_err(|e| Error::Network(format!("chat completion request failed: {e}")))?;
    let parsed: ChatCompletionResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| Error::Network(format!("could not read chat completion body: {e}")))?;

    let content = parsed
        .choices
        .first()
        .and_then(|c| c.message.content.clone())
        .ok_or_else(|| Error::Parse {
            message: "chat completion reply has no message content".into(),
            raw: String::new(),
        })?;
    let items = parse_numbered_list(&content);
    if items.is_empty() {
        return Err(Error::Parse {
            message: "reply contains no numbered items".into(),
            raw: content,
        });
    }
    let items: Vec<String> = items.into_iter().take(n_max).collect();
    DecompositionResult::texts(items, Provenance::Llm, Some(template))
}

/// Deterministic offline splitter.
///
/// The target text is segmented at commas, semicolons, and the connective
/// words "and", "with", "while", "wearing". The first segment is taken as the
/// head phrase; each remaining segment becomes one sub-prompt of the form
/// `head <connective> segment` (comma/"and" boundaries reuse "with"), with
/// the bare head as the first sub-prompt. Unsplittable targets come back as a
/// single sub-prompt equal to the whole target.
pub fn decompose_rule_based(pair: &PromptPair, n_max: usize) -> Result<DecompositionResult> {
    if n_max == 0 {
        return Err(Error::config("n_max must be >= 1"));
    }
    let target = pair.target_text.trim();
    let re = Regex::new(r"(?i)(,|;|\band\b|\bwith\b|\bwhile\b|\bwearing\b)")
        .expect("static regex compiles");

    let mut segments: Vec<(Option<String>, String)> = Vec::new();
    let mut cursor = 0usize;
    let mut pending_joiner: Option<String> = None;
    for m in re.find_iter(target) {
        let piece = target[cursor..m.start()].trim();
        if !piece.is_empty() {
            segments.push((pending_joiner.take(), piece.to_string()));
        }
        pending_joiner = Some(m.as_str().trim().to_lowercase());
        cursor = m.end();
    }
    let tail = target[cursor..].trim();
    if !tail.is_empty() {
        segments.push((pending_joiner.take(), tail.to_string()));
    }

    if segments.len() <= 1 {
        return DecompositionResult::texts(vec![target.to_string()], Provenance::Rule, None);
    }

    let head = segments[0].1.clone();
    let mut subs = vec![head.clone()];
    for (joiner, seg) in &segments[1..] {
        let connective = match joiner.as_deref() {
            Some("while") => "while",
            Some("wearing") => "wearing",
            // Comma/"and"/"with" boundaries all reattach with "with".
            _ => "with",
        };
        subs.push(format!("{head} {connective} {seg}"));
    }
    subs.truncate(n_max);
    DecompositionResult::texts(subs, Provenance::Rule, None)
}

/// Builds one sub-condition per attribute block on which the target condition
/// differs from the source: the source embedding with that single block
/// replaced by the target's. `block_layout` gives the per-attribute block
/// sizes and must partition the embedding.
pub fn decompose_attributes(
    cond_src: &Condition,
    cond_tgt: &Condition,
    block_layout: &[usize],
    n_max: usize,
) -> Result<DecompositionResult> {
    if n_max == 0 {
        return Err(Error::config("n_max must be >= 1"));
    }
    if cond_src.dim() != cond_tgt.dim() {
        return Err(Error::dimension(
            "source and target conditions differ in dimension",
        ));
    }
    let total: usize = block_layout.iter().sum();
    if total != cond_src.dim() || block_layout.contains(&0) {
        return Err(Error::config(format!(
            "block layout {block_layout:?} does not partition an embedding of dim {}",
            cond_src.dim()
        )));
    }

    let mut conditions = Vec::new();
    let mut base = 0usize;
    for (k, &len) in block_layout.iter().enumerate() {
        let range = base..base + len;
        if cond_src.embedding[range.clone()] != cond_tgt.embedding[range.clone()] {
            let mut embedding = cond_src.embedding.clone();
            embedding[range.clone()].copy_from_slice(&cond_tgt.embedding[range]);
            conditions.push(Condition::new(embedding)?.with_label(format!("attr{k}->target")));
        }
        base += len;
    }
    if conditions.is_empty() {
        return Err(Error::config(
            "no edit requested: source and target conditions are identical",
        ));
    }
    conditions.truncate(n_max);
    Ok(DecompositionResult {
        sub_prompts: SubPrompts::Conditions(conditions),
        provenance: Provenance::Attribute,
        template_used: None,
    })
}
