use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{AttribError, Endpoint, Prompts};

pub const GENERAL_ATTRIBUTE: &str = "General description of the image";

/// Attribute names for one super-category. The general description is
/// always first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub super_category: String,
    pub names: Vec<String>,
}

impl AttributeSet {
    /// Prepends the general attribute and drops case-insensitive repeats,
    /// keeping first occurrences.
    pub fn new(super_category: &str, names: impl IntoIterator<Item = String>) -> Self {
        let mut out: Vec<String> = vec![GENERAL_ATTRIBUTE.to_string()];
        let mut seen = vec![GENERAL_ATTRIBUTE.to_lowercase()];
        for n in names {
            let n = n.trim().to_string();
            let key = n.to_lowercase();
            if n.is_empty() || seen.contains(&key) {
                continue;
            }
            seen.push(key);
            out.push(n);
        }
        Self { super_category: super_category.to_string(), names: out }
    }

    pub fn discovered(&self) -> &[String] {
        &self.names[1..]
    }
}

fn strip_marker(line: &str) -> &str {
    let s = line.trim().trim_start_matches(['-', '*', '•', '+', '·']).trim_start();
    // "1." / "12)" / "(3)" / "a."
    let s2 = s.trim_start_matches('(');
    let digits = s2.len() - s2.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let tail = &s2[digits..];
    if digits > 0 && (tail.starts_with(['.', ')', ':']) || tail.starts_with(" -")) {
        return tail[1..].trim_start_matches('-').trim();
    }
    let mut chars = s2.chars();
    if let (Some(c), Some(p)) = (chars.next(), chars.next()) {
        if c.is_ascii_lowercase() && (p == '.' || p == ')') && s2.len() > 2 && s2.as_bytes()[2] == b' ' {
            return s2[2..].trim();
        }
    }
    s
}

/// Lenient attribute-list parser: one name per line, enumeration markers and
/// bold markup removed, `name: explanation` reduced to `name`, header lines
/// ending in a colon skipped.
pub fn parse_attribute_list(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(|line| {
            let l = strip_marker(&line.replace("**", "")).to_string();
            if l.is_empty() || l.ends_with(':') {
                return None;
            }
            let name = match l.split_once(':') {
                Some((head, _)) => head.trim(),
                None => l.trim(),
            };
            let name = name.trim_end_matches(['.', ',', ';']).trim();
            (!name.is_empty()).then(|| name.to_string())
        })
        .collect()
}

/// Asks the LLM which attributes separate categories of `super_category`.
pub fn discover(
    endpoint: &Endpoint,
    prompts: &Prompts,
    super_category: &str,
    class_unit: &str,
) -> Result<AttributeSet, AttribError> {
    let prompt = prompts.discover.render(&[("SUPERCLASS", super_category), ("CLASSUNIT", class_unit)])?;
    let raw = endpoint.ask(&format!("super:{super_category}"), &prompt, None)?;
    let names = parse_attribute_list(&raw);
    if names.is_empty() {
        return Err(AttribError::Parse { message: "no attribute names found".into(), raw });
    }
    Ok(AttributeSet::new(super_category, names))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub id: String,
    pub category: usize,
    /// Image URL, path or data URI, passed through untouched.
    pub image: String,
}

/// One extracted value. `value` is set on success, `error` on failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeValue {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AttributeValue {
    pub fn is_ok(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleAttributes {
    pub sample_id: String,
    pub category: usize,
    pub attributes: Vec<AttributeValue>,
    #[serde(default)]
    pub summary: Option<String>,
}

impl SampleAttributes {
    pub fn failed_keys(&self) -> Vec<&str> {
        self.attributes.iter().filter(|a| !a.is_ok()).map(|a| a.name.as_str()).collect()
    }

    pub fn value(&self, name: &str) -> Option<&str> {
        self.attributes.iter().find(|a| a.name == name).and_then(|a| a.value.as_deref())
    }
}

/// One VQA request per attribute, general description first. A key whose
/// transport fails is marked failed and the rest continue. Pass `previous`
/// to re-request only the keys that are not yet filled.
pub fn extract(
    endpoint: &Endpoint,
    prompts: &Prompts,
    sample: &SampleRef,
    attrs: &AttributeSet,
    previous: Option<&SampleAttributes>,
) -> Result<SampleAttributes, AttribError> {
    let mut out = Vec::with_capacity(attrs.names.len());
    for (i, name) in attrs.names.iter().enumerate() {
        if let Some(v) = previous.and_then(|p| p.value(name)) {
            out.push(AttributeValue { name: name.clone(), value: Some(v.to_string()), error: None });
            continue;
        }
        let prompt = if i == 0 {
            prompts.extract_general.render(&[("SUPERCLASS", &attrs.super_category)])?
        } else {
            prompts.extract.render(&[("SUPERCLASS", &attrs.super_category), ("ATTRIBUTE", name)])?
        };
        let entry = match endpoint.ask(&sample.id, &prompt, Some(&sample.image)) {
            Ok(v) => AttributeValue { name: name.clone(), value: Some(v), error: None },
            Err(e @ AttribError::Transport { .. }) => {
                AttributeValue { name: name.clone(), value: None, error: Some(e.to_string()) }
            }
            Err(e) => return Err(e),
        };
        out.push(entry);
    }
    Ok(SampleAttributes { sample_id: sample.id.clone(), category: sample.category, attributes: out, summary: None })
}

/// Condenses the key-value block into a description.
pub fn summarize(
    endpoint: &Endpoint,
    prompts: &Prompts,
    sample: &SampleAttributes,
    attrs: &AttributeSet,
) -> Result<SampleAttributes, AttribError> {
    let missing: Vec<String> =
        attrs.names.iter().filter(|n| sample.value(n).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(AttribError::MissingKeys(missing));
    }
    let mut prompt = prompts.summarize.render(&[("SUPERCLASS", &attrs.super_category)])?;
    prompt.push_str("\n\n");
    for name in &attrs.names {
        let v = sample.value(name).unwrap_or_default();
        prompt.push_str(&format!("{name}: {}\n", v.trim()));
    }
    let raw = endpoint.ask(&sample.sample_id, &prompt, None)?;
    if raw.trim().is_empty() {
        return Err(AttribError::Parse { message: "empty summary".into(), raw });
    }
    let mut out = sample.clone();
    out.summary = Some(raw);
    Ok(out)
}

/// Replaces class names with a demonstrative, longest names first, matching
/// ASCII case-insensitively on word boundaries. A leading article is
/// absorbed so "the Boeing 737" becomes "this aircraft".
pub fn scrub_class_names(text: &str, class_names: &[String], replacement: &str) -> String {
    let mut names: Vec<&String> = class_names.iter().filter(|n| !n.trim().is_empty()).collect();
    names.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let mut out = text.to_string();
    for name in names {
        let needle = name.to_ascii_lowercase();
        let mut result = String::with_capacity(out.len());
        let mut rest = out.as_str();
        loop {
            let lower = rest.to_ascii_lowercase();
            let Some(pos) = find_word(&lower, &needle) else {
                result.push_str(rest);
                break;
            };
            let mut head = &rest[..pos];
            for article in ["the ", "a ", "an "] {
                let h = head.to_ascii_lowercase();
                if h.ends_with(article) && is_boundary_before(&h, h.len() - article.len()) {
                    head = &head[..head.len() - article.len()];
                    break;
                }
            }
            let at_sentence_start = head.trim_end().is_empty() && result.trim_end().is_empty()
                || head.trim_end().ends_with(['.', '!', '?'])
                || (head.trim_end().is_empty() && result.trim_end().ends_with(['.', '!', '?']));
            result.push_str(head);
            if at_sentence_start {
                let mut c = replacement.chars();
                if let Some(f) = c.next() {
                    result.extend(f.to_uppercase());
                    result.push_str(c.as_str());
                }
            } else {
                result.push_str(replacement);
            }
            rest = &rest[pos + needle.len()..];
        }
        out = result;
    }
    out
}

fn is_boundary_before(s: &str, pos: usize) -> bool {
    pos == 0 || !s[..pos].chars().next_back().is_some_and(|c| c.is_alphanumeric())
}

fn find_word(hay: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(off) = hay[from..].find(needle) {
        let pos = from + off;
        let end = pos + needle.len();
        let after_ok = !hay[end..].chars().next().is_some_and(|c| c.is_alphanumeric());
        if is_boundary_before(hay, pos) && after_ok {
            return Some(pos);
        }
        from = pos + hay[pos..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub super_category: String,
    pub class_unit: String,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    /// Category names indexed by id; when set, summaries are scrubbed.
    #[serde(default)]
    pub scrub_names: Option<Vec<String>>,
}

impl PipelineOptions {
    pub fn new(super_category: &str, class_unit: &str) -> Self {
        Self {
            super_category: super_category.into(),
            class_unit: class_unit.into(),
            max_in_flight: 4,
            scrub_names: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub attributes: AttributeSet,
    pub samples: Vec<SampleAttributes>,
    /// (sample id, reason) for samples left without a summary.
    pub incomplete: Vec<(String, String)>,
}

/// discover, then extract and summarize every sample. Samples run in
/// parallel but output order follows the input.
pub fn run_pipeline(
    llm: &Endpoint,
    vqa: &Endpoint,
    prompts: &Prompts,
    samples: &[SampleRef],
    opts: &PipelineOptions,
) -> Result<PipelineOutput, AttribError> {
    let attrs = discover(llm, prompts, &opts.super_category, &opts.class_unit)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_in_flight.max(1))
        .build()
        .map_err(|e| AttribError::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<(SampleAttributes, Option<String>), AttribError>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let extracted = extract(vqa, prompts, s, &attrs, None)?;
                match summarize(llm, prompts, &extracted, &attrs) {
                    Ok(mut done) => {
                        if let (Some(names), Some(summary)) = (&opts.scrub_names, &done.summary) {
                            let repl = format!("this {}", opts.super_category);
                            done.summary = Some(scrub_class_names(summary, names, &repl));
                        }
                        Ok((done, None))
                    }
                    Err(e @ (AttribError::MissingKeys(_) | AttribError::Transport { .. } | AttribError::Parse { .. })) => {
                        Ok((extracted, Some(e.to_string())))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    let mut incomplete = Vec::new();
    for r in results {
        let (s, reason) = r?;
        if let Some(reason) = reason {
            incomplete.push((s.sample_id.clone(), reason));
        }
        out.push(s);
    }
    Ok(PipelineOutput { attributes: attrs, samples: out, incomplete })
}

/// Triples file: one JSON object per line.
pub fn write_triples(path: &Path, samples: &[SampleAttributes]) -> Result<(), AttribError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s).expect("sample serializes");
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triples(path: &Path) -> Result<Vec<SampleAttributes>, AttribError> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AttribError::Format {
            path: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
