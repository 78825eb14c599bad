use serde::{Deserialize, Serialize};

use crate::AttribError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Discover,
    Extract,
    ExtractGeneral,
    Summarize,
}

const PLACEHOLDERS: [&str; 3] = ["SUPERCLASS", "CLASSUNIT", "ATTRIBUTE"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, text: impl Into<String>) -> Self {
        Self { kind, text: text.into() }
    }

    /// Substitutes `{NAME}` placeholders. Fails on any placeholder without a
    /// binding; unknown brace groups are left alone.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, AttribError> {
        let mut out = self.text.clone();
        for name in PLACEHOLDERS {
            let token = format!("{{{name}}}");
            if !out.contains(&token) {
                continue;
            }
            let value = bindings
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| AttribError::UnboundPlaceholder(name.to_string()))?;
            out = out.replace(&token, value);
        }
        Ok(out)
    }
}

/// The four templates used by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompts {
    pub discover: PromptTemplate,
    pub extract: PromptTemplate,
    pub extract_general: PromptTemplate,
    pub summarize: PromptTemplate,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            discover: PromptTemplate::new(
                PromptKind::Discover,
                "Your task is to tell me what are the useful attributes for distinguishing {SUPERCLASS} {CLASSUNIT} in a photo of a {SUPERCLASS}",
            ),
            extract: PromptTemplate::new(
                PromptKind::Extract,
                "Questions: Briefly describe the {ATTRIBUTE} of the {SUPERCLASS} in this image. Answer:",
            ),
            extract_general: PromptTemplate::new(
                PromptKind::ExtractGeneral,
                "Questions: Describe this image in details. Answer:",
            ),
            summarize: PromptTemplate::new(
                PromptKind::Summarize,
                "Summarize the information you get about the {SUPERCLASS} from the general description and attribute description with five sentences.",
            ),
        }
    }
}
