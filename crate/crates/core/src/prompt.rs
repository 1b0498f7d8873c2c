//! Pattern application, cross-lingual contexts and prompt assembly.

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, PatternTemplate, Piece, Sample, TaskSpec, MASK};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_PROMPT_CHARS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Joins contexts and the prompted input.
    pub separator: String,
    /// Hard limit on the assembled prompt, in characters.
    pub max_prompt_chars: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            separator: " ".into(),
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub text: String,
    /// Character (not byte) offset of the mask placeholder.
    pub mask_position: usize,
    /// Verbalizer words in label-index order.
    pub candidates: Vec<String>,
    /// Ids of the samples the contexts were built from.
    pub provenance: Vec<String>,
}

pub fn mask_count(text: &str) -> usize {
    text.matches(MASK).count()
}

fn render(p: &PatternTemplate, sample: &Sample, mask: &str) -> Result<String> {
    let expected = p.arity().segments();
    if sample.segments.len() != expected {
        return Err(Error::ArityMismatch {
            id: sample.id.clone(),
            expected,
            found: sample.segments.len(),
        });
    }
    let mut out = String::new();
    for piece in p.pieces() {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Segment(i) => out.push_str(&sample.segments[*i]),
            Piece::Mask => out.push_str(mask),
        }
    }
    Ok(out)
}

/// Fills the segment placeholders with the sample text, keeping the mask.
pub fn apply_pattern(p: &PatternTemplate, sample: &Sample) -> Result<String> {
    render(p, sample, MASK)
}

/// A filled pattern whose mask is replaced by the verbalized `label`.
pub fn build_context(
    p: &PatternTemplate,
    retrieved: &Sample,
    label: &Label,
    spec: &TaskSpec,
) -> Result<String> {
    let word = spec.verbalize(label)?;
    let text = render(p, retrieved, word)?;
    if mask_count(&text) != 0 {
        return Err(Error::Prompt(format!(
            "context from `{}` contains a mask placeholder",
            retrieved.id
        )));
    }
    Ok(text)
}

/// Contexts (most similar first) followed by the prompted input, joined
/// by the configured separator.
pub fn assemble_prompt(
    contexts: &[String],
    provenance: &[String],
    input: &Sample,
    p: &PatternTemplate,
    spec: &TaskSpec,
    cfg: &PromptConfig,
) -> Result<AssembledPrompt> {
    if contexts.len() != provenance.len() {
        return Err(Error::InvalidArgument(format!(
            "{} contexts but {} provenance ids",
            contexts.len(),
            provenance.len()
        )));
    }
    if let Some(i) = contexts.iter().position(|c| c.contains(MASK)) {
        return Err(Error::Prompt(format!(
            "context {i} (from `{}`) contains a mask placeholder",
            provenance[i]
        )));
    }
    let prompted = apply_pattern(p, input)?;
    if mask_count(&prompted) != 1 {
        return Err(Error::Prompt(format!(
            "input `{}` contains a literal mask placeholder",
            input.id
        )));
    }

    let mut text = String::new();
    for c in contexts {
        text.push_str(c);
        text.push_str(&cfg.separator);
    }
    let prefix_chars = text.chars().count();
    let mask_in_input = prompted
        .find(MASK)
        .map(|b| prompted[..b].chars().count())
        .expect("one mask present");
    text.push_str(&prompted);

    let len = text.chars().count();
    if len > cfg.max_prompt_chars {
        return Err(Error::PromptTooLong {
            len,
            max: cfg.max_prompt_chars,
        });
    }
    Ok(AssembledPrompt {
        text,
        mask_position: prefix_chars + mask_in_input,
        candidates: spec.candidates().to_vec(),
        provenance: provenance.to_vec(),
    })
}
