//! Edit probes: remove one foreground object, or swap the background.

use std::fmt;

use aspire_core::hash::KeyHasher;
use aspire_core::{LabeledImage, Origin, Pixels};
use serde::{Deserialize, Serialize};

use crate::describe::FeatureExtraction;
use crate::error::{Error, Result};
use crate::text;

const INSTRUCTION_TEMPLATE: &str = include_str!("../prompts/instruction.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    RemoveForeground,
    SwapBackground,
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditKind::RemoveForeground => "remove_foreground",
            EditKind::SwapBackground => "swap_background",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pending,
    KeptCorrect,
    FlaggedSpurious,
    EditFailed,
}

/// Where the edited object was found: a box as (top, left, height, width)
/// and an optional row-major mask over the whole image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: [u32; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    /// Hash of (source, kind, phrases, editor).
    pub id: String,
    pub source_id: String,
    pub label: String,
    pub kind: EditKind,
    /// Removed object, or the original background for a swap.
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_phrase: Option<String>,
    pub editor_id: String,
    /// Id of the edited image; absent when the edit failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Edited image, stored separately from the JSON form.
    #[serde(skip)]
    pub edited: Option<LabeledImage>,
}

impl EditRecord {
    pub fn record_id(source_id: &str, kind: EditKind, phrase: &str, alt: Option<&str>, editor_id: &str) -> String {
        KeyHasher::new()
            .part(source_id)
            .part(kind.to_string())
            .part(phrase)
            .part(alt.unwrap_or(""))
            .part(editor_id)
            .finish()
    }

    fn new(source: &LabeledImage, kind: EditKind, phrase: &str, alt: Option<&str>, editor_id: &str) -> Self {
        Self {
            id: Self::record_id(source.id(), kind, phrase, alt, editor_id),
            source_id: source.id().to_owned(),
            label: source.label.clone(),
            kind,
            phrase: phrase.to_owned(),
            alt_phrase: alt.map(str::to_owned),
            editor_id: editor_id.to_owned(),
            edited_id: None,
            region: None,
            verdict: Verdict::Pending,
            failure: None,
            edited: None,
        }
    }

    fn finish(mut self, outcome: std::result::Result<EditOutput, EditFailure>) -> Self {
        match outcome {
            Ok(out) => {
                let img = LabeledImage::new(out.pixels, self.label.clone(), None, Origin::Edited);
                self.edited_id = Some(img.id().to_owned());
                self.edited = Some(img);
                self.region = out.region;
            }
            Err(f) => {
                tracing::warn!(record = %self.id, kind = %self.kind, phrase = %self.phrase, reason = %f, "edit failed");
                self.verdict = Verdict::EditFailed;
                self.failure = Some(f.to_string());
            }
        }
        self
    }

    pub fn is_flagged(&self) -> bool {
        self.verdict == Verdict::FlaggedSpurious
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutput {
    pub pixels: Pixels,
    pub region: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditFailure {
    /// Localization found nothing matching the phrase.
    NotFound,
    InpaintError(String),
    Adapter(String),
}

impl fmt::Display for EditFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditFailure::NotFound => f.write_str("not_found"),
            EditFailure::InpaintError(m) => write!(f, "inpaint_error: {m}"),
            EditFailure::Adapter(m) => write!(f, "adapter_error: {m}"),
        }
    }
}

/// Settings forwarded to an instruction-following editor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditorParams {
    pub text_guidance: f64,
    pub image_guidance: f64,
    pub instruction_template: String,
}

impl Default for EditorParams {
    fn default() -> Self {
        Self {
            text_guidance: 7.5,
            image_guidance: 1.5,
            instruction_template: INSTRUCTION_TEMPLATE.trim_end().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub text: String,
    pub background: String,
    pub alt: String,
    pub text_guidance: f64,
    pub image_guidance: f64,
}

impl EditorParams {
    pub fn instruction(&self, background: &str, alt: &str) -> Instruction {
        Instruction {
            text: self.instruction_template.replace("{background}", background).replace("{alt}", alt),
            background: background.to_owned(),
            alt: alt.to_owned(),
            text_guidance: self.text_guidance,
            image_guidance: self.image_guidance,
        }
    }
}

/// Image editing backend. Removal is localize, segment, inpaint; adapters
/// may fuse the stages.
pub trait Editor {
    fn id(&self) -> &str;
    fn remove(&self, image: &LabeledImage, phrase: &str) -> std::result::Result<EditOutput, EditFailure>;
    fn swap(&self, image: &LabeledImage, instruction: &Instruction) -> std::result::Result<EditOutput, EditFailure>;
}

/// Remove `phrase` from `image`. The phrase must come from the image's
/// extraction and must not name the class.
pub fn remove_foreground(
    image: &LabeledImage,
    phrase: &str,
    extraction: &FeatureExtraction,
    editor: &dyn Editor,
) -> Result<EditRecord> {
    if text::names_label(phrase, &image.label) {
        return Err(Error::LabelPhrase {
            phrase: phrase.to_owned(),
            label: image.label.clone(),
        });
    }
    if !extraction.foreground.iter().any(|f| f == phrase) {
        return Err(Error::NotExtracted {
            image: image.id().to_owned(),
            phrase: phrase.to_owned(),
        });
    }
    let rec = EditRecord::new(image, EditKind::RemoveForeground, phrase, None, editor.id());
    Ok(rec.finish(editor.remove(image, phrase)))
}

/// Turn the background of `image` from `background` into `alt`.
pub fn swap_background(
    image: &LabeledImage,
    background: &str,
    alt: &str,
    editor: &dyn Editor,
    params: &EditorParams,
) -> Result<EditRecord> {
    if text::same_root(background, alt) {
        return Err(Error::SameBackground {
            background: background.to_owned(),
            alt: alt.to_owned(),
        });
    }
    let rec = EditRecord::new(image, EditKind::SwapBackground, background, Some(alt), editor.id());
    Ok(rec.finish(editor.swap(image, &params.instruction(background, alt))))
}
