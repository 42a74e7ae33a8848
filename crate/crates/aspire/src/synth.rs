//! Adapters backed by the synthetic benchmark's exact oracles. Every adapter
//! call bumps a shared counter so tests can check what the cache saved.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use aspire_core::{LabeledImage, Pixels};
use synthbench::{parse_background, Color, Oracle, SceneSpec};

use crate::describe::{AltSuggester, Captioner, Completion};
use crate::edit::{EditFailure, EditKind, EditOutput, EditRecord, Editor, Instruction};
use crate::generate::{handle_hash, GeneratorHandle, PersonalizationJob, Personalizer};

pub const ADAPTER_ID: &str = "synthbench";

#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }
}

/// Shared oracle plus one counter per adapter role.
#[derive(Debug, Clone)]
pub struct SynthAdapters {
    oracle: Arc<Oracle>,
    pub captions: CallCounter,
    pub completions: CallCounter,
    pub alternates: CallCounter,
    pub edits: CallCounter,
    pub personalizations: CallCounter,
    pub generations: CallCounter,
}

impl SynthAdapters {
    pub fn new(oracle: Oracle) -> Self {
        Self {
            oracle: Arc::new(oracle),
            captions: CallCounter::default(),
            completions: CallCounter::default(),
            alternates: CallCounter::default(),
            edits: CallCounter::default(),
            personalizations: CallCounter::default(),
            generations: CallCounter::default(),
        }
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn total_calls(&self) -> usize {
        [
            &self.captions,
            &self.completions,
            &self.alternates,
            &self.edits,
            &self.personalizations,
            &self.generations,
        ]
        .iter()
        .map(|c| c.get())
        .sum()
    }

    pub fn captioner(&self) -> SynthCaptioner {
        SynthCaptioner(self.clone())
    }

    pub fn completion(&self) -> SynthCompletion {
        SynthCompletion(self.clone())
    }

    pub fn alt_suggester(&self) -> SynthAlternates {
        SynthAlternates(self.clone())
    }

    pub fn editor(&self) -> SynthEditor {
        SynthEditor(self.clone())
    }

    pub fn personalizer(&self) -> SynthPersonalizer {
        SynthPersonalizer(self.clone())
    }
}

pub struct SynthCaptioner(SynthAdapters);

impl Captioner for SynthCaptioner {
    fn id(&self) -> &str {
        ADAPTER_ID
    }

    fn caption(&self, image: &LabeledImage) -> Result<String, String> {
        self.0.captions.bump();
        self.0.oracle.caption(image.id()).map_err(|e| e.to_string())
    }
}

/// Stand-in for a language model answering the extraction prompt. It reads
/// the (caption, label) pair off the prompt's last line and parses the
/// benchmark's caption template exactly.
pub struct SynthCompletion(SynthAdapters);

/// Split "a <shape>[ with a <patch>] on a <color> background" into
/// (shape, patch, background).
pub fn parse_template_caption(caption: &str) -> Option<(String, Option<String>, String)> {
    let rest = caption.trim().strip_prefix("a ")?;
    let (objects, background) = rest.split_once(" on a ")?;
    let (shape, patch) = match objects.split_once(" with a ") {
        Some((s, p)) => (s, Some(p.to_owned())),
        None => (objects, None),
    };
    Some((shape.to_owned(), patch, background.to_owned()))
}

impl Completion for SynthCompletion {
    fn id(&self) -> &str {
        ADAPTER_ID
    }

    fn complete(&self, prompt: &str) -> Result<String, String> {
        self.0.completions.bump();
        let last = prompt.lines().last().unwrap_or_default();
        let (caption, label): (String, String) = serde_json::from_str(last).map_err(|e| format!("bad prompt input: {e}"))?;
        let Some((shape, patch, background)) = parse_template_caption(&caption) else {
            return Ok(r#"{"foreground": [], "background": [], "alt": []}"#.to_owned());
        };
        let foreground: Vec<String> = [Some(shape), patch].into_iter().flatten().filter(|p| *p != label).collect();
        let alt = self.0.oracle.alternate_background(&background).map_err(|e| e.to_string())?;
        Ok(serde_json::json!({ "foreground": foreground, "background": [background], "alt": [alt] }).to_string())
    }
}

/// Suggests the complementary palette color.
pub struct SynthAlternates(SynthAdapters);

impl AltSuggester for SynthAlternates {
    fn id(&self) -> &str {
        ADAPTER_ID
    }

    fn suggest(&self, background: &str) -> Result<String, String> {
        self.0.alternates.bump();
        self.0.oracle.alternate_background(background).map_err(|e| e.to_string())
    }
}

pub struct SynthEditor(SynthAdapters);

impl SynthEditor {
    fn scene(&self, image: &LabeledImage) -> Result<&SceneSpec, EditFailure> {
        self.0.oracle.scene(image.id()).map_err(|e| EditFailure::Adapter(e.to_string()))
    }
}

impl Editor for SynthEditor {
    fn id(&self) -> &str {
        ADAPTER_ID
    }

    fn remove(&self, image: &LabeledImage, phrase: &str) -> Result<EditOutput, EditFailure> {
        self.0.edits.bump();
        let scene = self.scene(image)?;
        let edited = self.0.oracle.remove(scene, phrase).map_err(|e| match e {
            synthbench::Error::NotInScene { .. } => EditFailure::NotFound,
            other => EditFailure::InpaintError(other.to_string()),
        })?;
        Ok(EditOutput {
            pixels: self.0.oracle.render(&edited),
            region: None,
        })
    }

    fn swap(&self, image: &LabeledImage, instruction: &Instruction) -> Result<EditOutput, EditFailure> {
        self.0.edits.bump();
        let scene = self.scene(image)?;
        let edited = self
            .0
            .oracle
            .swap_background(scene, &instruction.background, &instruction.alt)
            .map_err(|e| EditFailure::Adapter(e.to_string()))?;
        Ok(EditOutput {
            pixels: self.0.oracle.render(&edited),
            region: None,
        })
    }
}

pub struct SynthPersonalizer(SynthAdapters);

/// The oracle generator, set up to avoid every planted feature of the class
/// that the job's phrases name, and styled after the backgrounds of the
/// training images.
pub struct SynthHandle {
    adapters: SynthAdapters,
    class: String,
    hash: String,
    pub excluded: Vec<String>,
    pub style: Vec<Color>,
}

impl SynthPersonalizer {
    pub fn build(&self, job: &PersonalizationJob, images: &[&EditRecord]) -> Result<SynthHandle, String> {
        let oracle = &self.0.oracle;
        let spec = oracle
            .classes()
            .iter()
            .find(|c| c.label == job.class)
            .ok_or_else(|| format!("unknown class `{}`", job.class))?;
        let excluded: Vec<String> = [spec.patch_phrase(), spec.background_phrase()]
            .into_iter()
            .filter(|p| job.phrases.contains(p))
            .collect();
        let mut style = Vec::new();
        for r in images {
            let source = oracle.scene(&r.source_id).map_err(|e| e.to_string())?;
            let color = match (r.kind, &r.alt_phrase) {
                (EditKind::SwapBackground, Some(alt)) => parse_background(alt).map_err(|e| e.to_string())?,
                _ => source.background_color,
            };
            style.push(color);
        }
        Ok(SynthHandle {
            adapters: self.0.clone(),
            class: job.class.clone(),
            hash: handle_hash(job, images),
            excluded,
            style,
        })
    }
}

impl Personalizer for SynthPersonalizer {
    fn id(&self) -> &str {
        ADAPTER_ID
    }

    fn personalize(&self, job: &PersonalizationJob, images: &[&EditRecord]) -> Result<Box<dyn GeneratorHandle>, String> {
        self.0.personalizations.bump();
        Ok(Box::new(self.build(job, images)?))
    }
}

impl SynthHandle {
    pub fn scenes(&self, count: usize, seed: u64) -> Result<Vec<SceneSpec>, String> {
        self.adapters
            .oracle
            .generate_scenes(&self.class, count, &self.excluded, &self.style, seed)
            .map_err(|e| e.to_string())
    }
}

impl GeneratorHandle for SynthHandle {
    fn class(&self) -> &str {
        &self.class
    }

    fn hash(&self) -> &str {
        &self.hash
    }

    fn generate(&self, _prompt: &str, count: usize, seed: u64) -> Result<Vec<Pixels>, String> {
        self.adapters.generations.bump();
        Ok(self.scenes(count, seed)?.iter().map(|s| self.adapters.oracle.render(s)).collect())
    }
}
