//! Captioning and foreground/background extraction.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use aspire_core::hash::KeyHasher;
use aspire_core::LabeledImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

const EXTRACTION_PROMPT: &str = include_str!("../prompts/extraction.txt");
const EXEMPLARS: &str = include_str!("../prompts/exemplars.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    pub captioner_id: String,
}

/// A caption that could not be produced. Kept next to the records so one
/// bad image never sinks a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub image_id: String,
    pub captioner_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionBatch {
    pub records: Vec<CaptionRecord>,
    pub failures: Vec<CaptionFailure>,
}

impl CaptionBatch {
    pub fn get(&self, image_id: &str) -> Option<&CaptionRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }
}

pub trait Captioner {
    fn id(&self) -> &str;
    fn caption(&self, image: &LabeledImage) -> std::result::Result<String, String>;
}

/// Captions already produced, keyed by (captioner, image).
#[derive(Debug, Clone, Default)]
pub struct CaptionCache {
    entries: HashMap<(String, String), String>,
}

impl CaptionCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Caption every image, consulting `cache` first. Results come back in the
/// order of `images`; failures are listed separately.
pub fn caption(images: &[&LabeledImage], adapter: &dyn Captioner, cache: &mut CaptionCache) -> CaptionBatch {
    let mut batch = CaptionBatch::default();
    for image in images {
        let key = (adapter.id().to_owned(), image.id().to_owned());
        let result = match cache.entries.get(&key) {
            Some(c) => Ok(c.clone()),
            None => adapter.caption(image).and_then(|c| {
                let c = c.trim().to_owned();
                if c.is_empty() {
                    Err("empty caption".to_owned())
                } else {
                    Ok(c)
                }
            }),
        };
        match result {
            Ok(c) => {
                cache.entries.insert(key, c.clone());
                batch.records.push(CaptionRecord {
                    image_id: image.id().to_owned(),
                    caption: c,
                    captioner_id: adapter.id().to_owned(),
                });
            }
            Err(reason) => {
                tracing::warn!(image = image.id(), %reason, "caption failed");
                batch.failures.push(CaptionFailure {
                    image_id: image.id().to_owned(),
                    captioner_id: adapter.id().to_owned(),
                    reason,
                });
            }
        }
    }
    batch
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtraction {
    pub image_id: String,
    pub foreground: Vec<String>,
    /// Zero or one phrase.
    pub background: Vec<String>,
    /// Zero or one phrase; empty whenever `background` is.
    pub alt_background: Vec<String>,
}

impl FeatureExtraction {
    /// Normalize phrases, drop label phrases and duplicates, and enforce the
    /// at-most-one background rule.
    pub fn sanitized(image_id: &str, label: &str, fg: Vec<String>, bg: Vec<String>, alt: Vec<String>) -> Self {
        let mut foreground: Vec<String> = Vec::new();
        for p in fg.iter().map(|p| text::normalize(p)) {
            if !p.is_empty() && !text::names_label(&p, label) && !foreground.contains(&p) {
                foreground.push(p);
            }
        }
        let background: Vec<String> = bg.iter().map(|p| text::normalize(p)).filter(|p| !p.is_empty()).take(1).collect();
        let alt_background = if background.is_empty() {
            Vec::new()
        } else {
            alt.iter()
                .map(|p| text::normalize(p))
                .filter(|p| !p.is_empty() && !text::same_root(p, &background[0]))
                .take(1)
                .collect()
        };
        Self {
            image_id: image_id.to_owned(),
            foreground,
            background,
            alt_background,
        }
    }
}

pub trait Extractor {
    fn id(&self) -> &str;
    fn extract(&self, image_id: &str, caption: &str, label: &str) -> Result<FeatureExtraction>;
}

/// Words that end a noun chunk.
const BREAK_WORDS: &[&str] = &[
    "and", "or", "but", "with", "without", "of", "to", "from", "into", "onto", "for", "while", "who", "which",
    "that", "is", "are", "was", "were", "be", "been", "being", "has", "have", "there", "it", "they", "he", "she",
    "sits", "sitting", "stands", "standing", "lies", "lying", "holding", "holds", "flying", "swimming", "running",
    "walking", "playing", "riding", "pulling", "pulled", "perched", "parked", "covered", "filled", "shown", "seen",
    "next", "front", "top", "close-up", "closeup", "view", "image", "photo", "picture",
];

/// Prepositions introducing a location.
const LOCATION_PREPS: &[&str] = &[
    "in", "on", "at", "near", "by", "under", "over", "behind", "beside", "above", "below", "against", "inside",
    "outside", "across", "along", "through", "atop", "amid", "among", "beneath", "underneath",
];

/// Nouns that name a setting rather than an object.
const SCENE_NOUNS: &[&str] = &[
    "background", "backdrop", "scene", "setting", "snow", "beach", "field", "forest", "woods", "jungle", "water",
    "lake", "ocean", "sea", "river", "pond", "sky", "grass", "lawn", "meadow", "desert", "sand", "road", "street",
    "highway", "city", "town", "room", "kitchen", "bedroom", "office", "park", "garden", "yard", "mountain",
    "hill", "valley", "shore", "coast", "farm", "airport", "runway", "track", "ice", "stage", "indoors",
    "outdoors", "bamboo", "swamp", "marsh", "cave", "tundra", "savanna", "plain", "landscape", "sunset",
    "night", "wilderness", "countryside", "harbor", "dock", "arena", "court", "stadium", "studio",
];

/// Deterministic extractor for plain English captions: noun chunks become
/// foreground candidates, and the first chunk introduced by a location
/// preposition whose head is a scene noun becomes the background. It never
/// proposes an alternate background.
#[derive(Debug, Clone, Default)]
pub struct RuleExtractor;

#[derive(Debug)]
struct Chunk {
    words: Vec<String>,
    after_location: bool,
}

fn chunks(caption: &str) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    let mut loc = false;
    let mut cur_loc = false;
    let flush = |cur: &mut Vec<String>, cur_loc: bool, out: &mut Vec<Chunk>| {
        if !cur.is_empty() {
            out.push(Chunk {
                words: std::mem::take(cur),
                after_location: cur_loc,
            });
        }
    };
    // Clause punctuation ends a chunk just like a break word.
    let spaced: String = caption
        .chars()
        .map(|c| if matches!(c, ',' | ';' | ':' | '.' | '!' | '?' | '(' | ')') { ' ' } else { c })
        .collect();
    for tok in text::tokens(&spaced) {
        let t = tok.as_str();
        if LOCATION_PREPS.contains(&t) {
            flush(&mut cur, cur_loc, &mut out);
            loc = true;
        } else if BREAK_WORDS.contains(&t) {
            flush(&mut cur, cur_loc, &mut out);
            loc = false;
        } else if text::FUNCTION_WORDS.contains(&t) || text::is_numeral(t) {
            // Determiners and counts open a new chunk but keep the location.
            flush(&mut cur, cur_loc, &mut out);
        } else {
            if cur.is_empty() {
                cur_loc = loc;
            }
            cur.push(tok);
        }
    }
    flush(&mut cur, cur_loc, &mut out);
    out
}

fn is_scene_head(words: &[String]) -> bool {
    let head = words.last().map(|w| text::stem(w)).unwrap_or_default();
    SCENE_NOUNS.iter().any(|n| text::stem(n) == head)
}

impl Extractor for RuleExtractor {
    fn id(&self) -> &str {
        "rule"
    }

    fn extract(&self, image_id: &str, caption: &str, label: &str) -> Result<FeatureExtraction> {
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for c in chunks(caption) {
            let phrase = c.words.join(" ");
            if bg.is_empty() && c.after_location && is_scene_head(&c.words) {
                bg.push(phrase);
            } else if !is_scene_head(&c.words) {
                fg.push(phrase);
            }
        }
        Ok(FeatureExtraction::sanitized(image_id, label, fg, bg, Vec::new()))
    }
}

/// Text-in, text-out model used by [`StructuredExtractor`].
pub trait Completion {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str) -> std::result::Result<String, String>;
}

#[derive(Debug, Deserialize)]
struct Exemplar {
    input: (String, String),
    output: serde_json::Value,
}

/// Render the extraction prompt for one (caption, label) pair.
pub fn extraction_prompt(caption: &str, label: &str) -> String {
    let exemplars: Vec<Exemplar> = serde_json::from_str(EXEMPLARS).expect("shipped exemplars are valid");
    let shown: Vec<String> = exemplars
        .iter()
        .map(|e| {
            let input = serde_json::to_string(&[&e.input.0, &e.input.1]).expect("strings serialize");
            format!("{input} -> {}", e.output)
        })
        .collect();
    let input = serde_json::to_string(&[caption, label]).expect("strings serialize");
    EXTRACTION_PROMPT
        .trim_end()
        .replace("{exemplars}", &shown.join("\n"))
        .replace("{input}", &input)
}

/// Parse a completion into its three lists. Unknown keys are ignored; a
/// missing key or a non-string entry is malformed.
pub fn parse_completion(raw: &str) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    let malformed = |reason: &str| Error::Malformed {
        reason: reason.to_owned(),
        raw: raw.to_owned(),
    };
    // Models like to wrap JSON in prose or code fences.
    let start = raw.find('{').ok_or_else(|| malformed("no JSON object"))?;
    let end = raw.rfind('}').ok_or_else(|| malformed("no JSON object"))?;
    let value: serde_json::Value = serde_json::from_str(&raw[start..=end]).map_err(|e| malformed(&e.to_string()))?;
    let list = |key: &str| -> Result<Vec<String>> {
        let arr = value
            .get(key)
            .ok_or_else(|| malformed(&format!("missing `{key}`")))?
            .as_array()
            .ok_or_else(|| malformed(&format!("`{key}` is not a list")))?;
        arr.iter()
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| malformed(&format!("`{key}` holds a non-string"))))
            .collect()
    };
    Ok((list("foreground")?, list("background")?, list("alt")?))
}

/// Extractor that prompts a completion model with the shipped template and
/// reads back the `foreground` / `background` / `alt` JSON.
pub struct StructuredExtractor<C> {
    id: String,
    model: C,
}

impl<C: Completion> StructuredExtractor<C> {
    pub fn new(model: C) -> Self {
        Self {
            id: format!("structured:{}", model.id()),
            model,
        }
    }
}

impl<C: Completion> Extractor for StructuredExtractor<C> {
    fn id(&self) -> &str {
        &self.id
    }

    fn extract(&self, image_id: &str, caption: &str, label: &str) -> Result<FeatureExtraction> {
        if caption.trim().is_empty() {
            return Err(Error::EmptyCaption);
        }
        let raw = self.model.complete(&extraction_prompt(caption, label)).map_err(Error::Adapter)?;
        let (fg, bg, alt) = parse_completion(&raw)?;
        Ok(FeatureExtraction::sanitized(image_id, label, fg, bg, alt))
    }
}

pub trait AltSuggester {
    fn id(&self) -> &str;
    fn suggest(&self, background: &str) -> std::result::Result<String, String>;
}

/// Ask for a contrasting background, retrying once when the adapter hands
/// back the original (compared by root).
pub fn suggest_alt_background(background: &str, adapter: &dyn AltSuggester) -> Result<String> {
    let background = text::normalize(background);
    if background.is_empty() {
        return Err(Error::EmptyBackground);
    }
    let mut last = String::new();
    for _ in 0..2 {
        last = text::normalize(&adapter.suggest(&background).map_err(Error::Adapter)?);
        if !last.is_empty() && !text::same_root(&last, &background) {
            return Ok(last);
        }
    }
    Err(Error::SameAlternate {
        background,
        suggested: last,
    })
}

/// Key of one extraction in the cache.
pub fn extraction_key(caption: &str, label: &str, extractor_id: &str) -> String {
    KeyHasher::new().part(caption).part(label).part(extractor_id).finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    extraction: FeatureExtraction,
}

/// Extractions keyed by (caption hash, label, extractor id), optionally
/// backed by an append-only JSON-lines file.
#[derive(Debug, Default)]
pub struct ExtractionCache {
    entries: BTreeMap<String, FeatureExtraction>,
    file: Option<PathBuf>,
}

impl ExtractionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or start) a cache file. Unreadable lines are skipped.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let f = std::fs::File::open(path).map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            for line in BufReader::new(f).lines().map_while(std::result::Result::ok) {
                if let Ok(l) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(l.key, l.extraction);
                }
            }
        }
        Ok(Self {
            entries,
            file: Some(path.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached extraction for `caption`, relabeled to `image_id`, or a fresh one.
    pub fn extract(&mut self, extractor: &dyn Extractor, image_id: &str, caption: &str, label: &str) -> Result<FeatureExtraction> {
        let key = extraction_key(caption, label, extractor.id());
        if let Some(e) = self.entries.get(&key) {
            return Ok(FeatureExtraction {
                image_id: image_id.to_owned(),
                ..e.clone()
            });
        }
        let e = extractor.extract(image_id, caption, label)?;
        if let Some(path) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                extraction: e.clone(),
            })
            .expect("extractions serialize");
            append_line(path, &line)?;
        }
        self.entries.insert(key, e.clone());
        Ok(e)
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    writeln!(f, "{line}").map_err(io)
}
