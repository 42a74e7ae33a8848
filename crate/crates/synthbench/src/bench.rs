use std::collections::{BTreeMap, HashMap, HashSet};

use aspire_core::{Dims, GroupSchema, GroupedDataset, LabeledImage, Origin, Pixels};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{render, Color, CueProfile, Patch, SceneSpec, Shape};

/// Fraction of minority training items painted with another class's color.
const MINORITY_SWAP_RATE: f64 = 0.5;

/// Share of generated images that reuse a personalization background.
const STYLE_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub n_classes: usize,
    pub per_class_train: usize,
    /// Fraction of training items per class carrying both planted features.
    pub spurious_rate: f64,
    pub image_size: (u32, u32),
    /// Test items per group (so twice this per class).
    pub test_per_group: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_classes: 2,
            per_class_train: 200,
            spurious_rate: 0.95,
            image_size: (32, 32),
            test_per_group: 25,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn majority_per_class(&self) -> usize {
        // The epsilon keeps products like 0.95 · 100 from flooring to 94.
        ((self.spurious_rate * self.per_class_train as f64) + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_classes > Shape::ALL.len() {
            return bad(format!("at most {} classes are supported", Shape::ALL.len()));
        }
        if self.per_class_train == 0 {
            return bad("per_class_train must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.spurious_rate) {
            return bad(format!("spurious rate {} is outside [0, 1]", self.spurious_rate));
        }
        let maj = self.majority_per_class();
        if self.spurious_rate > 0.0 && self.spurious_rate < 1.0 && (maj == 0 || maj == self.per_class_train) {
            return bad("per_class_train is too small for this spurious rate".into());
        }
        if self.image_size.0 < 16 || self.image_size.1 < 16 {
            return bad("images must be at least 16x16".into());
        }
        Ok(())
    }
}

/// Identity of a class inside the benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    pub shape: Shape,
    pub patch: Patch,
    pub background: Color,
}

impl ClassSpec {
    pub fn patch_phrase(&self) -> String {
        self.patch.name().to_owned()
    }

    pub fn background_phrase(&self) -> String {
        self.background.phrase()
    }
}

pub fn group_id(class: &str, majority: bool) -> String {
    format!("{class}:{}", if majority { "majority" } else { "minority" })
}

/// Generated benchmark plus everything the oracles need.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: BenchConfig,
    pub classes: Vec<ClassSpec>,
    pub train: GroupedDataset,
    pub test: GroupedDataset,
    scenes: HashMap<String, SceneSpec>,
}

/// What [`Benchmark`] writes next to the manifests, so oracles can be rebuilt
/// from disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneIndex {
    pub config: BenchConfig,
    pub classes: Vec<ClassSpec>,
    pub scenes: BTreeMap<String, SceneSpec>,
}

pub fn class_specs(n: usize) -> Vec<ClassSpec> {
    (0..n)
        .map(|c| ClassSpec {
            label: Shape::ALL[c].name().to_owned(),
            shape: Shape::ALL[c],
            patch: Patch::ALL[c],
            background: Color::ALL[c],
        })
        .collect()
}

pub fn make_benchmark(cfg: &BenchConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let classes = class_specs(cfg.n_classes);
    let labels: Vec<String> = classes.iter().map(|c| c.label.clone()).collect();
    let schema: GroupSchema = labels
        .iter()
        .map(|l| (l.clone(), vec![group_id(l, true), group_id(l, false)]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scenes = HashMap::new();

    let mut train = GroupedDataset::new("synthbench-train", labels.clone(), Some(schema.clone()))?;
    let n_major = cfg.majority_per_class();
    for (c, spec) in classes.iter().enumerate() {
        for i in 0..cfg.per_class_train {
            let scene = draw_scene(&classes, c, i < n_major, &mut rng);
            add(&mut train, &mut scenes, scene, spec, i < n_major, cfg.image_size, Origin::Train, &mut rng)?;
        }
    }
    let mut test = GroupedDataset::new("synthbench-test", labels, Some(schema))?;
    for (c, spec) in classes.iter().enumerate() {
        for i in 0..2 * cfg.test_per_group {
            let major = i < cfg.test_per_group;
            let scene = draw_scene(&classes, c, major, &mut rng);
            add(&mut test, &mut scenes, scene, spec, major, cfg.image_size, Origin::Train, &mut rng)?;
        }
    }
    Ok(Benchmark {
        config: cfg.clone(),
        classes,
        train,
        test,
        scenes,
    })
}

fn draw_scene(classes: &[ClassSpec], c: usize, majority: bool, rng: &mut ChaCha8Rng) -> SceneSpec {
    let spec = &classes[c];
    let jitter_seed = rng.gen::<u64>();
    if majority {
        let cue = match rng.gen_range(0..4) {
            0 => CueProfile::FaintPatch,
            1 => CueProfile::Balanced,
            _ => CueProfile::FaintBackground,
        };
        return SceneSpec {
            class_shape: spec.shape,
            spurious_patch: Some(spec.patch),
            background_color: spec.background,
            cue,
            jitter_seed,
        };
    }
    let background = if rng.gen_bool(MINORITY_SWAP_RATE) {
        let others: Vec<Color> = classes.iter().filter(|o| o.label != spec.label).map(|o| o.background).collect();
        *others.choose(rng).expect("at least two classes")
    } else {
        let neutral: Vec<Color> = neutral_colors(classes);
        *neutral.choose(rng).expect("palette has spare colors")
    };
    SceneSpec {
        class_shape: spec.shape,
        spurious_patch: None,
        background_color: background,
        cue: CueProfile::Balanced,
        jitter_seed,
    }
}

fn neutral_colors(classes: &[ClassSpec]) -> Vec<Color> {
    Color::ALL
        .iter()
        .copied()
        .filter(|c| classes.iter().all(|k| k.background != *c))
        .collect()
}

/// Render and insert, redrawing the jitter seed on the (astronomically rare)
/// id collision so datasets stay duplicate-free.
#[allow(clippy::too_many_arguments)]
fn add(
    ds: &mut GroupedDataset,
    scenes: &mut HashMap<String, SceneSpec>,
    mut scene: SceneSpec,
    spec: &ClassSpec,
    majority: bool,
    size: (u32, u32),
    origin: Origin,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    loop {
        let item = LabeledImage::new(render(&scene, size), spec.label.clone(), Some(group_id(&spec.label, majority)), origin);
        if scenes.contains_key(item.id()) || ds.contains(item.id()) {
            scene.jitter_seed = rng.gen();
            continue;
        }
        scenes.insert(item.id().to_owned(), scene);
        ds.push(item)?;
        return Ok(());
    }
}

impl Benchmark {
    pub fn from_index(index: SceneIndex, train: GroupedDataset, test: GroupedDataset) -> Self {
        Self {
            config: index.config,
            classes: index.classes,
            train,
            test,
            scenes: index.scenes.into_iter().collect(),
        }
    }

    pub fn scene_index(&self) -> SceneIndex {
        SceneIndex {
            config: self.config.clone(),
            classes: self.classes.clone(),
            scenes: self.scenes.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    pub fn oracle(&self) -> Oracle {
        Oracle {
            size: self.config.image_size,
            classes: self.classes.clone(),
            scenes: self.scenes.clone(),
        }
    }

    /// Planted phrases per class: the patch phrase, then the background phrase.
    pub fn ground_truth(&self) -> BTreeMap<String, Vec<String>> {
        ground_truth(&self.classes)
    }
}

pub fn ground_truth(classes: &[ClassSpec]) -> BTreeMap<String, Vec<String>> {
    classes
        .iter()
        .map(|c| (c.label.clone(), vec![c.patch_phrase(), c.background_phrase()]))
        .collect()
}

/// Exact captioning, editing and generation over a benchmark's scenes.
#[derive(Debug, Clone)]
pub struct Oracle {
    size: (u32, u32),
    classes: Vec<ClassSpec>,
    scenes: HashMap<String, SceneSpec>,
}

impl Oracle {
    pub fn new(index: &SceneIndex) -> Self {
        Self {
            size: index.config.image_size,
            classes: index.classes.clone(),
            scenes: index.scenes.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.size.0, self.size.1, 3)
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn scene(&self, id: &str) -> Result<&SceneSpec> {
        self.scenes.get(id).ok_or_else(|| Error::UnknownImage(id.to_owned()))
    }

    pub fn render(&self, scene: &SceneSpec) -> Pixels {
        render(scene, self.size)
    }

    pub fn caption(&self, id: &str) -> Result<String> {
        Ok(self.scene(id)?.caption())
    }

    /// Scene with the named foreground element removed.
    pub fn remove(&self, scene: &SceneSpec, phrase: &str) -> Result<SceneSpec> {
        let phrase = phrase.trim().to_lowercase();
        if phrase == scene.class_shape.name() {
            return Err(Error::ProtectedPhrase { phrase });
        }
        match scene.spurious_patch {
            Some(p) if p.name() == phrase => Ok(SceneSpec {
                spurious_patch: None,
                ..scene.clone()
            }),
            _ => Err(Error::NotInScene { phrase }),
        }
    }

    /// Scene with background `b` replaced by `alt`. Both are background
    /// phrases like "red background" (a bare color name is accepted too).
    pub fn swap_background(&self, scene: &SceneSpec, b: &str, alt: &str) -> Result<SceneSpec> {
        let from = parse_background(b)?;
        let to = parse_background(alt)?;
        if from != scene.background_color {
            return Err(Error::BackgroundMismatch {
                claimed: b.to_owned(),
                actual: scene.background_color.phrase(),
            });
        }
        if from == to {
            return Err(Error::SameBackground(b.to_owned()));
        }
        Ok(SceneSpec {
            background_color: to,
            ..scene.clone()
        })
    }

    pub fn edit_pixels(&self, id: &str, phrase: &str) -> Result<Pixels> {
        let s = self.remove(self.scene(id)?, phrase)?;
        Ok(self.render(&s))
    }

    pub fn swap_pixels(&self, id: &str, b: &str, alt: &str) -> Result<Pixels> {
        let s = self.swap_background(self.scene(id)?, b, alt)?;
        Ok(self.render(&s))
    }

    /// The complementary palette color, as a background phrase.
    pub fn alternate_background(&self, b: &str) -> Result<String> {
        Ok(parse_background(b)?.complement().phrase())
    }

    fn class(&self, label: &str) -> Result<&ClassSpec> {
        self.classes
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| Error::UnknownClass(label.to_owned()))
    }

    /// Scenes for `count` fresh images of `class` that avoid every excluded
    /// feature. Only planted phrases of that class may be excluded.
    ///
    /// `style` lists background colors seen in the images the generator was
    /// personalized on. About half the outputs reuse one of them (when not
    /// excluded); the rest draw from the whole allowed palette.
    pub fn generate_scenes(
        &self,
        class: &str,
        count: usize,
        excluded: &[String],
        style: &[Color],
        seed: u64,
    ) -> Result<Vec<SceneSpec>> {
        if count == 0 {
            return Err(Error::ZeroCount);
        }
        let spec = self.class(class)?;
        let mut drop_patch = false;
        let mut banned = HashSet::new();
        for phrase in excluded {
            if *phrase == spec.patch_phrase() {
                drop_patch = true;
            } else if *phrase == spec.background_phrase() {
                banned.insert(spec.background);
            } else {
                return Err(Error::NotPlanted {
                    class: class.to_owned(),
                    phrase: phrase.clone(),
                });
            }
        }
        let palette: Vec<Color> = Color::ALL.iter().copied().filter(|c| !banned.contains(c)).collect();
        let styled: Vec<Color> = style.iter().copied().filter(|c| !banned.contains(c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| SceneSpec {
                class_shape: spec.shape,
                // Without the patch excluded the generator reproduces the
                // class's usual look, decal included.
                spurious_patch: (!drop_patch).then_some(spec.patch),
                background_color: match styled.choose(&mut rng) {
                    Some(&c) if rng.gen_bool(STYLE_RATE) => c,
                    _ => *palette.choose(&mut rng).expect("palette never fully banned"),
                },
                cue: CueProfile::Balanced,
                jitter_seed: rng.gen(),
            })
            .collect())
    }

    pub fn generate(
        &self,
        class: &str,
        count: usize,
        excluded: &[String],
        style: &[Color],
        seed: u64,
    ) -> Result<Vec<LabeledImage>> {
        let scenes = self.generate_scenes(class, count, excluded, style, seed)?;
        Ok(scenes
            .iter()
            .map(|s| LabeledImage::new(self.render(s), class, None, Origin::Generated))
            .collect())
    }

    /// Excluded features present in `scene` (empty means compliant).
    pub fn violations(&self, scene: &SceneSpec, class: &str, excluded: &[String]) -> Result<Vec<String>> {
        let spec = self.class(class)?;
        let mut out = Vec::new();
        for phrase in excluded {
            let hit = (*phrase == spec.patch_phrase() && scene.spurious_patch == Some(spec.patch))
                || (*phrase == spec.background_phrase() && scene.background_color == spec.background);
            if hit {
                out.push(phrase.clone());
            }
        }
        Ok(out)
    }
}

pub fn parse_background(phrase: &str) -> Result<Color> {
    let p = phrase.trim().to_lowercase();
    Color::from_phrase(&p)
        .or_else(|| p.parse().ok())
        .ok_or(Error::UnknownBackground(phrase.to_owned()))
}
