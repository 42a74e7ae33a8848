//! Scene vocabulary and the renderer.
//!
//! Every random draw made while rendering happens in the same order whether
//! or not the patch is present, and the background color only enters as a
//! value. Removing the patch or recoloring the background therefore
//! reproduces the exact pixels of a scene rendered that way from scratch.

use std::fmt;
use std::str::FromStr;

use aspire_core::{Dims, Pixels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self, Error> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::UnknownName { kind: stringify!($name), name: s.to_owned() })
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

named_enum!(
    /// Core object; one per class. The first two are mirror images with equal ink.
    Shape {
        Spire => "spire",
        Funnel => "funnel",
        Diamond => "diamond",
        Ring => "ring",
        Cross => "cross",
        Square => "square",
    }
);

named_enum!(
    /// Foreground decal planted in a corner. The first two are transposes.
    Patch {
        StripeBand => "stripe-band",
        PillarBand => "pillar-band",
        DotCluster => "dot-cluster",
        CrossMark => "cross-mark",
        RingMark => "ring-mark",
        SlashMark => "slash-mark",
    }
);

named_enum!(
    /// Background palette. Neighbouring pairs are complementary.
    Color {
        Red => "red",
        Cyan => "cyan",
        Yellow => "yellow",
        Blue => "blue",
        Green => "green",
        Pink => "pink",
        Purple => "purple",
        Lime => "lime",
    }
);

impl Patch {
    /// Decals alternate between dark and light so that a missing decal sits
    /// halfway between the two of a pair.
    pub fn is_light(self) -> bool {
        Patch::ALL.iter().position(|&p| p == self).unwrap() % 2 == 1
    }
}

impl Color {
    /// Complementary pairs mirror each other around mid-gray, so a gray
    /// image is equally far from both colors of a pair.
    pub fn rgb(self) -> [f32; 3] {
        let base = match self {
            Color::Red | Color::Cyan => [200.0, 40.0, 40.0],
            Color::Yellow | Color::Blue => [210.0, 200.0, 50.0],
            Color::Green | Color::Pink => [50.0, 160.0, 60.0],
            Color::Purple | Color::Lime => [150.0, 60.0, 190.0],
        };
        let i = Color::ALL.iter().position(|&c| c == self).unwrap();
        if i % 2 == 0 {
            base
        } else {
            base.map(|v| 256.0 - v)
        }
    }

    pub fn complement(self) -> Color {
        let i = Color::ALL.iter().position(|&c| c == self).unwrap();
        Color::ALL[i ^ 1]
    }

    /// Caption phrase for this background, e.g. "red background".
    pub fn phrase(self) -> String {
        format!("{} background", self.name())
    }

    pub fn from_phrase(phrase: &str) -> Option<Color> {
        let word = phrase.trim().strip_suffix("background")?.trim();
        word.parse().ok()
    }
}

/// How strongly each spurious cue is rendered in a majority image. Some
/// majority images carry only one clear cue, so a classifier that leans on
/// spurious cues needs both of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueProfile {
    /// Small, low-contrast patch on a vivid background.
    FaintPatch,
    /// Full-size patch on a gray background.
    FaintBackground,
    /// Full-size patch on a vivid background.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class_shape: Shape,
    /// Decal, when present.
    pub spurious_patch: Option<Patch>,
    pub background_color: Color,
    pub cue: CueProfile,
    pub jitter_seed: u64,
}

impl SceneSpec {
    pub fn caption(&self) -> String {
        match self.spurious_patch {
            Some(p) => format!("a {} with a {} on a {}", self.class_shape, p, self.background_color.phrase()),
            None => format!("a {} on a {}", self.class_shape, self.background_color.phrase()),
        }
    }
}

/// Rendering constants.
mod style {
    /// Amplitude of the shape's checker texture, as a fraction of mid-gray.
    pub const SHAPE_CONTRAST: f32 = 0.45;
    /// Per-image color cast, uniform in ±CAST per channel.
    pub const CAST: f32 = 60.0;
    /// Per-pixel noise, uniform in ±NOISE.
    pub const NOISE: f32 = 16.0;
    /// Saturation range for vivid backgrounds.
    pub const VIVID: (f32, f32) = (0.6, 1.0);
    /// Decal gray level (dark decals; light ones mirror around mid-gray).
    pub const PATCH_STRONG: f32 = 30.0;
    pub const PATCH_FAINT: f32 = 100.0;
    pub const FAINT_PATCH_SIZE: usize = 6;
    pub const STRONG_PATCH_SIZE: usize = 12;
}

const GRAY: [f32; 3] = [128.0, 128.0, 128.0];

fn shape_mask(shape: Shape, s: usize) -> Vec<bool> {
    let mut m = vec![false; s * s];
    let c = s / 2;
    for r in 0..s {
        for col in 0..s {
            let (dr, dc) = (r as isize - c as isize, col as isize - c as isize);
            m[r * s + col] = match shape {
                Shape::Spire => dc.unsigned_abs() <= (r + 1) / 2,
                Shape::Funnel => dc.unsigned_abs() <= (s - r) / 2,
                Shape::Diamond => dr.unsigned_abs() + dc.unsigned_abs() <= c,
                Shape::Ring => {
                    let d2 = dr * dr + dc * dc;
                    let outer = (c * c) as isize;
                    let inner = (c.saturating_sub(2) * c.saturating_sub(2)) as isize;
                    d2 <= outer && d2 > inner
                }
                Shape::Cross => dr.abs() <= 1 || dc.abs() <= 1,
                Shape::Square => r >= 1 && col >= 1 && r + 1 < s && col + 1 < s,
            };
        }
    }
    m
}

/// 6×6 decal bitmap.
fn decal(patch: Patch) -> [[bool; 6]; 6] {
    let mut m = [[false; 6]; 6];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = match patch {
                Patch::StripeBand => (2..4).contains(&r),
                Patch::PillarBand => (2..4).contains(&c),
                Patch::DotCluster => r % 2 == 0 && c % 2 == 0,
                Patch::CrossMark => (2..4).contains(&r) || (2..4).contains(&c),
                Patch::RingMark => r == 0 || c == 0 || r == 5 || c == 5,
                Patch::SlashMark => r == c || r == c + 1,
            };
        }
    }
    m
}

fn scaled(v: usize, h: usize) -> usize {
    (v * h / 32).max(1)
}

/// Render a scene at `size` (height, width), RGB.
pub fn render(scene: &SceneSpec, size: (u32, u32)) -> Pixels {
    let (h, w) = (size.0 as usize, size.1 as usize);
    let unit = h.min(w);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.jitter_seed);

    let sat_draw: f32 = rng.gen();
    // A faint background is plain gray; the draw still happens so the
    // stream stays aligned across profiles.
    let sat = match scene.cue {
        CueProfile::FaintBackground => 0.0,
        _ => style::VIVID.0 + (style::VIVID.1 - style::VIVID.0) * sat_draw,
    };
    let rgb = scene.background_color.rgb();
    let bg: [f32; 3] = std::array::from_fn(|i| GRAY[i] + sat * (rgb[i] - GRAY[i]));
    let mut img: Vec<[f32; 3]> = vec![bg; h * w];

    let s = rng.gen_range(scaled(9, unit)..=scaled(12, unit));
    let lo = scaled(6, unit);
    let hi_y = (h - s).saturating_sub(scaled(2, unit)).max(lo + 1);
    let hi_x = (w - s).saturating_sub(scaled(2, unit)).max(lo + 1);
    let (sy, sx) = (rng.gen_range(lo..hi_y), rng.gen_range(lo..hi_x));
    let corner = rng.gen_range(0..4);

    if let Some(patch) = scene.spurious_patch {
        let (ps, level) = match scene.cue {
            CueProfile::FaintPatch => (scaled(style::FAINT_PATCH_SIZE, unit), style::PATCH_FAINT),
            _ => (scaled(style::STRONG_PATCH_SIZE, unit), style::PATCH_STRONG),
        };
        let level = if patch.is_light() { 256.0 - level } else { level };
        let (py, px) = [(0, 0), (0, w - ps), (h - ps, 0), (h - ps, w - ps)][corner];
        let bits = decal(patch);
        for r in 0..ps {
            for c in 0..ps {
                if bits[r * 6 / ps][c * 6 / ps] {
                    img[(py + r) * w + px + c] = [level; 3];
                }
            }
        }
    }

    // Checkered ink leaves mean brightness unchanged, so the shape is only
    // visible as texture and outline.
    let amp = style::SHAPE_CONTRAST * GRAY[0];
    let mask = shape_mask(scene.class_shape, s);
    for r in 0..s {
        for c in 0..s {
            if mask[r * s + c] && sy + r < h && sx + c < w {
                let k = if (r + c) % 2 == 0 { amp } else { -amp };
                img[(sy + r) * w + sx + c] = bg.map(|v| v + k);
            }
        }
    }

    let cast: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-style::CAST..style::CAST));
    let mut data = Vec::with_capacity(h * w * 3);
    for px in &img {
        for ch in 0..3 {
            let noise = rng.gen_range(-style::NOISE..style::NOISE);
            data.push((px[ch] + cast[ch] + noise).round().clamp(0.0, 255.0) as u8);
        }
    }
    Pixels::new(Dims::new(size.0, size.1, 3), data).expect("buffer sized from dims")
}
