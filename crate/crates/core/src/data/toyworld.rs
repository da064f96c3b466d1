//! TripletWorld: a deterministic synthetic renderer whose triplet encoding is
//! exactly invertible by template matching.
//!
//! The three components map to disjoint visual factors so alignment accuracy
//! is attributable per component:
//!
//! - target  → background color (golden-angle hue palette),
//! - instrument → glyph shape (square, disk, plus, ...),
//! - verb    → glyph placement on a ring around the image center.
//!
//! Geometry is expressed in fractions of the image size, so the same triplet
//! renders consistently at any resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AnnotatedFrame, Dataset, Image, Provenance, Triplet, Vocab};
use crate::error::{Error, Result};

/// Confidence temperature: confidence = exp(-mse / TAU).
const CONFIDENCE_TAU: f64 = 0.02;
/// Glyph half-extent as a fraction of the image size.
const GLYPH_HALF: f64 = 0.17;
/// Radius of the placement ring as a fraction of the image size.
const RING_RADIUS: f64 = 0.21;
const GLYPH_COLOR: [f32; 3] = [0.96, 0.96, 0.96];
/// Background texture: luminance stripes at 16 cycles per image, amplitude
/// STRIPE_AMP, oriented by target parity. At a 32px render the stripes
/// alternate per pixel; at 16px they sample to exactly zero, so the texture
/// is detail that only exists at the high resolution.
const STRIPE_AMP: f64 = 0.18;
const STRIPE_CYCLES: f64 = 16.0;

const INSTRUMENT_WORDS: [&str; 8] =
    ["grasper", "hook", "clipper", "bipolar", "scissors", "irrigator", "retractor", "probe"];
const VERB_WORDS: [&str; 8] =
    ["retract", "dissect", "clip", "cut", "coagulate", "aspirate", "grasp", "pack"];
const TARGET_WORDS: [&str; 12] = [
    "gallbladder",
    "liver",
    "cystic duct",
    "omentum",
    "peritoneum",
    "cystic artery",
    "abdominal wall",
    "cystic plate",
    "blood vessel",
    "adhesion",
    "cystic pedicle",
    "gut",
];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyWorldConfig {
    pub image_size: usize,
    pub n_instruments: usize,
    pub n_verbs: usize,
    pub n_targets: usize,
    /// Zipf exponent over the lexicographically ordered triplet list.
    pub skew: f64,
    /// Std of additive pixel noise.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig {
            image_size: 32,
            n_instruments: 4,
            n_verbs: 3,
            n_targets: 4,
            skew: 0.0,
            noise_level: 0.02,
            seed: 7,
        }
    }
}

impl ToyWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image_size {} < 16",
                self.image_size
            )));
        }
        if self.n_instruments < 2 || self.n_verbs < 2 || self.n_targets < 2 {
            return Err(Error::Config("vocabulary sizes must be >= 2".into()));
        }
        if self.n_instruments > INSTRUMENT_WORDS.len()
            || self.n_verbs > VERB_WORDS.len()
            || self.n_targets > TARGET_WORDS.len()
        {
            return Err(Error::Config(format!(
                "toy vocabulary caps: {} instruments, {} verbs, {} targets",
                INSTRUMENT_WORDS.len(),
                VERB_WORDS.len(),
                TARGET_WORDS.len()
            )));
        }
        if self.skew < 0.0 {
            return Err(Error::Config(format!("skew {} < 0", self.skew)));
        }
        if self.noise_level < 0.0 {
            return Err(Error::Config("noise_level < 0".into()));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        default_toy_vocab(self.n_instruments, self.n_verbs, self.n_targets)
    }

    /// All triplets in lexicographic (instrument, verb, target) order; this is
    /// the rank order the Zipf draw uses.
    pub fn triplet_list(&self, vocab: &Vocab) -> Vec<Triplet> {
        let mut out = Vec::with_capacity(self.n_instruments * self.n_verbs * self.n_targets);
        for i in 0..self.n_instruments {
            for v in 0..self.n_verbs {
                for t in 0..self.n_targets {
                    out.push(
                        Triplet::new(i as u16, v as u16, t as u16, vocab)
                            .expect("toy ids in range"),
                    );
                }
            }
        }
        out
    }
}

pub fn default_toy_vocab(n_instruments: usize, n_verbs: usize, n_targets: usize) -> Vocab {
    Vocab::new(
        INSTRUMENT_WORDS[..n_instruments].iter().map(|s| s.to_string()).collect(),
        VERB_WORDS[..n_verbs].iter().map(|s| s.to_string()).collect(),
        TARGET_WORDS[..n_targets].iter().map(|s| s.to_string()).collect(),
    )
    .expect("builtin vocab is valid")
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let c = v * s;
    let hp = (h % 360.0) / 60.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Background color for a target id: golden-angle hue walk keeps any prefix of
/// the palette well separated.
pub fn target_color(target_id: u16) -> [f32; 3] {
    hsv_to_rgb(target_id as f64 * 137.50776405, 0.55, 0.50)
}

/// Same hue walk, reusable as a generic class palette.
pub fn toy_class_color(class: usize) -> [f32; 3] {
    hsv_to_rgb(class as f64 * 137.50776405, 0.70, 0.65)
}

/// Glyph center for a verb id as (x, y) fractions of the image size.
pub fn verb_center(verb_id: u16, n_verbs: usize) -> (f64, f64) {
    let angle = -std::f64::consts::FRAC_PI_2
        + verb_id as f64 * std::f64::consts::TAU / n_verbs as f64;
    (0.5 + RING_RADIUS * angle.cos(), 0.5 + RING_RADIUS * angle.sin())
}

/// Glyph coverage in glyph-local coordinates u, v ∈ [-1, 1].
fn shape_mask(instrument_id: u16, u: f64, v: f64) -> bool {
    match instrument_id % 8 {
        0 => u.abs() <= 0.82 && v.abs() <= 0.82,                      // square
        1 => u * u + v * v <= 0.85 * 0.85,                            // disk
        2 => (u.abs() <= 0.30 && v.abs() <= 0.95) || (v.abs() <= 0.30 && u.abs() <= 0.95), // plus
        3 => ((u - v).abs() <= 0.38 || (u + v).abs() <= 0.38) && u.abs().max(v.abs()) <= 0.90, // x
        4 => {
            let r2 = u * u + v * v;
            (0.45 * 0.45..=0.85 * 0.85).contains(&r2)                 // ring
        }
        5 => u.abs() + v.abs() <= 0.90,                               // diamond
        6 => v.abs() <= 0.35 && u.abs() <= 0.95,                      // horizontal bar
        _ => u.abs() <= 0.35 && v.abs() <= 0.95,                      // vertical bar
    }
}

/// The pixel window a verb's glyph may touch, as inclusive-exclusive bounds.
/// Exposed so tests can assert that verb changes stay inside their windows.
pub fn glyph_window(verb_id: u16, config: &ToyWorldConfig) -> (usize, usize, usize, usize) {
    let s = config.image_size as f64;
    let (cx, cy) = verb_center(verb_id, config.n_verbs);
    let x0 = ((cx - GLYPH_HALF) * s).floor().max(0.0) as usize;
    let y0 = ((cy - GLYPH_HALF) * s).floor().max(0.0) as usize;
    let x1 = (((cx + GLYPH_HALF) * s).ceil() as usize).min(config.image_size);
    let y1 = (((cy + GLYPH_HALF) * s).ceil() as usize).min(config.image_size);
    (x0, y0, x1, y1)
}

/// Stripe texture value at a pixel center.
pub fn stripe_value(x: usize, y: usize, size: usize, target_id: u16) -> f32 {
    let coord = if target_id % 2 == 0 { x } else { y };
    let fc = (coord as f64 + 0.5) / size as f64;
    (STRIPE_AMP * (std::f64::consts::TAU * STRIPE_CYCLES * fc).sin()) as f32
}

fn render_clean(triplet: &Triplet, config: &ToyWorldConfig, size: usize) -> Image {
    let bg = target_color(triplet.target);
    let (cx, cy) = verb_center(triplet.verb, config.n_verbs);
    let s = size as f64;
    let mut img = Image::new(size, size);
    let (wx0, wy0, wx1, wy1) = {
        let x0 = ((cx - GLYPH_HALF) * s).floor().max(0.0) as usize;
        let y0 = ((cy - GLYPH_HALF) * s).floor().max(0.0) as usize;
        let x1 = (((cx + GLYPH_HALF) * s).ceil() as usize).min(size);
        let y1 = (((cy + GLYPH_HALF) * s).ceil() as usize).min(size);
        (x0, y0, x1, y1)
    };
    for y in 0..size {
        for x in 0..size {
            let stripe = stripe_value(x, y, size, triplet.target);
            img.set_px(
                y,
                x,
                [
                    (bg[0] + stripe).clamp(0.0, 1.0),
                    (bg[1] + stripe).clamp(0.0, 1.0),
                    (bg[2] + stripe).clamp(0.0, 1.0),
                ],
            );
        }
    }
    // 2x2 supersampled coverage inside the glyph window only
    for y in wy0..wy1 {
        for x in wx0..wx1 {
            let mut cover = 0.0f32;
            for sy in 0..2 {
                for sx in 0..2 {
                    let fx = (x as f64 + (sx as f64 + 0.5) / 2.0) / s;
                    let fy = (y as f64 + (sy as f64 + 0.5) / 2.0) / s;
                    let u = (fx - cx) / GLYPH_HALF;
                    let v = (fy - cy) / GLYPH_HALF;
                    if u.abs() <= 1.0 && v.abs() <= 1.0 && shape_mask(triplet.instrument, u, v) {
                        cover += 0.25;
                    }
                }
            }
            if cover > 0.0 {
                let mut rgb = img.px(y, x);
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - cover) + GLYPH_COLOR[c] * cover;
                }
                img.set_px(y, x, rgb);
            }
        }
    }
    img
}

/// Deterministic render of one triplet: clean geometry plus seeded pixel
/// noise, snapped to the 8-bit grid so PNG round trips are exact.
pub fn render_toy(triplet: &Triplet, seed: u64, config: &ToyWorldConfig) -> Result<Image> {
    config.validate()?;
    if (triplet.instrument as usize) >= config.n_instruments
        || (triplet.verb as usize) >= config.n_verbs
        || (triplet.target as usize) >= config.n_targets
    {
        return Err(Error::Lookup(format!("triplet {triplet:?} outside toy vocabulary")));
    }
    let mut img = render_clean(triplet, config, config.image_size);
    apply_noise(&mut img, seed, config.noise_level);
    img.quantize_u8();
    Ok(img)
}

/// Paired render for super-resolution training: the high-res render plus its
/// box-downsampled low-res counterpart.
pub fn render_toy_pair(
    triplet: &Triplet,
    seed: u64,
    config: &ToyWorldConfig,
    scale: usize,
) -> Result<(Image, Image)> {
    let high = render_toy(triplet, seed, config)?;
    if config.image_size % scale != 0 {
        return Err(Error::Config(format!(
            "image_size {} not divisible by scale {scale}",
            config.image_size
        )));
    }
    let mut low = high.downsample_box(scale);
    low.quantize_u8();
    Ok((low, high))
}

fn apply_noise(img: &mut Image, seed: u64, noise_level: f64) {
    if noise_level <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, noise_level).expect("valid std");
    for v in img.data.iter_mut() {
        *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
    }
}

/// Decoded triplet plus a `[0,1]` confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDecode {
    pub triplet: Triplet,
    pub confidence: f64,
}

/// Template-matching decoder with cached clean renders. Use this when
/// classifying many images; [`oracle_classify`] wraps it for one-off calls.
pub struct ToyOracle {
    config: ToyWorldConfig,
    vocab: Vocab,
    templates: Vec<(Triplet, Image)>,
    size: usize,
}

impl ToyOracle {
    pub fn new(config: &ToyWorldConfig) -> Result<Self> {
        Self::with_size(config, config.image_size)
    }

    /// Oracle operating at a different resolution than the config's renderer
    /// (e.g. classifying base-stage outputs at the low resolution).
    pub fn with_size(config: &ToyWorldConfig, size: usize) -> Result<Self> {
        config.validate()?;
        let vocab = config.vocab();
        let templates = config
            .triplet_list(&vocab)
            .into_iter()
            .map(|t| {
                let img = render_clean(&t, config, size);
                (t, img)
            })
            .collect();
        Ok(ToyOracle { config: config.clone(), vocab, templates, size })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_templates(&self) -> usize {
        self.templates.len()
    }

    /// Nearest-template decode: background from the border ring, placement
    /// from window energy, glyph shape from window templates. Confidence is
    /// exp(-mse / tau) against the clean render of the decoded triplet.
    pub fn classify(&self, image: &Image) -> OracleDecode {
        assert_eq!(image.h, self.size, "oracle size mismatch");
        let cfg = &self.config;

        // 1. target: nearest palette color to the border mean
        let mut border = [0.0f64; 3];
        let mut count = 0.0;
        for y in 0..self.size {
            for x in 0..self.size {
                if y == 0 || x == 0 || y == self.size - 1 || x == self.size - 1 {
                    let p = image.px(y, x);
                    for c in 0..3 {
                        border[c] += p[c] as f64;
                    }
                    count += 1.0;
                }
            }
        }
        for c in border.iter_mut() {
            *c /= count;
        }
        let target = (0..cfg.n_targets as u16)
            .min_by(|&a, &b| {
                let da = color_dist2(&border, target_color(a));
                let db = color_dist2(&border, target_color(b));
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();

        // 2. verb: window with the most energy away from the background
        let bg = target_color(target);
        let sfrac = self.size as f64 / cfg.image_size as f64;
        let verb = (0..cfg.n_verbs as u16)
            .max_by(|&a, &b| {
                let ea = self.window_energy(image, a, &bg, sfrac);
                let eb = self.window_energy(image, b, &bg, sfrac);
                ea.partial_cmp(&eb).unwrap()
            })
            .unwrap();

        // 3. instrument: nearest shape template inside the winning window
        let instrument = (0..cfg.n_instruments as u16)
            .min_by(|&a, &b| {
                let ma = self.window_mse(image, a, verb, target);
                let mb = self.window_mse(image, b, verb, target);
                ma.partial_cmp(&mb).unwrap()
            })
            .unwrap();

        let triplet = Triplet::new(instrument, verb, target, &self.vocab).expect("ids in range");
        let full = &self
            .templates
            .iter()
            .find(|(t, _)| *t == triplet)
            .expect("template exists")
            .1;
        let confidence = (-image.mse(full) / CONFIDENCE_TAU).exp();
        OracleDecode { triplet, confidence }
    }

    /// Negative scaled template distances for every triplet, in the
    /// lexicographic triplet order. Feature-extractor fodder.
    pub fn logits(&self, image: &Image) -> Vec<f64> {
        self.templates
            .iter()
            .map(|(_, tpl)| -image.mse(tpl) / CONFIDENCE_TAU)
            .collect()
    }

    fn scaled_window(&self, verb: u16, sfrac: f64) -> (usize, usize, usize, usize) {
        let (x0, y0, x1, y1) = glyph_window(verb, &self.config);
        (
            (x0 as f64 * sfrac) as usize,
            (y0 as f64 * sfrac) as usize,
            ((x1 as f64 * sfrac) as usize).min(self.size),
            ((y1 as f64 * sfrac) as usize).min(self.size),
        )
    }

    fn window_energy(&self, image: &Image, verb: u16, bg: &[f32; 3], sfrac: f64) -> f64 {
        let (x0, y0, x1, y1) = self.scaled_window(verb, sfrac);
        let mut e = 0.0f64;
        let mut n = 0.0f64;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = image.px(y, x);
                for c in 0..3 {
                    let d = (p[c] - bg[c]) as f64;
                    e += d * d;
                }
                n += 1.0;
            }
        }
        if n > 0.0 {
            e / n
        } else {
            0.0
        }
    }

    fn window_mse(&self, image: &Image, instrument: u16, verb: u16, target: u16) -> f64 {
        let triplet = Triplet::new(instrument, verb, target, &self.vocab).expect("ids in range");
        let tpl = &self
            .templates
            .iter()
            .find(|(t, _)| *t == triplet)
            .expect("template exists")
            .1;
        let sfrac = self.size as f64 / self.config.image_size as f64;
        let (x0, y0, x1, y1) = self.scaled_window(verb, sfrac);
        let mut e = 0.0f64;
        let mut n = 0.0f64;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = image.px(y, x);
                let q = tpl.px(y, x);
                for c in 0..3 {
                    let d = (p[c] - q[c]) as f64;
                    e += d * d;
                }
                n += 1.0;
            }
        }
        e / n.max(1.0)
    }
}

/// One-off nearest-template decode; always returns a best match.
pub fn oracle_classify(image: &Image, config: &ToyWorldConfig) -> Result<OracleDecode> {
    let oracle = ToyOracle::with_size(config, image.h)?;
    Ok(oracle.classify(image))
}

fn color_dist2(a: &[f64; 3], b: [f32; 3]) -> f64 {
    let mut s = 0.0;
    for c in 0..3 {
        let d = a[c] - b[c] as f64;
        s += d * d;
    }
    s
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-frame render seed derived from the dataset seed.
pub fn frame_seed(dataset_seed: u64, frame_index: usize) -> u64 {
    splitmix64(dataset_seed ^ (frame_index as u64).wrapping_mul(0x9e3779b97f4a7c15))
}

/// Zipf probabilities over `k` ranks with exponent `skew` (uniform at 0).
pub fn zipf_probs(k: usize, skew: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-skew)).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

/// Synthesize `n_frames` single-triplet frames, categories Zipf-distributed
/// over the lexicographic triplet list. Byte-identical for equal configs.
pub fn make_toy_dataset(config: &ToyWorldConfig, n_frames: usize) -> Result<Dataset> {
    config.validate()?;
    let vocab = config.vocab();
    let triplets = config.triplet_list(&vocab);
    let probs = zipf_probs(triplets.len(), config.skew);
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cum.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames = Vec::with_capacity(n_frames);
    for idx in 0..n_frames {
        let u: f64 = rand::Rng::random(&mut rng);
        let rank = cum.partition_point(|&c| c < u).min(triplets.len() - 1);
        let triplet = triplets[rank];
        let image = render_toy(&triplet, frame_seed(config.seed, idx), config)?;
        frames.push(AnnotatedFrame::new(
            image,
            vec![triplet],
            format!("toy_{idx:06}"),
            "toy".to_string(),
        )?);
    }
    Dataset::new(frames, vocab, Provenance::Synthetic)
}
