//! Automated evaluation: Fréchet distance between image-feature Gaussians,
//! cosine alignment scoring with pluggable encoders, the toy-world oracle
//! alignment metric, and feature-proximity projection.
//!
//! Inception/CLIP-class networks are plugin boundaries here: features and
//! embeddings arrive as files or come from the deterministic toy extractor
//! (mean-pooled pixels plus oracle template logits).

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{Image, ToyOracle, ToyWorldConfig, Triplet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::textlang::{
    parse_triplet_caption, pool, EmbeddingTable, Projection, TextEncoder, TextEmbedding,
};

// ---------------------------------------------------------------------------
// Gaussian statistics and the Fréchet distance
// ---------------------------------------------------------------------------

/// Mean vector and covariance of an image-feature population.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>, // d×d row-major, symmetric
    pub count: usize,
}

impl GaussianStats {
    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if self.count < 2 {
            return Err(Error::Input("need count >= 2".into()));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.sigma[i * d + j] - self.sigma[j * d + i]).abs() > 1e-9 {
                    return Err(Error::Contract(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sample mean and unbiased covariance of row features.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Input(format!("need >= 2 feature rows, got {n}")));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Contract("ragged feature rows".into()));
    }
    let mu = linalg::mean_rows(features);
    let mut sigma = vec![0.0; d * d];
    for f in features {
        for i in 0..d {
            let xi = f[i] - mu[i];
            for j in i..d {
                sigma[i * d + j] += xi * (f[j] - mu[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            sigma[i * d + j] /= denom;
            sigma[j * d + i] = sigma[i * d + j];
        }
    }
    Ok(GaussianStats { mu, sigma, count: n })
}

/// ‖μa−μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2}), computed through the symmetric
/// product Σb^{1/2} Σa Σb^{1/2}. Negative eigenvalues are clamped; a warning
/// is printed when one falls below −1e-5.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::Contract(format!(
            "feature dims differ: {} vs {}",
            a.d(),
            b.d()
        )));
    }
    a.validate()?;
    b.validate()?;
    let d = a.d();
    let mean_term: f64 = a
        .mu
        .iter()
        .zip(b.mu.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    // Tr((Σa Σb)^{1/2}) via eigenvalues of the symmetric product
    // √Σy Σx √Σy; evaluating both orders and averaging keeps the result
    // exactly symmetric in floating point.
    let tr_sqrt_of = |x: &[f64], y: &[f64]| -> f64 {
        let (sqrt_y, clamp) = linalg::sym_sqrt(y, d);
        if clamp < -1e-5 {
            eprintln!("warning: covariance eigenvalue clamped from {clamp:e}");
        }
        let inner = linalg::mat_mul(&linalg::mat_mul(&sqrt_y, x, d), &sqrt_y, d);
        let mut sym = inner.clone();
        for i in 0..d {
            for j in 0..d {
                sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            }
        }
        let (vals, _) = linalg::sym_eigen(&sym, d);
        let mut tr = 0.0;
        for &v in &vals {
            if v < -1e-5 {
                eprintln!("warning: product eigenvalue clamped from {v:e}");
            }
            tr += v.max(0.0).sqrt();
        }
        tr
    };
    let tr_sqrt = 0.5 * (tr_sqrt_of(&a.sigma, &b.sigma) + tr_sqrt_of(&b.sigma, &a.sigma));
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();
    let traces = trace(&a.sigma) + trace(&b.sigma);
    Ok((mean_term + traces - 2.0 * tr_sqrt).max(0.0))
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Deterministic image → feature-vector contract.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Default toy extractor: 8×8 mean-pooled RGB concatenated with the oracle's
/// per-triplet template logits.
pub struct ToyFeatureExtractor {
    oracle: ToyOracle,
    size: usize,
}

impl ToyFeatureExtractor {
    pub fn new(config: &ToyWorldConfig, size: usize) -> Result<Self> {
        if size % 8 != 0 {
            return Err(Error::Config(format!("image size {size} not divisible by 8")));
        }
        Ok(ToyFeatureExtractor { oracle: ToyOracle::with_size(config, size)?, size })
    }
}

impl FeatureExtractor for ToyFeatureExtractor {
    fn name(&self) -> &str {
        "toy-pixels-oracle"
    }

    fn dim(&self) -> usize {
        8 * 8 * 3 + self.oracle.n_templates()
    }

    fn extract(&self, image: &Image) -> Result<Vec<f64>> {
        if image.h != self.size || image.w != self.size {
            return Err(Error::Contract(format!(
                "extractor built for {0}x{0}, image is {1}x{2}",
                self.size, image.h, image.w
            )));
        }
        let pooled = image.downsample_box(self.size / 8);
        let mut out: Vec<f64> = pooled.data.iter().map(|&v| v as f64).collect();
        out.extend(self.oracle.logits(image));
        Ok(out)
    }
}

/// Features read from an embedding-table file keyed by image path.
pub struct TableFeatureExtractor {
    pub table: EmbeddingTable,
}

impl TableFeatureExtractor {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(TableFeatureExtractor { table: EmbeddingTable::load(path)? })
    }

    pub fn get(&self, key: &str) -> Result<Vec<f64>> {
        self.table
            .rows
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Eval { item: key.to_string(), msg: "no feature row".into() })
    }
}

/// Fréchet distance over extracted features of two image sets.
pub fn fid(
    images_a: &[Image],
    images_b: &[Image],
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    let extract_all = |images: &[Image], side: &str| -> Result<Vec<Vec<f64>>> {
        images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                extractor.extract(img).map_err(|e| Error::Eval {
                    item: format!("{side}[{i}]"),
                    msg: e.to_string(),
                })
            })
            .collect()
    };
    let fa = extract_all(images_a, "a")?;
    let fb = extract_all(images_b, "b")?;
    frechet_distance(&gaussian_stats(&fa)?, &gaussian_stats(&fb)?)
}

// ---------------------------------------------------------------------------
// Alignment scoring
// ---------------------------------------------------------------------------

/// Image-side embedding contract for alignment scoring.
pub trait ImageEncoder {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Toy image encoder: normalized exp of oracle logits, a probability-like
/// vector over the triplet grid.
pub struct OracleProbImageEncoder {
    oracle: ToyOracle,
}

impl OracleProbImageEncoder {
    pub fn new(config: &ToyWorldConfig, size: usize) -> Result<Self> {
        Ok(OracleProbImageEncoder { oracle: ToyOracle::with_size(config, size)? })
    }
}

impl ImageEncoder for OracleProbImageEncoder {
    fn name(&self) -> &str {
        "toy-oracle-prob"
    }

    fn dim(&self) -> usize {
        self.oracle.n_templates()
    }

    fn encode(&self, image: &Image) -> Result<Vec<f64>> {
        let logits = self.oracle.logits(image);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter_mut().for_each(|e| *e /= sum);
        Ok(exps)
    }
}

/// Toy text encoder: one-hot over the triplet grid, paired with
/// [`OracleProbImageEncoder`] for the relative-alignment diagnostic.
pub struct TripletOneHotTextEncoder {
    config: ToyWorldConfig,
    vocab: crate::data::Vocab,
}

impl TripletOneHotTextEncoder {
    pub fn new(config: &ToyWorldConfig) -> Self {
        TripletOneHotTextEncoder { config: config.clone(), vocab: config.vocab() }
    }

    fn triplet_index(&self, t: &Triplet) -> usize {
        (t.instrument as usize * self.config.n_verbs + t.verb as usize)
            * self.config.n_targets
            + t.target as usize
    }
}

impl TextEncoder for TripletOneHotTextEncoder {
    fn name(&self) -> &str {
        "toy-one-hot"
    }

    fn dim(&self) -> usize {
        self.config.n_instruments * self.config.n_verbs * self.config.n_targets
    }

    fn embed(&self, caption: &str) -> Result<TextEmbedding> {
        let triplet = parse_prompt(caption, &self.vocab)?;
        let d = self.dim();
        let mut tokens = vec![0.0f32; d];
        tokens[self.triplet_index(&triplet)] = 1.0;
        Ok(TextEmbedding { tokens, mask: vec![true], d, source: self.name().to_string() })
    }
}

/// 100 × mean cosine between per-pair image and caption embeddings.
pub fn alignment_score(
    images: &[Image],
    captions: &[String],
    image_encoder: &dyn ImageEncoder,
    text_encoder: &dyn TextEncoder,
) -> Result<f64> {
    if images.len() != captions.len() {
        return Err(Error::Contract(format!(
            "{} images vs {} captions",
            images.len(),
            captions.len()
        )));
    }
    if image_encoder.dim() != text_encoder.dim() {
        return Err(Error::Contract(format!(
            "encoder widths differ: image {} vs text {}",
            image_encoder.dim(),
            text_encoder.dim()
        )));
    }
    if images.is_empty() {
        return Err(Error::Input("no image/caption pairs".into()));
    }
    let mut sum = 0.0;
    for (img, caption) in images.iter().zip(captions.iter()) {
        let iv = image_encoder.encode(img)?;
        let tv = pool(&text_encoder.embed(caption)?)?;
        let c = linalg::cosine(&iv, &tv)
            .ok_or_else(|| Error::Numeric("zero-norm embedding in alignment".into()))?;
        sum += c;
    }
    Ok(100.0 * sum / images.len() as f64)
}

// ---------------------------------------------------------------------------
// Oracle alignment
// ---------------------------------------------------------------------------

/// Per-component prompt agreement of generated images under the oracle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OracleAlignment {
    pub instrument_acc: f64,
    pub verb_acc: f64,
    pub target_acc: f64,
    pub triplet_acc: f64,
    pub mean_confidence: f64,
    pub n: usize,
}

/// Parse a toy-vocabulary triplet prompt.
pub fn parse_prompt(caption: &str, vocab: &crate::data::Vocab) -> Result<Triplet> {
    let parts = parse_triplet_caption(caption)
        .ok_or_else(|| Error::Input(format!("prompt is not a triplet caption: {caption:?}")))?;
    vocab
        .resolve(&parts.instrument, &parts.verb, &parts.target)
        .map_err(|e| Error::Input(format!("prompt outside toy vocabulary: {e}")))
}

/// Run the oracle on each image and score agreement with its prompt.
pub fn oracle_alignment(
    images: &[Image],
    prompts: &[String],
    config: &ToyWorldConfig,
) -> Result<OracleAlignment> {
    if images.len() != prompts.len() || images.is_empty() {
        return Err(Error::Input(format!(
            "need equal non-zero counts, got {} images / {} prompts",
            images.len(),
            prompts.len()
        )));
    }
    let vocab = config.vocab();
    let size = images[0].h;
    let oracle = ToyOracle::with_size(config, size)?;
    let mut acc = [0usize; 4];
    let mut conf_sum = 0.0;
    for (img, prompt) in images.iter().zip(prompts.iter()) {
        let want = parse_prompt(prompt, &vocab)?;
        let decode = oracle.classify(img);
        let got = decode.triplet;
        conf_sum += decode.confidence;
        if got.instrument == want.instrument {
            acc[0] += 1;
        }
        if got.verb == want.verb {
            acc[1] += 1;
        }
        if got.target == want.target {
            acc[2] += 1;
        }
        if got == want {
            acc[3] += 1;
        }
    }
    let n = images.len() as f64;
    Ok(OracleAlignment {
        instrument_acc: acc[0] as f64 / n,
        verb_acc: acc[1] as f64 / n,
        target_acc: acc[2] as f64 / n,
        triplet_acc: acc[3] as f64 / n,
        mean_confidence: conf_sum / n,
        n: images.len(),
    })
}

// ---------------------------------------------------------------------------
// Feature proximity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityPoint {
    pub label: String, // "real" or "generated"
    pub index: usize,
    pub xy: [f64; 2],
}

/// Extract features for both sets and project them together onto the top-2
/// principal components.
pub fn feature_proximity_map(
    real: &[Image],
    generated: &[Image],
    extractor: &dyn FeatureExtractor,
) -> Result<(Vec<ProximityPoint>, Projection)> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Input("both image sets must be non-empty".into()));
    }
    let mut table = EmbeddingTable::new(extractor.dim(), extractor.name());
    let mut keys = Vec::new();
    for (label, set) in [("real", real), ("generated", generated)] {
        for (i, img) in set.iter().enumerate() {
            let key = format!("{label}/{i:06}");
            table.insert(key.clone(), extractor.extract(img).map_err(|e| Error::Eval {
                item: key.clone(),
                msg: e.to_string(),
            })?)?;
            keys.push((label.to_string(), i, key));
        }
    }
    let projection = crate::textlang::project_2d(&table)?;
    let coords: BTreeMap<&str, [f64; 2]> = projection
        .points
        .iter()
        .map(|(k, xy)| (k.as_str(), *xy))
        .collect();
    let points = keys
        .iter()
        .map(|(label, index, key)| ProximityPoint {
            label: label.clone(),
            index: *index,
            xy: coords[key.as_str()],
        })
        .collect();
    Ok((points, projection))
}
