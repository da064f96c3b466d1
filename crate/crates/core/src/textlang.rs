//! Caption tokenization, text encoders, and embedding-space analyses.
//!
//! Encoders are pluggable: two builtins (a seeded hash featurizer and a view
//! over the generator's learned token table) plus a file-backed table for
//! externally computed embeddings. Analyses — alignment distributions, PCA
//! projection, and subword cluster attribution — run over pooled vectors and
//! do not care which encoder produced them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{frame_caption, triplet_caption, Dataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::Tensor;

pub const DEFAULT_L_MAX: usize = 8;
pub const DEFAULT_DIM: usize = 64;
pub const UNK_ID: u32 = 0;

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Word-level vocabulary over the dataset's caption words. Id 0 is reserved
/// for out-of-vocabulary words; known words start at 1 in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocab {
    words: Vec<String>,
}

impl TokenVocab {
    pub fn from_words(mut words: Vec<String>) -> Self {
        words.sort();
        words.dedup();
        TokenVocab { words }
    }

    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        let mut words = Vec::new();
        for frame in &dataset.frames {
            let caption = frame_caption(frame, &dataset.vocab)?;
            for w in caption_words(&caption) {
                words.push(w);
            }
        }
        Ok(Self::from_words(words))
    }

    pub fn token_id(&self, word: &str) -> u32 {
        match self.words.binary_search_by(|w| w.as_str().cmp(word)) {
            Ok(i) => i as u32 + 1,
            Err(_) => UNK_ID,
        }
    }

    /// Table rows needed to embed every id, including UNK.
    pub fn size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Lowercase, whitespace-split, punctuation trimmed at word edges.
pub fn caption_words(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Caption and tokenization for a frame in one call.
pub fn frame_tokens(
    frame: &crate::data::AnnotatedFrame,
    vocab: &crate::data::Vocab,
    token_vocab: &TokenVocab,
    l_max: usize,
) -> Result<(String, Vec<u32>, Vec<bool>)> {
    let caption = frame_caption(frame, vocab)?;
    let (ids, mask) = tokenize(&caption, token_vocab, l_max)?;
    Ok((caption, ids, mask))
}

/// Token ids padded/truncated to `l_max` with a validity mask.
pub fn tokenize(caption: &str, vocab: &TokenVocab, l_max: usize) -> Result<(Vec<u32>, Vec<bool>)> {
    let words = caption_words(caption);
    if words.is_empty() {
        return Err(Error::Input(format!("empty caption {caption:?}")));
    }
    let mut ids = vec![UNK_ID; l_max];
    let mut mask = vec![false; l_max];
    for (i, w) in words.iter().take(l_max).enumerate() {
        ids[i] = vocab.token_id(w);
        mask[i] = true;
    }
    if words.len() > l_max {
        eprintln!(
            "warning: caption truncated from {} to {l_max} tokens: {caption:?}",
            words.len()
        );
    }
    Ok((ids, mask))
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// L×d token embedding matrix with a validity mask. Masked rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub tokens: Vec<f32>, // [l, d]
    pub mask: Vec<bool>,
    pub d: usize,
    pub source: String,
}

impl TextEmbedding {
    pub fn l(&self) -> usize {
        self.mask.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.l() * self.d {
            return Err(Error::Contract("embedding shape mismatch".into()));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::Input("embedding has no valid token".into()));
        }
        for (i, &m) in self.mask.iter().enumerate() {
            if !m && self.tokens[i * self.d..(i + 1) * self.d].iter().any(|&v| v != 0.0) {
                return Err(Error::Contract(format!("masked row {i} is not zero")));
            }
        }
        Ok(())
    }
}

/// Mean over masked-valid token rows.
pub fn pool(embedding: &TextEmbedding) -> Result<Vec<f64>> {
    let valid: Vec<usize> =
        (0..embedding.l()).filter(|&i| embedding.mask[i]).collect();
    if valid.is_empty() {
        return Err(Error::Input("cannot pool an all-masked embedding".into()));
    }
    let mut out = vec![0.0f64; embedding.d];
    for &i in &valid {
        for (o, &v) in out.iter_mut().zip(embedding.tokens[i * embedding.d..].iter()) {
            *o += v as f64;
        }
    }
    let n = valid.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

pub trait TextEncoder {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, caption: &str) -> Result<TextEmbedding>;
}

/// Training-free featurizer: each token id maps to a fixed pseudo-random
/// vector derived from (seed, id). Used by the analysis tests.
pub struct HashEncoder {
    pub seed: u64,
    pub d: usize,
    pub l_max: usize,
    vocab: TokenVocab,
}

impl HashEncoder {
    pub fn new(vocab: TokenVocab, d: usize, l_max: usize, seed: u64) -> Self {
        HashEncoder { seed, d, l_max, vocab }
    }

    fn row(&self, id: u32) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (id as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let t = Tensor::<f32>::randn(&[self.d], (1.0 / self.d as f64).sqrt(), &mut rng);
        t.data
    }
}

impl TextEncoder for HashEncoder {
    fn name(&self) -> &str {
        "builtin-hash"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn embed(&self, caption: &str) -> Result<TextEmbedding> {
        let (ids, mask) = tokenize(caption, &self.vocab, self.l_max)?;
        let mut tokens = vec![0.0f32; self.l_max * self.d];
        for (i, (&id, &m)) in ids.iter().zip(mask.iter()).enumerate() {
            if m {
                tokens[i * self.d..(i + 1) * self.d].copy_from_slice(&self.row(id));
            }
        }
        Ok(TextEmbedding { tokens, mask, d: self.d, source: self.name().to_string() })
    }
}

/// Snapshot view over a learned token table (the generator's text encoder).
pub struct LearnedEncoder {
    pub d: usize,
    pub l_max: usize,
    vocab: TokenVocab,
    table: Vec<f32>, // [vocab.size(), d]
}

impl LearnedEncoder {
    pub fn new(vocab: TokenVocab, table: Vec<f32>, d: usize, l_max: usize) -> Result<Self> {
        if table.len() != vocab.size() * d {
            return Err(Error::Contract(format!(
                "token table is {}x{d}, vocabulary needs {} rows",
                table.len() / d.max(1),
                vocab.size()
            )));
        }
        Ok(LearnedEncoder { d, l_max, vocab, table })
    }
}

impl TextEncoder for LearnedEncoder {
    fn name(&self) -> &str {
        "builtin-learned"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn embed(&self, caption: &str) -> Result<TextEmbedding> {
        let (ids, mask) = tokenize(caption, &self.vocab, self.l_max)?;
        let mut tokens = vec![0.0f32; self.l_max * self.d];
        for (i, (&id, &m)) in ids.iter().zip(mask.iter()).enumerate() {
            if m {
                let row = &self.table[id as usize * self.d..(id as usize + 1) * self.d];
                tokens[i * self.d..(i + 1) * self.d].copy_from_slice(row);
            }
        }
        Ok(TextEmbedding { tokens, mask, d: self.d, source: self.name().to_string() })
    }
}

/// Adapter over an [`EmbeddingTable`]: the stored pooled vector lands in row 0
/// with mask `[1, 0, ...]`.
pub struct TableEncoder<'a> {
    pub table: &'a EmbeddingTable,
    pub l_max: usize,
}

impl TextEncoder for TableEncoder<'_> {
    fn name(&self) -> &str {
        "external-table"
    }

    fn dim(&self) -> usize {
        self.table.d
    }

    fn embed(&self, caption: &str) -> Result<TextEmbedding> {
        let row = self
            .table
            .rows
            .get(caption)
            .ok_or_else(|| Error::Lookup(format!("caption not in embedding table: {caption:?}")))?;
        let d = self.table.d;
        let mut tokens = vec![0.0f32; self.l_max * d];
        for (t, &v) in tokens[..d].iter_mut().zip(row.iter()) {
            *t = v as f32;
        }
        let mut mask = vec![false; self.l_max];
        mask[0] = true;
        Ok(TextEmbedding { tokens, mask, d, source: self.name().to_string() })
    }
}

// ---------------------------------------------------------------------------
// Embedding table file
// ---------------------------------------------------------------------------

/// Caption → pooled vector carrier for externally computed embeddings.
///
/// File format: a header line `d=<d>\tencoder=<name>`, then one record per
/// line: caption, tab, whitespace-separated decimal floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: BTreeMap<String, Vec<f64>>,
    pub d: usize,
    pub encoder_name: String,
}

impl EmbeddingTable {
    pub fn new(d: usize, encoder_name: impl Into<String>) -> Self {
        EmbeddingTable { rows: BTreeMap::new(), d, encoder_name: encoder_name.into() }
    }

    pub fn insert(&mut self, caption: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.d {
            return Err(Error::Contract(format!(
                "vector of dim {} in table of dim {}",
                vector.len(),
                self.d
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite embedding value".into()));
        }
        self.rows.insert(caption.into(), vector);
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format { path: path.into(), msg: "empty file".into() })?;
        let mut d = None;
        let mut name = String::new();
        for field in header.split('\t') {
            if let Some(v) = field.strip_prefix("d=") {
                d = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("encoder=") {
                name = v.to_string();
            }
        }
        let d = d.ok_or_else(|| Error::Format {
            path: path.into(),
            msg: "line 1: header must be d=<d>\\tencoder=<name>".into(),
        })?;
        let mut table = EmbeddingTable::new(d, name);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (caption, rest) = line.split_once('\t').ok_or_else(|| Error::Format {
                path: path.into(),
                msg: format!("line {}: missing tab separator", idx + 1),
            })?;
            let vector: Vec<f64> = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Format {
                        path: path.into(),
                        msg: format!("line {}: bad float {t:?}", idx + 1),
                    })
                })
                .collect::<Result<_>>()?;
            if vector.len() != d {
                return Err(Error::Format {
                    path: path.into(),
                    msg: format!("line {}: expected {d} floats, got {}", idx + 1, vector.len()),
                });
            }
            table.insert(caption.to_string(), vector)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("d={}\tencoder={}\n", self.d, self.encoder_name);
        for (caption, vector) in &self.rows {
            out.push_str(caption);
            out.push('\t');
            let mut first = true;
            for v in vector {
                if !first {
                    out.push(' ');
                }
                out.push_str(&format!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Pool every unique triplet caption of a dataset through an encoder.
    pub fn from_encoder(
        dataset: &Dataset,
        encoder: &dyn TextEncoder,
    ) -> Result<Self> {
        let mut table = EmbeddingTable::new(encoder.dim(), encoder.name());
        for frame in &dataset.frames {
            for t in &frame.triplets {
                let caption = triplet_caption(t, &dataset.vocab)?;
                if !table.rows.contains_key(&caption) {
                    let pooled = pool(&encoder.embed(&caption)?)?;
                    table.insert(caption, pooled)?;
                }
            }
        }
        Ok(table)
    }
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// A short triplet caption with N longer paraphrases of the same activity.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentProbe {
    pub short_caption: String,
    pub long_captions: Vec<String>,
    pub per_pair_cosines: Vec<f64>,
}

impl AlignmentProbe {
    pub fn new(short_caption: impl Into<String>, long_captions: Vec<String>) -> Self {
        AlignmentProbe {
            short_caption: short_caption.into(),
            long_captions,
            per_pair_cosines: Vec::new(),
        }
    }
}

/// Cosine between the pooled short caption and each pooled long caption.
/// Returns (mean, population std) and fills `probe.per_pair_cosines`.
pub fn compute_alignment(
    probe: &mut AlignmentProbe,
    encoder: &dyn TextEncoder,
) -> Result<(f64, f64)> {
    if probe.long_captions.is_empty() {
        return Err(Error::Input("alignment probe needs at least one long caption".into()));
    }
    let short = pool(&encoder.embed(&probe.short_caption)?)?;
    let mut cosines = Vec::with_capacity(probe.long_captions.len());
    for long in &probe.long_captions {
        let lv = pool(&encoder.embed(long)?)?;
        let c = linalg::cosine(&short, &lv)
            .ok_or_else(|| Error::Numeric("zero-norm pooled embedding".into()))?;
        cosines.push(c);
    }
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    let var = cosines.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
        / cosines.len() as f64;
    probe.per_pair_cosines = cosines;
    Ok((mean, var.sqrt()))
}

/// Parse the shipped probe fixture format: first non-comment line is the
/// short caption, remaining lines are the long captions.
pub fn load_probe(path: &Path) -> Result<AlignmentProbe> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let short = lines
        .next()
        .ok_or_else(|| Error::Format { path: path.into(), msg: "empty probe file".into() })?;
    let long: Vec<String> = lines.map(|s| s.to_string()).collect();
    if long.is_empty() {
        return Err(Error::Format { path: path.into(), msg: "probe has no long captions".into() });
    }
    Ok(AlignmentProbe::new(short, long))
}

// ---------------------------------------------------------------------------
// PCA projection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// caption → (x, y), in the table's lexicographic caption order.
    pub points: Vec<(String, [f64; 2])>,
    /// Fewer than two informative directions; the second axis is zeroed.
    pub degenerate: bool,
    pub explained: [f64; 2],
}

/// PCA onto the top-2 principal components of the mean-centered rows.
/// Deterministic: each axis is signed so its largest-magnitude loading is
/// positive.
pub fn project_2d(table: &EmbeddingTable) -> Result<Projection> {
    let n = table.rows.len();
    if n < 3 {
        return Err(Error::Input(format!("projection needs >= 3 rows, got {n}")));
    }
    let d = table.d;
    let rows: Vec<&Vec<f64>> = table.rows.values().collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, &x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; d * d];
    for r in &rows {
        for i in 0..d {
            let xi = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += xi * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n as f64;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (vals, vecs) = linalg::sym_eigen(&cov, d);
    let mut axes = [vec![0.0; d], vec![0.0; d]];
    axes[0].copy_from_slice(&vecs[0..d]);
    let degenerate = vals.len() < 2 || vals[1] <= 1e-12 * vals[0].max(1e-300);
    if !degenerate {
        axes[1].copy_from_slice(&vecs[d..2 * d]);
    }
    for axis in axes.iter_mut() {
        let (mut best, mut best_abs) = (0.0, 0.0);
        for &v in axis.iter() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = v;
            }
        }
        if best < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let points = table
        .rows
        .iter()
        .map(|(caption, r)| {
            let centered: Vec<f64> = r.iter().zip(mean.iter()).map(|(x, m)| x - m).collect();
            (
                caption.clone(),
                [linalg::dot(&centered, &axes[0]), linalg::dot(&centered, &axes[1])],
            )
        })
        .collect();
    Ok(Projection {
        points,
        degenerate,
        explained: [vals[0].max(0.0), if degenerate { 0.0 } else { vals[1].max(0.0) }],
    })
}

// ---------------------------------------------------------------------------
// Cluster attribution
// ---------------------------------------------------------------------------

/// Caption plus its component words, by which neighbor purity is scored.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionComponents {
    pub caption: String,
    pub instrument: String,
    pub verb: String,
    pub target: String,
}

/// Positional parse of a single-triplet caption: first word instrument,
/// second verb, remainder target. Multi-triplet captions return None.
pub fn parse_triplet_caption(caption: &str) -> Option<CaptionComponents> {
    if caption.contains(". ") {
        return None;
    }
    let words = caption_words(caption);
    if words.len() < 3 {
        return None;
    }
    Some(CaptionComponents {
        caption: caption.to_string(),
        instrument: words[0].clone(),
        verb: words[1].clone(),
        target: words[2..].join(" "),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurityScores {
    pub instrument: f64,
    pub verb: f64,
    pub target: f64,
}

/// For each caption, find its k nearest neighbors by cosine distance and
/// score the fraction sharing each component word. Ties break by caption
/// lexicographic order.
pub fn cluster_attribution(
    table: &EmbeddingTable,
    components: &[CaptionComponents],
    k_neighbors: usize,
) -> Result<PurityScores> {
    let n = components.len();
    if k_neighbors == 0 || k_neighbors >= n {
        return Err(Error::Input(format!(
            "k_neighbors {k_neighbors} must be in 1..{n}"
        )));
    }
    let mut entries: Vec<(&CaptionComponents, &Vec<f64>)> = components
        .iter()
        .map(|c| {
            table
                .rows
                .get(&c.caption)
                .map(|v| (c, v))
                .ok_or_else(|| Error::Lookup(format!("caption not in table: {:?}", c.caption)))
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.0.caption.cmp(&b.0.caption));

    let mut sums = [0.0f64; 3];
    for (me, mine) in &entries {
        let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for (j, (other, theirs)) in entries.iter().enumerate() {
            if other.caption == me.caption {
                continue;
            }
            let cos = linalg::cosine(mine, theirs).unwrap_or(0.0);
            dists.push((1.0 - cos, j));
        }
        dists.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| entries[a.1].0.caption.cmp(&entries[b.1].0.caption))
        });
        let neighbors = &dists[..k_neighbors];
        let frac = |f: &dyn Fn(&CaptionComponents) -> &str, own: &str| -> f64 {
            neighbors.iter().filter(|(_, j)| f(entries[*j].0) == own).count() as f64
                / k_neighbors as f64
        };
        sums[0] += frac(&|c| &c.instrument, &me.instrument);
        sums[1] += frac(&|c| &c.verb, &me.verb);
        sums[2] += frac(&|c| &c.target, &me.target);
    }
    Ok(PurityScores {
        instrument: sums[0] / n as f64,
        verb: sums[1] / n as f64,
        target: sums[2] / n as f64,
    })
}

/// Mean pairwise Euclidean distance after unit-normalizing every row; the
/// crate's latent-separation metric.
pub fn separation(table: &EmbeddingTable) -> f64 {
    let rows: Vec<Vec<f64>> = table
        .rows
        .values()
        .map(|r| {
            let nrm = linalg::norm(r);
            if nrm == 0.0 {
                r.clone()
            } else {
                r.iter().map(|x| x / nrm).collect()
            }
        })
        .collect();
    let n = rows.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = rows[i]
                .iter()
                .zip(rows[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sum += d2.sqrt();
            pairs += 1.0;
        }
    }
    sum / pairs
}
