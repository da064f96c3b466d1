//! `analyze`: embedding-space reports — alignment distribution, 2-d
//! projection, cluster attribution, separation, and balance-weight audits.

use std::path::{Path, PathBuf};

use tripletgen::balance::{export_plan_csv, frame_weights, instrument_frequencies};
use tripletgen::diffusion::load_checkpoint;
use tripletgen::error::{Error, Result};
use tripletgen::textlang::{
    cluster_attribution, compute_alignment, load_probe, parse_triplet_caption, project_2d,
    separation, CaptionComponents, EmbeddingTable, HashEncoder, LearnedEncoder, TableEncoder,
    TextEncoder, TokenVocab,
};
use tripletgen::viz::scatter_png;

use crate::config::RunConfig;
use crate::manifest::{hash_file, Manifest};

use super::{ensure_out_dir, load_dataset_dir};

pub struct AnalyzeArgs {
    pub config: RunConfig,
    /// Embedding-table file to analyze, or --
    pub table: Option<PathBuf>,
    /// -- a dataset directory to derive captions/weights from.
    pub data_dir: Option<PathBuf>,
    /// Checkpoint whose learned token table drives the builtin-learned encoder.
    pub ckpt: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub force: bool,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    args.config.validate()?;
    ensure_out_dir(&args.out_dir, args.force)?;
    let reports = args.out_dir.join("reports");
    std::fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;

    let mut manifest = Manifest::new("analyze", &args.config);
    let mut summary = serde_json::Map::new();

    let table: EmbeddingTable = match (&args.table, &args.data_dir) {
        (Some(path), _) => {
            manifest = manifest.input("table", hash_file(path)?);
            EmbeddingTable::load(path)?
        }
        (None, Some(dir)) => {
            let resolution = args.config.data.toy.image_size.max(16);
            let (dataset, _) = load_dataset_dir(dir, resolution)?;
            manifest = manifest.input(
                "annotation.json",
                hash_file(&dir.join("annotation.json"))?,
            );
            // balance audit
            let counts = instrument_frequencies(&dataset);
            let plan = frame_weights(&dataset, args.config.balance.mode)?;
            export_plan_csv(&plan, &dataset, &reports.join("weights.csv"))?;
            write_counts_csv(&counts, &reports.join("instrument_counts.csv"))?;
            summary.insert(
                "balance".into(),
                serde_json::json!({
                    "mode": args.config.balance.mode.to_string(),
                    "instrument_counts": counts,
                    "weight_normalization": plan.normalization,
                }),
            );

            let encoder = build_encoder(args, &dataset)?;
            summary.insert("encoder".into(), serde_json::json!(encoder_label(&*encoder)));
            EmbeddingTable::from_encoder(&dataset, &*encoder)?
        }
        (None, None) => {
            return Err(Error::Config("analyze needs --table or --data".into()));
        }
    };

    // projection
    let projection = project_2d(&table)?;
    write_projection_csv(&projection.points, &reports.join("projection.csv"))?;
    let components: Vec<CaptionComponents> = table
        .rows
        .keys()
        .filter_map(|c| parse_triplet_caption(c))
        .collect();
    let class_of = |caption: &str| -> usize {
        components
            .iter()
            .find(|c| c.caption == caption)
            .map(|c| instrument_class(&components, &c.instrument))
            .unwrap_or(0)
    };
    let points: Vec<(f64, f64, usize)> = projection
        .points
        .iter()
        .map(|(caption, xy)| (xy[0], xy[1], class_of(caption)))
        .collect();
    scatter_png(&points, 512, &reports.join("projection.png"))?;
    summary.insert(
        "projection".into(),
        serde_json::json!({
            "n": projection.points.len(),
            "degenerate": projection.degenerate,
            "explained": projection.explained,
        }),
    );

    // cluster attribution over parseable triplet captions
    if components.len() > 6 {
        let k = 5.min(components.len() - 1);
        let purity = cluster_attribution(&table, &components, k)?;
        let path = reports.join("attribution.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        w.write_record(["component", "purity", "k_neighbors"])
            .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        for (name, v) in [
            ("instrument", purity.instrument),
            ("verb", purity.verb),
            ("target", purity.target),
        ] {
            w.write_record([name, &format!("{v}"), &format!("{k}")])
                .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        summary.insert(
            "attribution".into(),
            serde_json::json!({
                "instrument": purity.instrument,
                "verb": purity.verb,
                "target": purity.target,
                "k": k,
            }),
        );
    }

    summary.insert("separation".into(), serde_json::json!(separation(&table)));

    // alignment probe
    if let Some(probe_path) = &args.probe {
        manifest = manifest.input("probe", hash_file(probe_path)?);
        let mut probe = load_probe(probe_path)?;
        let encoder: Box<dyn TextEncoder> = match &args.table {
            Some(_) => Box::new(TableEncoder { table: &table, l_max: args.config.text.l_max }),
            None => {
                let mut words = Vec::new();
                for caption in table.rows.keys().chain(probe.long_captions.iter()) {
                    words.extend(tripletgen::textlang::caption_words(caption));
                }
                words.extend(tripletgen::textlang::caption_words(&probe.short_caption));
                Box::new(HashEncoder::new(
                    TokenVocab::from_words(words),
                    args.config.text.d,
                    args.config.text.l_max.max(24),
                    args.config.text.hash_seed,
                ))
            }
        };
        let (mean, std) = compute_alignment(&mut probe, &*encoder)?;
        let path = reports.join("alignment.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        w.write_record(["pair", "cosine", "mean", "std"])
            .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        for (i, c) in probe.per_pair_cosines.iter().enumerate() {
            w.write_record([&format!("{i}"), &format!("{c}"), &format!("{mean}"), &format!("{std}")])
                .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        summary.insert(
            "alignment".into(),
            serde_json::json!({ "mean": mean, "std": std, "n": probe.long_captions.len() }),
        );
    }

    let summary_path = reports.join("analysis.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&serde_json::Value::Object(summary)).expect("json"),
    )
    .map_err(|e| Error::io(&summary_path, e))?;
    manifest.write(&args.out_dir)?;
    println!("analyze: reports in {}", reports.display());
    Ok(())
}

fn build_encoder(
    args: &AnalyzeArgs,
    dataset: &tripletgen::data::Dataset,
) -> Result<Box<dyn TextEncoder>> {
    let text = &args.config.text;
    if let Some(ckpt_path) = &args.ckpt {
        let loaded = load_checkpoint(ckpt_path)?;
        let token_vocab = TokenVocab::from_words(loaded.meta.token_words.clone());
        let table = loaded
            .unet
            .token_table_snapshot()
            .ok_or_else(|| Error::Contract("checkpoint has no text table".into()))?;
        let d = loaded.meta.config.text_dim;
        return Ok(Box::new(LearnedEncoder::new(token_vocab, table, d, text.l_max)?));
    }
    match text.encoder.as_str() {
        "external-table" => {
            let table = EmbeddingTable::load(Path::new(&text.table_path))?;
            // own the table inside a leaked box is unnecessary; embed rows eagerly
            Ok(Box::new(OwnedTableEncoder { table, l_max: text.l_max }))
        }
        // builtin-learned without a checkpoint falls back to the hash featurizer
        _ => {
            let token_vocab = TokenVocab::from_dataset(dataset)?;
            Ok(Box::new(HashEncoder::new(token_vocab, text.d, text.l_max, text.hash_seed)))
        }
    }
}

struct OwnedTableEncoder {
    table: EmbeddingTable,
    l_max: usize,
}

impl TextEncoder for OwnedTableEncoder {
    fn name(&self) -> &str {
        "external-table"
    }
    fn dim(&self) -> usize {
        self.table.d
    }
    fn embed(&self, caption: &str) -> Result<tripletgen::textlang::TextEmbedding> {
        TableEncoder { table: &self.table, l_max: self.l_max }.embed(caption)
    }
}

fn encoder_label(e: &dyn TextEncoder) -> String {
    format!("{} (d={})", e.name(), e.dim())
}

fn instrument_class(components: &[CaptionComponents], instrument: &str) -> usize {
    let mut words: Vec<&str> = components.iter().map(|c| c.instrument.as_str()).collect();
    words.sort();
    words.dedup();
    words.iter().position(|w| *w == instrument).unwrap_or(0)
}

fn write_counts_csv(
    counts: &std::collections::BTreeMap<u16, usize>,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    w.write_record(["instrument_id", "frames"])
        .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    for (id, n) in counts {
        w.write_record([&id.to_string(), &n.to_string()])
            .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_projection_csv(points: &[(String, [f64; 2])], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    w.write_record(["caption", "x", "y"])
        .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    for (caption, xy) in points {
        w.write_record([caption.as_str(), &format!("{}", xy[0]), &format!("{}", xy[1])])
            .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
