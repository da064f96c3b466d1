//! `evaluate`: FID between real and generated image sets, optional CLIP-style
//! alignment scoring via plugin embedding tables, and oracle alignment for
//! toy-vocabulary prompts.

use std::path::{Path, PathBuf};

use tripletgen::data::Image;
use tripletgen::error::{Error, Result};
use tripletgen::eval::{
    fid, frechet_distance, gaussian_stats, oracle_alignment, FeatureExtractor,
    ToyFeatureExtractor,
};
use tripletgen::textlang::EmbeddingTable;

use crate::config::RunConfig;
use crate::manifest::{hash_file, Manifest};

use super::{ensure_out_dir, list_pngs};

pub struct EvaluateArgs {
    pub config: RunConfig,
    pub real_dir: PathBuf,
    pub generated_dir: PathBuf,
    /// One caption per line for the sorted generated files (a single line
    /// broadcasts to all).
    pub prompts: Option<PathBuf>,
    /// Plugin feature tables keyed by file name (FID without the toy extractor).
    pub real_features: Option<PathBuf>,
    pub generated_features: Option<PathBuf>,
    /// Plugin embedding tables for the CLIP-style score: image table keyed by
    /// generated file name, text table keyed by caption.
    pub image_embeddings: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub force: bool,
}

struct LoadedSet {
    images: Vec<Image>,
    names: Vec<String>,
    unreadable: Vec<String>,
}

fn load_set(dir: &Path) -> Result<LoadedSet> {
    let mut set = LoadedSet { images: Vec::new(), names: Vec::new(), unreadable: Vec::new() };
    for path in list_pngs(dir)? {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        match Image::load_png(&path) {
            Ok(img) => {
                set.images.push(img);
                set.names.push(name);
            }
            Err(e) => {
                eprintln!("unreadable image {}: {e}", path.display());
                set.unreadable.push(name);
            }
        }
    }
    if set.images.len() < 2 {
        return Err(Error::Input(format!(
            "{} has {} readable images, need >= 2",
            dir.display(),
            set.images.len()
        )));
    }
    Ok(set)
}

fn resize_to_common(real: &mut LoadedSet, generated: &mut LoadedSet) -> usize {
    let size = real.images[0].h.min(generated.images[0].h);
    for set in [real, generated] {
        for img in set.images.iter_mut() {
            if img.h != size {
                *img = img.resize(size, size);
            }
        }
    }
    size
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    args.config.validate()?;
    ensure_out_dir(&args.out_dir, args.force)?;
    let reports = args.out_dir.join("reports");
    std::fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;

    let mut real = load_set(&args.real_dir)?;
    let mut generated = load_set(&args.generated_dir)?;
    let size = resize_to_common(&mut real, &mut generated);

    let mut metrics = serde_json::Map::new();
    metrics.insert("n_a".into(), serde_json::json!(real.images.len()));
    metrics.insert("n_b".into(), serde_json::json!(generated.images.len()));
    metrics.insert("seed".into(), serde_json::json!(args.config.eval.seed));
    metrics.insert(
        "unreadable".into(),
        serde_json::json!({ "real": real.unreadable, "generated": generated.unreadable }),
    );

    // FID: plugin feature tables when provided, else the toy extractor
    let fid_value = match (&args.real_features, &args.generated_features) {
        (Some(rf), Some(gf)) => {
            let rt = EmbeddingTable::load(rf)?;
            let gt = EmbeddingTable::load(gf)?;
            let gather = |t: &EmbeddingTable, names: &[String]| -> Result<Vec<Vec<f64>>> {
                names
                    .iter()
                    .map(|n| {
                        t.rows.get(n).cloned().ok_or_else(|| Error::Eval {
                            item: n.clone(),
                            msg: "no feature row".into(),
                        })
                    })
                    .collect()
            };
            let fa = gather(&rt, &real.names)?;
            let fb = gather(&gt, &generated.names)?;
            metrics.insert("extractor".into(), serde_json::json!("table"));
            frechet_distance(&gaussian_stats(&fa)?, &gaussian_stats(&fb)?)?
        }
        _ => {
            let extractor = ToyFeatureExtractor::new(&args.config.data.toy, size)?;
            metrics.insert("extractor".into(), serde_json::json!(extractor.name()));
            fid(&real.images, &generated.images, &extractor)?
        }
    };
    metrics.insert("fid".into(), serde_json::json!(fid_value));

    // prompts: drive oracle alignment and optionally the CLIP-style score
    let prompts: Option<Vec<String>> = match &args.prompts {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let lines: Vec<String> =
                text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            let lines = if lines.len() == 1 {
                vec![lines[0].clone(); generated.images.len()]
            } else {
                lines
            };
            if lines.len() != generated.images.len() {
                return Err(Error::Input(format!(
                    "{} prompts for {} generated images",
                    lines.len(),
                    generated.images.len()
                )));
            }
            Some(lines)
        }
        None => None,
    };

    if let Some(prompts) = &prompts {
        let oracle = oracle_alignment(&generated.images, prompts, &args.config.data.toy)?;
        metrics.insert("oracle".into(), serde_json::to_value(oracle).expect("json"));
        let path = reports.join("oracle_accuracies.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        w.write_record(["component", "accuracy"])
            .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        for (name, v) in [
            ("instrument", oracle.instrument_acc),
            ("verb", oracle.verb_acc),
            ("target", oracle.target_acc),
            ("triplet", oracle.triplet_acc),
            ("mean_confidence", oracle.mean_confidence),
        ] {
            w.write_record([name, &format!("{v}")])
                .map_err(|e| Error::Format { path: path.clone(), msg: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        if let (Some(ie), Some(te)) = (&args.image_embeddings, &args.text_embeddings) {
            let image_table = EmbeddingTable::load(ie)?;
            let text_table = EmbeddingTable::load(te)?;
            let score =
                table_alignment_score(&image_table, &text_table, &generated.names, prompts)?;
            metrics.insert("clip_style_score".into(), serde_json::json!(score));
        }
    }

    let metrics_path = reports.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&serde_json::Value::Object(metrics.clone())).expect("json"),
    )
    .map_err(|e| Error::io(&metrics_path, e))?;

    let mut manifest = Manifest::new("evaluate", &args.config)
        .seed("eval", args.config.eval.seed)
        .measured(serde_json::Value::Object(metrics));
    if let Some(p) = &args.prompts {
        manifest = manifest.input("prompts", hash_file(p)?);
    }
    manifest.write(&args.out_dir)?;
    println!("evaluate: FID = {fid_value:.6} -> {}", reports.display());
    Ok(())
}

/// CLIP-style score over plugin tables: image vectors keyed by file name,
/// text vectors keyed by caption. Same formula as [`alignment_score`].
fn table_alignment_score(
    image_table: &EmbeddingTable,
    text_table: &EmbeddingTable,
    names: &[String],
    prompts: &[String],
) -> Result<f64> {
    if image_table.d != text_table.d {
        return Err(Error::Contract(format!(
            "embedding widths differ: image {} vs text {}",
            image_table.d, text_table.d
        )));
    }
    let mut sum = 0.0;
    for (name, prompt) in names.iter().zip(prompts.iter()) {
        let iv = image_table.rows.get(name).ok_or_else(|| Error::Eval {
            item: name.clone(),
            msg: "no image embedding row".into(),
        })?;
        let tv = text_table.rows.get(prompt).ok_or_else(|| Error::Eval {
            item: prompt.clone(),
            msg: "no caption embedding row".into(),
        })?;
        let c = tripletgen::linalg::cosine(iv, tv)
            .ok_or_else(|| Error::Numeric("zero-norm plugin embedding".into()))?;
        sum += c;
    }
    Ok(100.0 * sum / names.len() as f64)
}
