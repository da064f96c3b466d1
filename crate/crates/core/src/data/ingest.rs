//! Annotation ingestion and export.
//!
//! The annotation layout mirrors the published CholecT50 per-video JSON: an
//! `annotations` map from frame key to a list of triplet class ids, and a
//! `categories` object holding `instrument` / `verb` / `target` / `triplet`
//! id→name maps, where a triplet name is `"instrument,verb,target"`.
//!
//! `load_annotations` accepts either one such file (images at
//! `frames_dir/<key>.png`) or a directory of them (images at
//! `frames_dir/<video>/<key>.png`, frame ids prefixed with the video name).
//! Export writes the same layout, so toy datasets are self-hosting.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use super::{AnnotatedFrame, Dataset, Image, Provenance, Triplet, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub frames_loaded: usize,
    pub frames_dropped_no_triplet: usize,
    pub duplicate_triplets_removed: usize,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn parse_category_map(path: &Path, categories: &Value, key: &str) -> Result<Vec<String>> {
    let map = categories
        .get(key)
        .ok_or_else(|| format_err(path, format!("missing key \"categories.{key}\"")))?
        .as_object()
        .ok_or_else(|| format_err(path, format!("\"categories.{key}\" is not an object")))?;
    let mut by_id = BTreeMap::new();
    for (k, v) in map {
        let id: usize = k
            .parse()
            .map_err(|_| format_err(path, format!("non-integer id {k:?} in \"categories.{key}\"")))?;
        let name = v
            .as_str()
            .ok_or_else(|| format_err(path, format!("non-string name for \"categories.{key}.{k}\"")))?;
        by_id.insert(id, name.trim().to_lowercase());
    }
    let mut out = Vec::with_capacity(by_id.len());
    for (i, (id, name)) in by_id.into_iter().enumerate() {
        if id != i {
            return Err(format_err(
                path,
                format!("ids in \"categories.{key}\" not contiguous from 0 (gap at {id})"),
            ));
        }
        out.push(name);
    }
    if out.is_empty() {
        return Err(format_err(path, format!("\"categories.{key}\" is empty")));
    }
    Ok(out)
}

struct VideoAnnotation {
    video: String,
    vocab: Vocab,
    /// triplet class id → component triplet
    triplet_map: BTreeMap<usize, (u16, u16, u16)>,
    /// frame key → triplet class ids, sorted by numeric-then-lexical key
    frames: Vec<(String, Vec<usize>)>,
}

fn parse_video(path: &Path) -> Result<VideoAnnotation> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| format_err(path, format!("invalid JSON: {e}")))?;
    let video = root
        .get("video")
        .and_then(|v| v.as_str())
        .unwrap_or("video")
        .to_string();
    let categories = root
        .get("categories")
        .ok_or_else(|| format_err(path, "missing key \"categories\""))?;
    let instruments = parse_category_map(path, categories, "instrument")?;
    let verbs = parse_category_map(path, categories, "verb")?;
    let targets = parse_category_map(path, categories, "target")?;
    let triplet_names = parse_category_map(path, categories, "triplet")?;
    let vocab = Vocab::new(instruments, verbs, targets)?;

    let mut triplet_map = BTreeMap::new();
    for (id, name) in triplet_names.iter().enumerate() {
        let parts: Vec<&str> = name.splitn(3, ',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format_err(
                path,
                format!("\"categories.triplet.{id}\" is not \"instrument,verb,target\": {name:?}"),
            ));
        }
        let t = vocab.resolve(parts[0], parts[1], parts[2]).map_err(|e| {
            format_err(path, format!("\"categories.triplet.{id}\" unresolvable: {e}"))
        })?;
        triplet_map.insert(id, (t.instrument, t.verb, t.target));
    }

    let annotations = root
        .get("annotations")
        .ok_or_else(|| format_err(path, "missing key \"annotations\""))?
        .as_object()
        .ok_or_else(|| format_err(path, "\"annotations\" is not an object"))?;
    let mut frames = Vec::with_capacity(annotations.len());
    for (key, ids) in annotations {
        let list = ids
            .as_array()
            .ok_or_else(|| format_err(path, format!("\"annotations.{key}\" is not an array")))?;
        let mut out = Vec::with_capacity(list.len());
        for v in list {
            let id = v.as_u64().ok_or_else(|| {
                format_err(path, format!("non-integer triplet id in \"annotations.{key}\""))
            })?;
            out.push(id as usize);
        }
        frames.push((key.clone(), out));
    }
    // numeric keys sort numerically, others lexically after them
    frames.sort_by(|a, b| match (a.0.parse::<u64>(), b.0.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.0.cmp(&b.0),
    });
    Ok(VideoAnnotation { video, vocab, triplet_map, frames })
}

/// Load a CholecT50-style annotation file (or directory of per-video files),
/// resize images to `resolution`, and normalize pixels to `[0,1]`.
pub fn load_annotations(
    annotation_path: &Path,
    frames_dir: &Path,
    resolution: usize,
) -> Result<(Dataset, IngestReport)> {
    let mut videos = Vec::new();
    let multi = annotation_path.is_dir();
    if multi {
        let mut entries: Vec<_> = std::fs::read_dir(annotation_path)
            .map_err(|e| Error::io(annotation_path, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(format_err(annotation_path, "no .json annotation files in directory"));
        }
        for p in entries {
            videos.push((parse_video(&p)?, p));
        }
    } else {
        videos.push((parse_video(annotation_path)?, annotation_path.to_path_buf()));
    }

    let vocab = videos[0].0.vocab.clone();
    for (v, p) in &videos[1..] {
        if v.vocab != vocab {
            return Err(format_err(p, "vocabulary differs from first annotation file"));
        }
    }

    let mut report = IngestReport::default();
    let mut frames = Vec::new();
    for (video, _) in &videos {
        for (key, ids) in &video.frames {
            if ids.is_empty() {
                report.frames_dropped_no_triplet += 1;
                continue;
            }
            let frame_id = if multi {
                format!("{}_{}", video.video, key)
            } else {
                key.clone()
            };
            let mut triplets: Vec<Triplet> = Vec::with_capacity(ids.len());
            for &id in ids {
                let (i, v, t) = *video.triplet_map.get(&id).ok_or_else(|| Error::Ingest {
                    frame: frame_id.clone(),
                    msg: format!("undefined triplet id {id}"),
                })?;
                let trip = Triplet::new(i, v, t, &vocab).map_err(|e| Error::Ingest {
                    frame: frame_id.clone(),
                    msg: e.to_string(),
                })?;
                if triplets.contains(&trip) {
                    report.duplicate_triplets_removed += 1;
                } else {
                    triplets.push(trip);
                }
            }
            let image_path = if multi {
                frames_dir.join(&video.video).join(format!("{key}.png"))
            } else {
                frames_dir.join(format!("{key}.png"))
            };
            let image = Image::load_png(&image_path)?.resize(resolution, resolution);
            frames.push(AnnotatedFrame::new(image, triplets, frame_id, video.video.clone())?);
            report.frames_loaded += 1;
        }
    }
    let dataset = Dataset::new(frames, vocab, Provenance::Ingested)?;
    Ok((dataset, report))
}

/// Write `annotation.json` plus `frames/<frame_id>.png` in the ingestion
/// layout. Triplet class ids are assigned over the distinct triplets present,
/// in lexicographic order.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let vocab = &dataset.vocab;
    let mut distinct: Vec<Triplet> = dataset
        .frames
        .iter()
        .flat_map(|f| f.triplets.iter().copied())
        .collect();
    distinct.sort();
    distinct.dedup();
    let class_of = |t: &Triplet| distinct.binary_search(t).expect("triplet present");

    let cat = |words: &[String]| -> Value {
        let mut m = serde_json::Map::new();
        for (i, w) in words.iter().enumerate() {
            m.insert(i.to_string(), Value::String(w.clone()));
        }
        Value::Object(m)
    };
    let mut triplet_map = serde_json::Map::new();
    for (i, t) in distinct.iter().enumerate() {
        let name = format!(
            "{},{},{}",
            vocab.instrument_word(t.instrument)?,
            vocab.verb_word(t.verb)?,
            vocab.target_word(t.target)?
        );
        triplet_map.insert(i.to_string(), Value::String(name));
    }

    let mut annotations = serde_json::Map::new();
    for f in &dataset.frames {
        let ids: Vec<Value> = f
            .triplets
            .iter()
            .map(|t| Value::Number(class_of(t).into()))
            .collect();
        annotations.insert(f.frame_id.clone(), Value::Array(ids));
        f.image.save_png(&frames_dir.join(format!("{}.png", f.frame_id)))?;
    }

    let root = serde_json::json!({
        "video": dataset.frames.first().map(|f| f.source_video.clone()).unwrap_or_else(|| "toy".into()),
        "categories": {
            "instrument": cat(vocab.instruments()),
            "verb": cat(vocab.verbs()),
            "target": cat(vocab.targets()),
            "triplet": Value::Object(triplet_map),
        },
        "annotations": Value::Object(annotations),
    });
    let path = dir.join("annotation.json");
    let text = serde_json::to_string_pretty(&root).expect("serializable");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
