//! Command implementations. Each one validates its configuration before any
//! compute, writes its artifacts under a run directory, and leaves a
//! `manifest.json` sufficient to reproduce the run bit-for-bit.

mod analyze;
mod evaluate;
mod generate;
mod make_toy;
mod train;

pub use analyze::{cmd_analyze, AnalyzeArgs};
pub use evaluate::{cmd_evaluate, EvaluateArgs};
pub use generate::{cmd_generate, GenerateArgs, GenerateOutcome};
pub use make_toy::{cmd_make_toy, MakeToyArgs};
pub use train::{cmd_train, TrainArgs, TrainOutcome};

use std::path::Path;

use tripletgen::data::{load_annotations, Dataset, IngestReport};
use tripletgen::error::{Error, Result};

/// Create (or verify reuse of) an output directory. Refuses to write into an
/// existing non-empty directory unless `force` is set.
pub fn ensure_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let non_empty = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                path.display()
            )));
        }
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A dataset directory holds `annotation.json` plus `frames/`.
pub fn load_dataset_dir(dir: &Path, resolution: usize) -> Result<(Dataset, IngestReport)> {
    let annotation = dir.join("annotation.json");
    let frames = dir.join("frames");
    if !annotation.exists() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            msg: "no annotation.json in dataset directory".into(),
        });
    }
    load_annotations(&annotation, &frames, resolution)
}

/// Sorted PNG paths in a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "png").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}
