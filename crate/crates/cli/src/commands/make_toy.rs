//! `make-toy`: synthesize a TripletWorld dataset directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use tripletgen::data::{export_dataset, make_toy_dataset};
use tripletgen::error::Result;

use crate::config::RunConfig;
use crate::manifest::Manifest;

use super::ensure_out_dir;

pub struct MakeToyArgs {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub force: bool,
}

pub fn cmd_make_toy(args: &MakeToyArgs) -> Result<()> {
    args.config.validate()?;
    ensure_out_dir(&args.out_dir, args.force)?;
    let toy = &args.config.data.toy;
    let dataset = make_toy_dataset(toy, args.config.data.n_frames)?;
    export_dataset(&dataset, &args.out_dir)?;

    // measured class balance of the materialized dataset
    let mut triplet_counts: BTreeMap<(u16, u16, u16), usize> = BTreeMap::new();
    for f in &dataset.frames {
        for t in &f.triplets {
            *triplet_counts.entry((t.instrument, t.verb, t.target)).or_insert(0) += 1;
        }
    }
    let max = triplet_counts.values().copied().max().unwrap_or(0);
    let min = triplet_counts.values().copied().min().unwrap_or(0);
    let instrument_counts = tripletgen::balance::instrument_frequencies(&dataset);
    let measured = serde_json::json!({
        "frames": dataset.n(),
        "distinct_triplets": triplet_counts.len(),
        "imbalance_ratio": if min > 0 { max as f64 / min as f64 } else { f64::INFINITY },
        "instrument_counts": instrument_counts,
    });

    Manifest::new("make-toy", &args.config)
        .seed("toy", toy.seed)
        .measured(measured)
        .write(&args.out_dir)?;
    println!(
        "make-toy: {} frames, {} distinct triplets -> {}",
        dataset.n(),
        triplet_counts.len(),
        args.out_dir.display()
    );
    Ok(())
}
