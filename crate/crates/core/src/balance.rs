//! Frame sampling plans. Instrument-balanced mode oversamples frames in
//! proportion to the inverse frequency of their instruments; uniform and
//! triplet-balanced modes are kept as ablation baselines.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceMode {
    Uniform,
    TripletBalanced,
    InstrumentBalanced,
}

impl std::str::FromStr for BalanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(BalanceMode::Uniform),
            "triplet" | "triplet-balanced" => Ok(BalanceMode::TripletBalanced),
            "instrument" | "instrument-balanced" => Ok(BalanceMode::InstrumentBalanced),
            other => Err(Error::Config(format!("unknown balance mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BalanceMode::Uniform => "uniform",
            BalanceMode::TripletBalanced => "triplet-balanced",
            BalanceMode::InstrumentBalanced => "instrument-balanced",
        };
        f.write_str(s)
    }
}

/// Positive per-frame sampling weights plus the counts they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub mode: BalanceMode,
    pub frame_weights: Vec<f64>,
    pub normalization: f64,
    pub instrument_counts: BTreeMap<u16, usize>,
    /// Checksum over frame ids, so a plan can be matched to its dataset.
    pub frame_checksum: u64,
    cumulative: Vec<f64>,
}

/// Count of frames in which each instrument appears at least once; a frame
/// with two triplets sharing an instrument contributes once.
pub fn instrument_frequencies(dataset: &Dataset) -> BTreeMap<u16, usize> {
    let mut counts = BTreeMap::new();
    for frame in &dataset.frames {
        let mut seen: Vec<u16> = frame.triplets.iter().map(|t| t.instrument).collect();
        seen.sort_unstable();
        seen.dedup();
        for i in seen {
            *counts.entry(i).or_insert(0) += 1;
        }
    }
    counts
}

fn triplet_frequencies(dataset: &Dataset) -> BTreeMap<(u16, u16, u16), usize> {
    let mut counts = BTreeMap::new();
    for frame in &dataset.frames {
        let mut seen: Vec<(u16, u16, u16)> = frame
            .triplets
            .iter()
            .map(|t| (t.instrument, t.verb, t.target))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        for k in seen {
            *counts.entry(k).or_insert(0) += 1;
        }
    }
    counts
}

fn checksum_frames(dataset: &Dataset) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for f in &dataset.frames {
        for &b in f.frame_id.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x7c;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Build the sampling plan for a dataset. Weights:
/// uniform → 1; triplet-balanced → mean over the frame's triplet categories of
/// 1/count; instrument-balanced → mean over the frame's distinct instruments
/// of 1/count.
pub fn frame_weights(dataset: &Dataset, mode: BalanceMode) -> Result<SamplingPlan> {
    if dataset.n() == 0 {
        return Err(Error::Input("empty dataset".into()));
    }
    let instrument_counts = instrument_frequencies(dataset);
    let weights: Vec<f64> = match mode {
        BalanceMode::Uniform => vec![1.0; dataset.n()],
        BalanceMode::InstrumentBalanced => dataset
            .frames
            .iter()
            .map(|f| {
                let mut ins: Vec<u16> = f.triplets.iter().map(|t| t.instrument).collect();
                ins.sort_unstable();
                ins.dedup();
                let s: f64 = ins.iter().map(|i| 1.0 / instrument_counts[i] as f64).sum();
                s / ins.len() as f64
            })
            .collect(),
        BalanceMode::TripletBalanced => {
            let counts = triplet_frequencies(dataset);
            dataset
                .frames
                .iter()
                .map(|f| {
                    let s: f64 = f
                        .triplets
                        .iter()
                        .map(|t| 1.0 / counts[&(t.instrument, t.verb, t.target)] as f64)
                        .sum();
                    s / f.triplets.len() as f64
                })
                .collect()
        }
    };
    debug_assert!(weights.iter().all(|&w| w > 0.0));
    let normalization: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    Ok(SamplingPlan {
        mode,
        frame_weights: weights,
        normalization,
        instrument_counts,
        frame_checksum: checksum_frames(dataset),
        cumulative,
    })
}

/// Weighted i.i.d. draws with replacement, P(i) = w_i / Σw. Deterministic
/// given the generator's seed.
pub fn sample_indices(plan: &SamplingPlan, rng: &mut ChaCha8Rng, count: usize) -> Vec<usize> {
    let total = plan.normalization;
    let n = plan.frame_weights.len();
    (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            plan.cumulative.partition_point(|&c| c <= u).min(n - 1)
        })
        .collect()
}

/// Audit export: frame_id, weight, distinct instruments per frame.
pub fn export_plan_csv(plan: &SamplingPlan, dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    w.write_record(["frame_id", "weight", "instruments"]).map_err(csv_err(path))?;
    for (frame, weight) in dataset.frames.iter().zip(plan.frame_weights.iter()) {
        let mut ins: Vec<u16> = frame.triplets.iter().map(|t| t.instrument).collect();
        ins.sort_unstable();
        ins.dedup();
        let ins = ins.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("|");
        w.write_record([frame.frame_id.as_str(), &format!("{weight}"), &ins])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format { path: path.to_path_buf(), msg: e.to_string() }
}
