//! `generate`: sample images for a prompt from trained checkpoints.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tripletgen::data::Image;
use tripletgen::diffusion::{
    cascade_generate, load_checkpoint, make_schedule, sample, signed_to_image, step_seed,
    text_cond_for, LoadedCheckpoint, NoiseSchedule,
};
use tripletgen::error::{Error, Result};
use tripletgen::textlang::{caption_words, TokenVocab, UNK_ID};
use tripletgen::viz::image_grid;

use crate::config::RunConfig;
use crate::manifest::{hash_file, Manifest};

use super::ensure_out_dir;

pub struct GenerateArgs {
    pub config: RunConfig,
    pub base_ckpt: PathBuf,
    pub sr_ckpt: Option<PathBuf>,
    pub prompt: String,
    pub count: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub force: bool,
}

pub struct GenerateOutcome {
    pub files: Vec<PathBuf>,
    pub unk_words: Vec<String>,
}

fn schedule_of(meta: &tripletgen::diffusion::CheckpointMeta) -> Result<NoiseSchedule> {
    make_schedule(meta.schedule_kind, meta.t_count, meta.beta_start, meta.beta_end)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<GenerateOutcome> {
    if args.count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    ensure_out_dir(&args.out_dir, args.force)?;
    let base = load_checkpoint(&args.base_ckpt)?;
    let sr: Option<LoadedCheckpoint> =
        args.sr_ckpt.as_ref().map(|p| load_checkpoint(p)).transpose()?;

    // compatibility is checked before any sampling
    if let Some(sr) = &sr {
        let scale = match sr.meta.config.variant {
            tripletgen::diffusion::DenoiserVariant::SuperResolution { scale } => scale,
            _ => return Err(Error::Contract("sr checkpoint is not a super-resolution model".into())),
        };
        if base.meta.config.image_size * scale != sr.meta.config.image_size {
            return Err(Error::Contract(format!(
                "stage mismatch: base {} x {scale} != SR {}",
                base.meta.config.image_size, sr.meta.config.image_size
            )));
        }
    }

    let base_vocab = TokenVocab::from_words(base.meta.token_words.clone());
    let unk_words: Vec<String> = caption_words(&args.prompt)
        .into_iter()
        .filter(|w| base_vocab.token_id(w) == UNK_ID)
        .collect();
    if !unk_words.is_empty() {
        eprintln!("warning: out-of-vocabulary words in prompt: {unk_words:?}");
    }

    let base_schedule = schedule_of(&base.meta)?;
    let guidance = (args.config.diffusion.guidance != 0.0).then_some(args.config.diffusion.guidance);

    let mut files = Vec::new();
    let mut grid_images: Vec<Image> = Vec::new();
    let mut seeds = Vec::new();
    for i in 0..args.count {
        let item_seed = step_seed(args.seed, i as u64);
        seeds.push(item_seed);
        match &sr {
            Some(sr) => {
                let sr_vocab = TokenVocab::from_words(sr.meta.token_words.clone());
                let sr_schedule = schedule_of(&sr.meta)?;
                let (low, high) = cascade_generate(
                    &base.unet,
                    &sr.unet,
                    &base_schedule,
                    &sr_schedule,
                    &base_vocab,
                    &sr_vocab,
                    &args.prompt,
                    item_seed,
                    guidance,
                )?;
                let low_path = args.out_dir.join(format!("{i:03}_low.png"));
                let high_path = args.out_dir.join(format!("{i:03}_high.png"));
                low.save_png(&low_path)?;
                high.save_png(&high_path)?;
                files.push(low_path);
                files.push(high_path.clone());
                grid_images.push(high);
            }
            None => {
                let tc = text_cond_for(&base.unet, &base_vocab, &args.prompt)?;
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
                let out = sample(&base.unet, &base_schedule, Some(&tc), None, &mut rng, guidance)?;
                let img = signed_to_image(&out, base.meta.config.image_size);
                let path = args.out_dir.join(format!("{i:03}.png"));
                img.save_png(&path)?;
                files.push(path);
                grid_images.push(img);
            }
        }
    }
    let grid = image_grid(&grid_images, grid_images.len().min(4));
    grid.save_png(&args.out_dir.join("grid.png"))?;

    let sidecar = serde_json::json!({
        "prompt": args.prompt,
        "seeds": seeds,
        "stage": if sr.is_some() { "cascade" } else { "base" },
        "unk_words": unk_words,
        "guidance": guidance,
        "base_checkpoint": { "path": args.base_ckpt.display().to_string(),
                             "hash": hash_file(&args.base_ckpt)?,
                             "iteration": base.meta.iteration },
        "sr_checkpoint": match (&args.sr_ckpt, &sr) {
            (Some(p), Some(l)) => serde_json::json!({
                "path": p.display().to_string(),
                "hash": hash_file(p)?,
                "iteration": l.meta.iteration,
            }),
            _ => serde_json::Value::Null,
        },
    });
    let sidecar_path = args.out_dir.join("sidecar.json");
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).expect("json"))
        .map_err(|e| Error::io(&sidecar_path, e))?;

    let mut manifest = Manifest::new("generate", &args.config)
        .seed("generate", args.seed)
        .input("base_ckpt", hash_file(&args.base_ckpt)?);
    if let Some(p) = &args.sr_ckpt {
        manifest = manifest.input("sr_ckpt", hash_file(p)?);
    }
    manifest
        .measured(serde_json::json!({ "prompt": args.prompt, "count": args.count }))
        .write(&args.out_dir)?;
    println!(
        "generate: {} image(s) for {:?} -> {}",
        args.count,
        args.prompt,
        args.out_dir.display()
    );
    Ok(GenerateOutcome { files, unk_words })
}
