//! `train`: fit the base or super-resolution denoiser on a dataset directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tripletgen::balance::frame_weights;
use tripletgen::data::frame_caption;
use tripletgen::diffusion::{
    load_checkpoint, make_schedule, sample, save_checkpoint, signed_to_image, step_seed,
    text_cond_for, train_loop, CheckpointMeta, Trainer, TrainingSet, UNet,
};
use tripletgen::error::{Error, Result};
use tripletgen::textlang::TokenVocab;
use tripletgen::viz::image_grid;

use crate::config::{RunConfig, Stage};
use crate::manifest::{hash_file, Manifest};

use super::{ensure_out_dir, load_dataset_dir};

pub struct TrainArgs {
    pub config: RunConfig,
    pub stage: Stage,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub force: bool,
    pub resume: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub final_loss: f64,
    pub steps_run: u64,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let cfg = &args.config;
    cfg.validate()?;
    let d = &cfg.diffusion;
    let operating = match args.stage {
        Stage::Base => d.base_size,
        Stage::Sr => cfg.sr_size(),
    };
    let target_steps = match args.stage {
        Stage::Base => d.steps,
        Stage::Sr => d.sr_steps,
    };

    ensure_out_dir(&args.out_dir, args.force)?;
    let ckpt_dir = args.out_dir.join("checkpoints");
    let samples_dir = args.out_dir.join("samples");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    std::fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;

    let (dataset, report) = load_dataset_dir(&args.data_dir, operating)?;
    if report.frames_dropped_no_triplet > 0 {
        eprintln!("ingest: dropped {} frames without triplets", report.frames_dropped_no_triplet);
    }
    let token_vocab = TokenVocab::from_dataset(&dataset)?;
    let plan = frame_weights(&dataset, cfg.balance.mode)?;
    let sr_scale = matches!(args.stage, Stage::Sr).then_some(d.sr_scale);
    let set = TrainingSet::prepare(&dataset, &token_vocab, cfg.text.l_max, operating, sr_scale)?;
    let schedule = make_schedule(d.schedule, d.t, d.beta_start, d.beta_end)?;

    let mut trainer = match &args.resume {
        Some(ckpt_path) => {
            let loaded = load_checkpoint(ckpt_path)?;
            let expected = cfg.denoiser_config(args.stage, token_vocab.size())?;
            if loaded.meta.config != expected {
                return Err(Error::Contract(format!(
                    "checkpoint config does not match run config for stage {}",
                    args.stage
                )));
            }
            let mut t = Trainer::new(
                loaded.unet,
                schedule.clone(),
                d.optimizer,
                d.lr,
                loaded.meta.seed,
                d.null_dropout,
            );
            t.step = loaded.meta.iteration;
            t.opt.restore(&loaded.opt_state);
            t
        }
        None => {
            let dcfg = cfg.denoiser_config(args.stage, token_vocab.size())?;
            let unet = UNet::<f32>::new(dcfg, d.seed)?;
            Trainer::new(unet, schedule.clone(), d.optimizer, d.lr, d.seed, d.null_dropout)
        }
    };
    let param_count = trainer.unet.param_count();
    println!(
        "train[{}]: {} frames, {} params, steps {}..{}",
        args.stage,
        dataset.n(),
        param_count,
        trainer.step,
        target_steps
    );

    Manifest::new("train", cfg)
        .seed("train", d.seed)
        .input("annotation.json", hash_file(&args.data_dir.join("annotation.json"))?)
        .measured(serde_json::json!({
            "stage": args.stage.to_string(),
            "operating_size": operating,
            "param_count": param_count,
            "balance_mode": cfg.balance.mode.to_string(),
            "frames": dataset.n(),
            "resume_from": args.resume.as_ref().map(|p| p.display().to_string()),
        }))
        .write(&args.out_dir)?;

    let log_path = args.out_dir.join("log.csv");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if trainer.step == 0 {
        writeln!(log, "step,loss,lr,wall_time_s").map_err(|e| Error::io(&log_path, e))?;
    }

    // eight fixed prompts for periodic sample grids
    let grid_prompts: Vec<String> = {
        let mut caps: Vec<String> = dataset
            .frames
            .iter()
            .map(|f| frame_caption(f, &dataset.vocab))
            .collect::<Result<_>>()?;
        caps.sort();
        caps.dedup();
        caps.into_iter().take(8).collect()
    };

    let mut meta = CheckpointMeta::new(
        trainer.unet.cfg.clone(),
        d.schedule,
        d.t,
        d.beta_start,
        d.beta_end,
        cfg.balance.mode.to_string(),
        d.seed,
        token_vocab.words().to_vec(),
    );
    meta.extra = BTreeMap::from([
        ("stage".to_string(), args.stage.to_string()),
        ("optimizer".to_string(), format!("{:?}", d.optimizer)),
        ("lr".to_string(), format!("{}", d.lr)),
    ]);

    let started = Instant::now();
    let mut final_loss = 0.0;
    let log_every = ((target_steps.saturating_sub(trainer.step)) / 200).clamp(1, 500);

    // run in chunks so checkpoints and grids land mid-run
    while trainer.step < target_steps {
        let mut next_stop = target_steps;
        if d.checkpoint_every > 0 {
            let due = (trainer.step / d.checkpoint_every + 1) * d.checkpoint_every;
            next_stop = next_stop.min(due);
        }
        if d.sample_grid_every > 0 {
            let due = (trainer.step / d.sample_grid_every + 1) * d.sample_grid_every;
            next_stop = next_stop.min(due);
        }
        let chunk = next_stop - trainer.step;
        train_loop(&mut trainer, &set, &plan, chunk, d.batch_size, |info| {
            final_loss = info.loss;
            if info.step % log_every == 0 || info.step == target_steps {
                writeln!(
                    log,
                    "{},{},{},{:.3}",
                    info.step,
                    info.loss,
                    info.lr,
                    started.elapsed().as_secs_f64()
                )
                .map_err(|e| Error::io(&log_path, e))?;
            }
            Ok(())
        })?;
        if d.checkpoint_every > 0
            && trainer.step % d.checkpoint_every == 0
            && trainer.step < target_steps
        {
            meta.iteration = trainer.step;
            let p = ckpt_dir.join(format!("step_{:07}.ckpt", trainer.step));
            let opt_state = trainer.opt.state();
            save_checkpoint(&p, &mut trainer.unet, &meta, &opt_state)?;
        }
        if d.sample_grid_every > 0 && trainer.step % d.sample_grid_every == 0 {
            write_sample_grid(&mut trainer, &token_vocab, &grid_prompts, &samples_dir)?;
        }
    }

    meta.iteration = trainer.step;
    let final_path = ckpt_dir.join("final.ckpt");
    let opt_state = trainer.opt.state();
    save_checkpoint(&final_path, &mut trainer.unet, &meta, &opt_state)?;
    println!(
        "train[{}]: done at step {} (loss {:.5}) in {:.0}s -> {}",
        args.stage,
        trainer.step,
        final_loss,
        started.elapsed().as_secs_f64(),
        final_path.display()
    );
    Ok(TrainOutcome { final_checkpoint: final_path, final_loss, steps_run: trainer.step })
}

fn write_sample_grid(
    trainer: &mut Trainer,
    token_vocab: &TokenVocab,
    prompts: &[String],
    samples_dir: &std::path::Path,
) -> Result<()> {
    // grids only make sense for the base stage (no low-res source here)
    if prompts.is_empty()
        || !trainer.unet.cfg.text_conditioned
        || trainer.unet.cfg.low_res_size().is_some()
    {
        return Ok(());
    }
    let step = trainer.step;
    let mut images = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let tc = text_cond_for(&trainer.unet, token_vocab, prompt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(
            trainer.seed ^ 0x5eed_9,
            step.wrapping_add(i as u64),
        ));
        let out = sample(&trainer.unet, &trainer.schedule, Some(&tc), None, &mut rng, None)?;
        images.push(signed_to_image(&out, trainer.unet.cfg.image_size));
    }
    let grid = image_grid(&images, 4);
    let path = samples_dir.join(format!("step_{step:07}.png"));
    grid.save_png(&path)
}
