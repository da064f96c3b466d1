//! Scratch SR ablation pilot (removed before release).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tripletgen::balance::{frame_weights, BalanceMode};
use tripletgen::data::*;
use tripletgen::diffusion::*;
use tripletgen::textlang::TokenVocab;

fn train_sr(
    ds: &Dataset,
    text_conditioned: bool,
    steps: u64,
    seed: u64,
) -> (Trainer, TokenVocab) {
    let token_vocab = TokenVocab::from_dataset(ds).unwrap();
    let dcfg = DenoiserConfig {
        variant: DenoiserVariant::SuperResolution { scale: 2 },
        image_size: 32,
        base_channels: 16,
        channel_mults: vec![1, 2],
        blocks_per_level: 1,
        attention_levels: vec![1],
        text_dim: 64,
        time_dim: 64,
        l_max: 8,
        vocab_size: token_vocab.size(),
        text_conditioned,
    };
    let unet = UNet::<f32>::new(dcfg, seed).unwrap();
    let schedule = make_schedule(ScheduleKind::Linear, 200, 1e-4, 0.05).unwrap();
    let set = TrainingSet::prepare(ds, &token_vocab, 8, 32, Some(2)).unwrap();
    let plan = frame_weights(ds, BalanceMode::Uniform).unwrap();
    let mut trainer = Trainer::new(unet, schedule, OptimizerKind::Adam, 2e-3, seed, 0.0);
    train_loop(&mut trainer, &set, &plan, steps, 4, |_| Ok(())).unwrap();
    (trainer, token_vocab)
}

fn eval_sr_mse(
    trainer: &Trainer,
    token_vocab: &TokenVocab,
    cfg: &ToyWorldConfig,
    n_pairs: usize,
) -> f64 {
    let vocab = cfg.vocab();
    let list = cfg.triplet_list(&vocab);
    let mut total = 0.0;
    for i in 0..n_pairs {
        let t = list[(i * 7) % list.len()];
        let (low, high) = render_toy_pair(&t, 777_000 + i as u64, cfg, 2).unwrap();
        let caption = triplet_caption(&t, &vocab).unwrap();
        let low_signed = image_to_signed(&low);
        let text_cond;
        let text = if trainer.unet.cfg.text_conditioned {
            text_cond = text_cond_for(&trainer.unet, token_vocab, &caption)
                .unwrap();

            Some(text_cond)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31_000 + i as u64);
        let out = sample(
            &trainer.unet,
            &trainer.schedule,
            text.as_ref(),
            Some(&low_signed),
            &mut rng,
            None,
        )
        .unwrap();
        let img = signed_to_image(&out, 32);
        total += img.mse(&high);
    }
    total / n_pairs as f64
}

fn bicubic_mse(cfg: &ToyWorldConfig, n_pairs: usize) -> f64 {
    let vocab = cfg.vocab();
    let list = cfg.triplet_list(&vocab);
    let mut total = 0.0;
    for i in 0..n_pairs {
        let t = list[(i * 7) % list.len()];
        let (low, high) = render_toy_pair(&t, 777_000 + i as u64, cfg, 2).unwrap();
        total += low.upscale_bicubic(2).mse(&high);
    }
    total / n_pairs as f64
}

#[test]
fn probe_sr_ablation_pilot() {
    use std::time::Instant;
    let cfg = ToyWorldConfig {
        image_size: 32,
        skew: 0.0,
        noise_level: 0.02,
        seed: 21,
        ..Default::default()
    };
    let ds = make_toy_dataset(&cfg, 1500).unwrap();
    let steps = 2500;
    let n_pairs = 24;

    println!("bicubic mse = {:.6}", bicubic_mse(&cfg, n_pairs));
    for seed in [1u64, 2] {
        let t0 = Instant::now();
        let (cond, vocab) = train_sr(&ds, true, steps, seed);
        let mse_cond = eval_sr_mse(&cond, &vocab, &cfg, n_pairs);
        let t1 = Instant::now();
        let (uncond, vocab_u) = train_sr(&ds, false, steps, seed);
        let mse_uncond = eval_sr_mse(&uncond, &vocab_u, &cfg, n_pairs);
        println!(
            "seed {seed}: cond={mse_cond:.6} ({:.0}s)  uncond={mse_uncond:.6} ({:.0}s)",
            t1.duration_since(t0).as_secs_f64(),
            t1.elapsed().as_secs_f64()
        );
    }
}
