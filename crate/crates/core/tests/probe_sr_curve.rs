//! Scratch SR learning-curve measurement (removed before release).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tripletgen::balance::{frame_weights, BalanceMode};
use tripletgen::data::*;
use tripletgen::diffusion::*;
use tripletgen::textlang::TokenVocab;

fn eval_mse(trainer: &Trainer, token_vocab: &TokenVocab, cfg: &ToyWorldConfig, n: usize) -> f64 {
    let vocab = cfg.vocab();
    let list = cfg.triplet_list(&vocab);
    let mut total = 0.0;
    for i in 0..n {
        let t = list[(i * 7) % list.len()];
        let (low, high) = render_toy_pair(&t, 777_000 + i as u64, cfg, 2).unwrap();
        let caption = triplet_caption(&t, &vocab).unwrap();
        let low_signed = image_to_signed(&low);
        let text = trainer
            .unet
            .cfg
            .text_conditioned
            .then(|| text_cond_for(&trainer.unet, token_vocab, &caption).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(31_000 + i as u64);
        let out = sample(&trainer.unet, &trainer.schedule, text.as_ref(), Some(&low_signed), &mut rng, None)
            .unwrap();
        total += signed_to_image(&out, 32).mse(&high);
    }
    total / n as f64
}

#[test]
fn probe_sr_learning_curve() {
    let cfg = ToyWorldConfig {
        image_size: 32,
        skew: 0.0,
        noise_level: 0.02,
        seed: 21,
        ..Default::default()
    };
    let ds = make_toy_dataset(&cfg, 1500).unwrap();
    let token_vocab = TokenVocab::from_dataset(&ds).unwrap();
    let vocab = cfg.vocab();
    let list = cfg.triplet_list(&vocab);

    let bicubic: f64 = (0..20)
        .map(|i| {
            let t = list[(i * 7) % list.len()];
            let (low, high) = render_toy_pair(&t, 777_000 + i as u64, &cfg, 2).unwrap();
            low.upscale_bicubic(2).mse(&high)
        })
        .sum::<f64>()
        / 20.0;
    println!("bicubic = {bicubic:.5}");

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
        text_conditioned: true,
    };
    let unet = UNet::<f32>::new(dcfg, 1).unwrap();
    let schedule = make_schedule(ScheduleKind::Linear, 200, 1e-4, 0.05).unwrap();
    let set = TrainingSet::prepare(&ds, &token_vocab, 8, 32, Some(2)).unwrap();
    let plan = frame_weights(&ds, BalanceMode::Uniform).unwrap();
    let mut trainer = Trainer::new(unet, schedule, OptimizerKind::Adam, 2e-3, 1, 0.0);

    for stage in 0..4 {
        train_loop(&mut trainer, &set, &plan, 2000, 4, |_| Ok(())).unwrap();
        let mse = eval_mse(&trainer, &token_vocab, &cfg, 20);
        println!("steps {}: cond mse = {mse:.5}", (stage + 1) * 2000);
        // dump one sample for visual inspection
        let t = list[7];
        let (low, high) = render_toy_pair(&t, 777_007, &cfg, 2).unwrap();
        let caption = triplet_caption(&t, &vocab).unwrap();
        let text = text_cond_for(&trainer.unet, &token_vocab, &caption).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31_007);
        let out = sample(&trainer.unet, &trainer.schedule, Some(&text), Some(&image_to_signed(&low)), &mut rng, None)
            .unwrap();
        let img = signed_to_image(&out, 32);
        let grid = tripletgen::viz::image_grid(&[low.upscale_bicubic(2), img, high], 3);
        grid.save_png(std::path::Path::new(&format!("/tmp/sr_curve_{}.png", (stage + 1) * 2000)))
            .unwrap();
    }
}
