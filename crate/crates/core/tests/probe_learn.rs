//! Scratch learning-rate calibration (removed before release).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tripletgen::balance::{frame_weights, BalanceMode};
use tripletgen::data::*;
use tripletgen::diffusion::*;
use tripletgen::eval::oracle_alignment;
use tripletgen::textlang::TokenVocab;

#[test]
fn probe_short_training_learns_something() {
    use std::time::Instant;
    let cfg = ToyWorldConfig {
        image_size: 32,
        skew: 0.0,
        noise_level: 0.02,
        seed: 5,
        ..Default::default()
    };
    let ds = make_toy_dataset(&cfg, 960).unwrap();
    let token_vocab = TokenVocab::from_dataset(&ds).unwrap();

    let dcfg = DenoiserConfig {
        variant: DenoiserVariant::Base,
        image_size: 16,
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
    println!("alpha_bar_T = {:.5}", schedule.alpha_bar[199]);
    let set = TrainingSet::prepare(&ds, &token_vocab, 8, 16, None).unwrap();
    let plan = frame_weights(&ds, BalanceMode::Uniform).unwrap();
    let mut trainer = Trainer::new(unet, schedule, OptimizerKind::Adam, 2e-3, 42, 0.0);

    let start = Instant::now();
    let mut losses = Vec::new();
    train_loop(&mut trainer, &set, &plan, 3000, 8, |info| {
        if info.step % 500 == 0 {
            losses.push((info.step, info.loss));
        }
        Ok(())
    })
    .unwrap();
    println!("3000 steps in {:.1}s, losses: {losses:?}", start.elapsed().as_secs_f64());

    // sample 2 images for each of 8 triplets spread over the grid
    let vocab = cfg.vocab();
    let list = cfg.triplet_list(&vocab);
    let mut images = Vec::new();
    let mut prompts = Vec::new();
    let t0 = Instant::now();
    for (k, t) in list.iter().step_by(6).enumerate() {
        let caption = triplet_caption(t, &vocab).unwrap();
        for rep in 0..2 {
            let tc = text_cond_for(&trainer.unet, &token_vocab, &caption).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(900 + (k * 2 + rep) as u64);
            let out = sample(&trainer.unet, &trainer.schedule, Some(&tc), None, &mut rng, None)
                .unwrap();
            images.push(signed_to_image(&out, 16));
            prompts.push(caption.clone());
        }
    }
    println!("sampled {} images in {:.1}s", images.len(), t0.elapsed().as_secs_f64());
    let align = oracle_alignment(&images, &prompts, &cfg).unwrap();
    println!("after 3000 steps: {align:?}");
}
