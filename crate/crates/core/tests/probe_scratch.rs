//! Scratch measurements (removed before release).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripletgen::data::*;

#[test]
fn probe_oracle_roundtrip_and_noise_stats() {
    let cfg = ToyWorldConfig { image_size: 16, noise_level: 0.0, ..Default::default() };
    let vocab = cfg.vocab();
    let oracle = ToyOracle::new(&cfg).unwrap();

    // clean round trip at 16
    let mut worst_conf = 1.0f64;
    let mut fails = 0;
    for t in cfg.triplet_list(&vocab) {
        let img = render_toy(&t, 1234, &cfg).unwrap();
        let d = oracle.classify(&img);
        if d.triplet != t {
            fails += 1;
            println!("MISMATCH want {t:?} got {:?} conf {:.4}", d.triplet, d.confidence);
        }
        worst_conf = worst_conf.min(d.confidence);
    }
    println!("16px clean: fails={fails} worst_conf={worst_conf:.5}");

    // clean at 32
    let cfg32 = ToyWorldConfig { image_size: 32, noise_level: 0.0, ..Default::default() };
    let oracle32 = ToyOracle::new(&cfg32).unwrap();
    let mut fails32 = 0;
    let mut worst32 = 1.0f64;
    for t in cfg32.triplet_list(&vocab) {
        let img = render_toy(&t, 99, &cfg32).unwrap();
        let d = oracle32.classify(&img);
        if d.triplet != t {
            fails32 += 1;
        }
        worst32 = worst32.min(d.confidence);
    }
    println!("32px clean: fails={fails32} worst_conf={worst32:.5}");

    // noise 0.05 Monte Carlo at 16
    let cfgn = ToyWorldConfig { image_size: 16, noise_level: 0.05, ..Default::default() };
    let list = cfgn.triplet_list(&vocab);
    let mut ok = 0;
    let mut conf_sum = 0.0;
    let n = 1000;
    for i in 0..n {
        let t = list[i % list.len()];
        let img = render_toy(&t, 5000 + i as u64, &cfgn).unwrap();
        let d = oracle.classify(&img);
        if d.triplet == t {
            ok += 1;
        }
        conf_sum += d.confidence;
    }
    println!("16px noise=0.05: acc={:.4} mean_conf={:.4}", ok as f64 / n as f64, conf_sum / n as f64);

    // uniform noise images
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_conf = 0.0f64;
    let mut match_count = 0;
    for _ in 0..1000 {
        let mut img = Image::new(16, 16);
        img.data.iter_mut().for_each(|v| *v = rng.random::<f32>());
        let d = oracle.classify(&img);
        max_conf = max_conf.max(d.confidence);
        let prompt = list[rng.random_range(0..list.len())];
        if d.triplet == prompt {
            match_count += 1;
        }
    }
    println!("uniform noise: max_conf={max_conf:.5} chance_match={}/1000", match_count);

    // downsampled 32->16 decode (the base-stage training view)
    let mut fails_ds = 0;
    for t in cfg32.triplet_list(&vocab) {
        let img32 = render_toy(&t, 4321, &cfg32).unwrap();
        let img16 = img32.downsample_box(2);
        let d = oracle.classify(&img16);
        if d.triplet != t {
            fails_ds += 1;
            println!("DS MISMATCH want {t:?} got {:?}", d.triplet);
        }
    }
    println!("32->16 box-downsample decode: fails={fails_ds}");
}

#[test]
fn probe_training_throughput() {
    use std::time::Instant;
    use tripletgen::balance::{frame_weights, BalanceMode};
    use tripletgen::diffusion::*;
    use tripletgen::textlang::TokenVocab;

    let cfg = ToyWorldConfig { image_size: 32, skew: 1.2, noise_level: 0.02, seed: 5, ..Default::default() };
    let ds = make_toy_dataset(&cfg, 200).unwrap();
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
    let mut unet = UNet::<f32>::new(dcfg, 1).unwrap();
    println!("base params: {}", unet.param_count());
    let schedule = make_schedule(ScheduleKind::Cosine, 200, 1e-4, 0.02).unwrap();
    let set = TrainingSet::prepare(&ds, &token_vocab, 8, 16, None).unwrap();
    let plan = frame_weights(&ds, BalanceMode::InstrumentBalanced).unwrap();
    let mut trainer = Trainer::new(unet, schedule, OptimizerKind::Adam, 1e-3, 42, 0.0);

    let start = Instant::now();
    let steps = 30u64;
    let mut last = 0.0;
    train_loop(&mut trainer, &set, &plan, steps, 8, |info| {
        last = info.loss;
        Ok(())
    })
    .unwrap();
    let dt = start.elapsed().as_secs_f64();
    println!(
        "train: {steps} steps batch 8 in {dt:.2}s = {:.1} ms/step, last loss {last:.4}",
        dt / steps as f64 * 1000.0
    );

    // sampling throughput
    let start = Instant::now();
    let tc = text_cond_for(&trainer.unet, &set.token_vocab, "hook dissect liver").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let _ = sample(&trainer.unet, &trainer.schedule, Some(&tc), None, &mut rng, None).unwrap();
    println!("sample T=200: {:.2}s", start.elapsed().as_secs_f64());
}
