//! Training: ε-prediction MSE with per-step derived seeds, so an interrupted
//! run resumed from a checkpoint reproduces the uninterrupted run exactly.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::balance::{sample_indices, SamplingPlan};
use crate::data::Dataset;
use crate::diffusion::schedule::{q_sample, NoiseSchedule};
use crate::diffusion::unet::{TextCond, UNet};
use crate::error::{Error, Result};
use crate::nn::optim::Optimizer;
use crate::nn::Real;
use crate::textlang::{frame_tokens, TokenVocab};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seed for the given training step; depends only on (base seed, step).
pub fn step_seed(base: u64, step: u64) -> u64 {
    splitmix64(base ^ step.wrapping_mul(0x2545f4914f6cdd1d))
}

/// One prepared training example: image in `[-1,1]` at the operating
/// resolution, optional low-res conditioning, and tokenized caption.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x0: Vec<f32>,
    pub lowres: Option<Vec<f32>>,
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub caption: String,
}

/// A minibatch view over prepared items.
#[derive(Debug, Clone)]
pub struct DiffusionBatch<'a> {
    pub items: Vec<&'a TrainItem>,
}

/// Dataset prepared for one stage: resized, range-converted, tokenized.
pub struct TrainingSet {
    pub items: Vec<TrainItem>,
    pub token_vocab: TokenVocab,
}

pub fn to_signed(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&x| 2.0 * x - 1.0).collect()
}

impl TrainingSet {
    /// `operating_size` is the denoiser resolution; `sr_scale` switches on
    /// low/high pair preparation (low-res = box-downsampled high-res).
    pub fn prepare(
        dataset: &Dataset,
        token_vocab: &TokenVocab,
        l_max: usize,
        operating_size: usize,
        sr_scale: Option<usize>,
    ) -> Result<Self> {
        let mut items = Vec::with_capacity(dataset.n());
        for frame in &dataset.frames {
            let high = frame.image.resize(operating_size, operating_size);
            let lowres = match sr_scale {
                Some(s) => Some(to_signed(&high.downsample_box(s).data)),
                None => None,
            };
            let (caption, ids, mask) = frame_tokens(frame, &dataset.vocab, token_vocab, l_max)?;
            items.push(TrainItem { x0: to_signed(&high.data), lowres, ids, mask, caption });
        }
        Ok(TrainingSet { items, token_vocab: token_vocab.clone() })
    }
}

/// Test seam: anything that maps (x_t, t) to a noise estimate.
pub trait NoisePredictor<T: Real> {
    fn predict(
        &mut self,
        x_t: &[T],
        lowres: Option<&[T]>,
        t: usize,
        item_index: usize,
    ) -> Result<Vec<T>>;
}

/// The training objective for a fixed draw of timesteps and noises: mean over
/// items of the per-item MSE between ε and the prediction.
pub fn batch_loss<T: Real, P: NoisePredictor<T>>(
    predictor: &mut P,
    x0s: &[Vec<T>],
    lowres: &[Option<Vec<T>>],
    ts: &[usize],
    noises: &[Vec<T>],
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..x0s.len() {
        let x_t = q_sample(&x0s[i], ts[i], &noises[i], schedule)?;
        let eps_hat = predictor.predict(&x_t, lowres[i].as_deref(), ts[i], i)?;
        let numel = eps_hat.len() as f64;
        let mut item = 0.0;
        for (a, b) in eps_hat.iter().zip(noises[i].iter()) {
            let d = a.to_f64() - b.to_f64();
            item += d * d;
        }
        total += item / numel;
    }
    Ok(total / x0s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adafactor,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "adafactor" => Ok(OptimizerKind::Adafactor),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

pub struct Trainer {
    pub unet: UNet<f32>,
    pub schedule: NoiseSchedule,
    pub opt: Box<dyn Optimizer<f32>>,
    pub optimizer_kind: OptimizerKind,
    pub seed: u64,
    pub step: u64,
    /// Probability of dropping the text condition per item (classifier-free
    /// guidance training). Zero disables the draw entirely.
    pub null_dropout: f64,
    loss_window: VecDeque<(u64, f64)>,
    last_ts: Vec<usize>,
}

impl Trainer {
    pub fn new(
        unet: UNet<f32>,
        schedule: NoiseSchedule,
        optimizer_kind: OptimizerKind,
        lr: f64,
        seed: u64,
        null_dropout: f64,
    ) -> Self {
        let opt: Box<dyn Optimizer<f32>> = match optimizer_kind {
            OptimizerKind::Adam => Box::new(crate::nn::Adam::new(lr)),
            OptimizerKind::Adafactor => Box::new(crate::nn::Adafactor::new(lr)),
        };
        Trainer {
            unet,
            schedule,
            opt,
            optimizer_kind,
            seed,
            step: 0,
            null_dropout,
            loss_window: VecDeque::with_capacity(64),
            last_ts: Vec::new(),
        }
    }

    /// One optimizer update over a batch. Samples t ~ U[1,T] and ε ~ N(0,I)
    /// per item from `rng`, accumulates gradients of the mean ε-MSE, applies
    /// the update, and returns the scalar loss.
    pub fn training_step(&mut self, batch: &DiffusionBatch, rng: &mut ChaCha8Rng) -> Result<f64> {
        let b = batch.items.len();
        if b == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let t_count = self.schedule.t_count();
        let mut ts = Vec::with_capacity(b);
        let mut noises: Vec<Vec<f32>> = Vec::with_capacity(b);
        let mut drop_text = Vec::with_capacity(b);
        for item in &batch.items {
            let t: usize = rng.random_range(1..=t_count);
            ts.push(t);
            let eps: Vec<f32> = (0..item.x0.len())
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    v as f32
                })
                .collect();
            noises.push(eps);
            drop_text.push(self.null_dropout > 0.0 && rng.random::<f64>() < self.null_dropout);
        }

        self.unet.zero_grads();
        let mut total = 0.0f64;
        for (i, item) in batch.items.iter().enumerate() {
            let x_t = q_sample(&item.x0, ts[i], &noises[i], &self.schedule)?;
            let text = if self.unet.cfg.text_conditioned && !drop_text[i] {
                let rows = self.unet.embed_tokens(&item.ids, &item.mask)?;
                Some(TextCond {
                    rows,
                    mask: item.mask.clone(),
                    token_ids: Some(item.ids.clone()),
                })
            } else {
                None
            };
            let (eps_hat, ctx) =
                self.unet.forward(&x_t, item.lowres.as_deref(), ts[i], text.as_ref())?;
            let numel = eps_hat.len() as f64;
            let mut item_loss = 0.0f64;
            let scale = (2.0 / (numel * b as f64)) as f32;
            let mut d_eps = Vec::with_capacity(eps_hat.len());
            for (a, e) in eps_hat.iter().zip(noises[i].iter()) {
                let d = a - e;
                item_loss += (d as f64) * (d as f64);
                d_eps.push(scale * d);
            }
            total += item_loss / numel;
            self.unet.backward(&ctx, &d_eps);
        }
        let loss = total / b as f64;

        self.last_ts = ts;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: recent t values {:?}, loss window {:?}",
                self.step, self.last_ts, self.loss_window
            )));
        }

        self.opt.begin_step();
        let opt = &mut self.opt;
        let mut slot = 0;
        self.unet.visit_params(&mut |_, p| {
            opt.update(slot, p);
            slot += 1;
        });
        self.step += 1;
        if self.loss_window.len() == 50 {
            self.loss_window.pop_front();
        }
        self.loss_window.push_back((self.step, loss));
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Drive a trainer for `steps` optimizer updates, sampling frames from the
/// plan with per-step derived seeds. The callback fires after every step.
pub fn train_loop<F: FnMut(StepInfo) -> Result<()>>(
    trainer: &mut Trainer,
    set: &TrainingSet,
    plan: &SamplingPlan,
    steps: u64,
    batch_size: usize,
    mut on_step: F,
) -> Result<()> {
    if set.items.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if plan.frame_weights.len() != set.items.len() {
        return Err(Error::Contract(format!(
            "plan covers {} frames, training set has {}",
            plan.frame_weights.len(),
            set.items.len()
        )));
    }
    let target = trainer.step + steps;
    while trainer.step < target {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(trainer.seed, trainer.step));
        let indices = sample_indices(plan, &mut rng, batch_size);
        let batch = DiffusionBatch { items: indices.iter().map(|&i| &set.items[i]).collect() };
        let loss = trainer.training_step(&batch, &mut rng)?;
        on_step(StepInfo { step: trainer.step, loss, lr: trainer.opt.learning_rate() })?;
    }
    Ok(())
}
