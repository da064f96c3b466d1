//! Text-conditioned attention U-Net noise predictor.
//!
//! Conditioning contract: the pooled text vector is added to the timestep
//! embedding before it modulates every residual block, and the full token
//! sequence attends into the feature maps via cross-attention at the
//! configured levels. Passing no text drops the text pathway entirely (used
//! for the unconditioned super-resolution variant and for classifier-free
//! guidance's null branch).
//!
//! The super-resolution variant takes the low-resolution image, bilinearly
//! upsamples it to the operating resolution, and channel-concatenates it with
//! x_t at the input layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::schedule::timestep_embedding;
use crate::error::{Error, Result};
use crate::nn::layers::{
    silu, silu_backward, upsample_bilinear, upsample_nearest_2x, upsample_nearest_2x_backward,
    Conv2d, Conv2dCtx, CrossAttention, CrossAttentionCtx, GroupNorm, GroupNormCtx, Linear,
    LinearCtx,
};
use crate::nn::tensor::{Param, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserVariant {
    Base,
    SuperResolution { scale: usize },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenoiserConfig {
    pub variant: DenoiserVariant,
    /// Operating resolution (the high resolution for the SR variant).
    pub image_size: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    /// Level indices (into `channel_mults`) where cross-attention applies.
    pub attention_levels: Vec<usize>,
    pub text_dim: usize,
    pub time_dim: usize,
    pub l_max: usize,
    /// Token table rows (tokenizer vocabulary size including UNK).
    pub vocab_size: usize,
    /// When false the model has no text parameters at all.
    pub text_conditioned: bool,
}

impl DenoiserConfig {
    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn in_channels(&self) -> usize {
        match self.variant {
            DenoiserVariant::Base => 3,
            DenoiserVariant::SuperResolution { .. } => 6,
        }
    }

    pub fn low_res_size(&self) -> Option<usize> {
        match self.variant {
            DenoiserVariant::Base => None,
            DenoiserVariant::SuperResolution { scale } => Some(self.image_size / scale),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.levels();
        if levels == 0 {
            return Err(Error::Config("channel_mults must be non-empty".into()));
        }
        if self.image_size % (1 << (levels - 1)) != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by 2^{}",
                self.image_size,
                levels - 1
            )));
        }
        if self.text_conditioned && self.attention_levels.is_empty() {
            return Err(Error::Config(
                "a text-conditioned denoiser needs at least one cross-attention level".into(),
            ));
        }
        if self.attention_levels.iter().any(|&l| l >= levels) {
            return Err(Error::Config("attention level out of range".into()));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even".into()));
        }
        if let DenoiserVariant::SuperResolution { scale } = self.variant {
            if scale < 2 || self.image_size % scale != 0 {
                return Err(Error::Config(format!(
                    "SR scale {scale} must divide image_size {}",
                    self.image_size
                )));
            }
        }
        if self.text_conditioned && (self.vocab_size == 0 || self.l_max == 0) {
            return Err(Error::Config("text conditioning needs vocab_size and l_max".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

struct ResBlock<T> {
    gn1: GroupNorm<T>,
    conv1: Conv2d<T>,
    cond_proj: Linear<T>,
    gn2: GroupNorm<T>,
    conv2: Conv2d<T>,
    skip: Option<Conv2d<T>>,
    cout: usize,
}

struct ResBlockCtx<T> {
    gn1: GroupNormCtx<T>,
    silu1_in: Vec<T>,
    conv1: Conv2dCtx<T>,
    cond_silu_in: Vec<T>,
    cond_proj: LinearCtx<T>,
    gn2: GroupNormCtx<T>,
    silu2_in: Vec<T>,
    conv2: Conv2dCtx<T>,
    skip: Option<Conv2dCtx<T>>,
}

impl<T: Real> ResBlock<T> {
    fn new(cin: usize, cout: usize, time_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            gn1: GroupNorm::new(cin),
            conv1: Conv2d::new(cin, cout, 3, 1, 1, rng),
            cond_proj: Linear::new(time_dim, cout, true, rng),
            gn2: GroupNorm::new(cout),
            conv2: Conv2d::new(cout, cout, 3, 1, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(cin, cout, 1, 1, 0, rng)),
            cout,
        }
    }

    fn forward(&self, x: &[T], h: usize, w: usize, cond: &[T]) -> (Vec<T>, ResBlockCtx<T>) {
        let (a, gn1_ctx) = self.gn1.forward(x);
        let (b, silu1_in) = silu(&a);
        let (mut c, conv1_ctx) = self.conv1.forward(&b, h, w);
        let (cond_act, cond_silu_in) = silu(cond);
        let (e, cond_ctx) = self.cond_proj.forward(&cond_act);
        for p in 0..h * w {
            for (o, &ev) in c[p * self.cout..(p + 1) * self.cout].iter_mut().zip(e.iter()) {
                *o += ev;
            }
        }
        let (f, gn2_ctx) = self.gn2.forward(&c);
        let (g, silu2_in) = silu(&f);
        let (hh, conv2_ctx) = self.conv2.forward(&g, h, w);
        let (mut y, skip_ctx) = match &self.skip {
            Some(sk) => {
                let (s, ctx) = sk.forward(x, h, w);
                (s, Some(ctx))
            }
            None => (x.to_vec(), None),
        };
        for (o, &hv) in y.iter_mut().zip(hh.iter()) {
            *o += hv;
        }
        (
            y,
            ResBlockCtx {
                gn1: gn1_ctx,
                silu1_in,
                conv1: conv1_ctx,
                cond_silu_in,
                cond_proj: cond_ctx,
                gn2: gn2_ctx,
                silu2_in,
                conv2: conv2_ctx,
                skip: skip_ctx,
            },
        )
    }

    /// Returns dx; accumulates the condition-vector gradient into `dcond`.
    fn backward(&mut self, ctx: &ResBlockCtx<T>, dy: &[T], dcond: &mut [T]) -> Vec<T> {
        let pixels = dy.len() / self.cout;
        let dg = self.conv2.backward(&ctx.conv2, dy);
        let mut df = vec![T::ZERO; dg.len()];
        silu_backward(&ctx.silu2_in, &dg, &mut df);
        let dc = self.gn2.backward(&ctx.gn2, &df);
        // cond bias add broadcast over pixels
        let mut de = vec![T::ZERO; self.cout];
        for p in 0..pixels {
            for (g, &d) in de.iter_mut().zip(dc[p * self.cout..].iter()) {
                *g += d;
            }
        }
        let dcond_act = self.cond_proj.backward(&ctx.cond_proj, &de);
        silu_backward(&ctx.cond_silu_in, &dcond_act, dcond);
        let db = self.conv1.backward(&ctx.conv1, &dc);
        let mut da = vec![T::ZERO; db.len()];
        silu_backward(&ctx.silu1_in, &db, &mut da);
        let mut dx = self.gn1.backward(&ctx.gn1, &da);
        match (&mut self.skip, &ctx.skip) {
            (Some(sk), Some(sctx)) => {
                let dskip = sk.backward(sctx, dy);
                for (o, &d) in dx.iter_mut().zip(dskip.iter()) {
                    *o += d;
                }
            }
            _ => {
                for (o, &d) in dx.iter_mut().zip(dy.iter()) {
                    *o += d;
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.gn1.visit_params(&format!("{prefix}.gn1"), f);
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.cond_proj.visit_params(&format!("{prefix}.cond"), f);
        self.gn2.visit_params(&format!("{prefix}.gn2"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        if let Some(s) = &mut self.skip {
            s.visit_params(&format!("{prefix}.skip"), f);
        }
    }
}

// ---------------------------------------------------------------------------
// U-Net
// ---------------------------------------------------------------------------

struct DownLevel<T> {
    blocks: Vec<(ResBlock<T>, Option<CrossAttention<T>>)>,
    down: Option<Conv2d<T>>,
}

struct UpLevel<T> {
    blocks: Vec<(ResBlock<T>, Option<CrossAttention<T>>)>,
    up: Option<Conv2d<T>>, // after nearest 2x, maps ch[l] -> ch[l-1]
}

pub struct UNet<T: Real> {
    pub cfg: DenoiserConfig,
    token_table: Option<Param<T>>,
    text_proj: Option<Linear<T>>,
    time_fc1: Linear<T>,
    time_fc2: Linear<T>,
    conv_in: Conv2d<T>,
    downs: Vec<DownLevel<T>>,
    mid1: ResBlock<T>,
    mid_attn: Option<CrossAttention<T>>,
    mid2: ResBlock<T>,
    ups: Vec<UpLevel<T>>,
    norm_out: GroupNorm<T>,
    conv_out: Conv2d<T>,
}

/// Text input to a forward pass: token embedding rows plus validity mask.
/// `token_ids` routes gradients into the learned token table.
#[derive(Debug, Clone)]
pub struct TextCond<T> {
    pub rows: Vec<T>, // [l, text_dim]
    pub mask: Vec<bool>,
    pub token_ids: Option<Vec<u32>>,
}

struct BlockRun<T> {
    res: ResBlockCtx<T>,
    attn: Option<CrossAttentionCtx<T>>,
    h: usize,
    w: usize,
    cin: usize,
    /// Index of the skip tensor this up-block consumed, if any.
    skip_taken: Option<(usize, usize)>, // (skip index, skip channels)
}

pub struct UNetCtx<T> {
    time_fc1: LinearCtx<T>,
    time_silu_in: Vec<T>,
    time_fc2: LinearCtx<T>,
    text_proj: Option<LinearCtx<T>>,
    text: Option<TextCtxSaved<T>>,
    conv_in: Conv2dCtx<T>,
    down_runs: Vec<Vec<BlockRun<T>>>,
    down_convs: Vec<Option<(Conv2dCtx<T>, usize, usize)>>, // ctx, h, w at input
    mid1: ResBlockCtx<T>,
    mid_attn: Option<CrossAttentionCtx<T>>,
    mid2: ResBlockCtx<T>,
    up_runs: Vec<Vec<BlockRun<T>>>,
    up_convs: Vec<Option<(Conv2dCtx<T>, usize, usize)>>, // ctx, h, w after upsample
    norm_out: GroupNormCtx<T>,
    silu_out_in: Vec<T>,
    conv_out: Conv2dCtx<T>,
    n_skips: usize,
}

struct TextCtxSaved<T> {
    rows: Vec<T>,
    mask: Vec<bool>,
    token_ids: Option<Vec<u32>>,
    valid_count: usize,
}

impl<T: Real> UNet<T> {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = cfg.levels();
        let ch: Vec<usize> = cfg.channel_mults.iter().map(|m| m * cfg.base_channels).collect();

        let (token_table, text_proj) = if cfg.text_conditioned {
            let std = (1.0 / cfg.text_dim as f64).sqrt();
            (
                Some(Param::new(Tensor::randn(
                    &[cfg.vocab_size, cfg.text_dim],
                    std,
                    &mut rng,
                ))),
                Some(Linear::new(cfg.text_dim, cfg.time_dim, false, &mut rng)),
            )
        } else {
            (None, None)
        };
        let time_fc1 = Linear::new(cfg.time_dim, cfg.time_dim, true, &mut rng);
        let time_fc2 = Linear::new(cfg.time_dim, cfg.time_dim, true, &mut rng);
        let conv_in = Conv2d::new(cfg.in_channels(), ch[0], 3, 1, 1, &mut rng);

        let mut downs = Vec::with_capacity(levels);
        for l in 0..levels {
            let mut blocks = Vec::with_capacity(cfg.blocks_per_level);
            for b in 0..cfg.blocks_per_level {
                let cin = if b == 0 {
                    if l == 0 {
                        ch[0]
                    } else {
                        ch[l - 1]
                    }
                } else {
                    ch[l]
                };
                let attn = (cfg.text_conditioned && cfg.attention_levels.contains(&l))
                    .then(|| CrossAttention::new(ch[l], cfg.text_dim, &mut rng));
                blocks.push((ResBlock::new(cin, ch[l], cfg.time_dim, &mut rng), attn));
            }
            let down = (l < levels - 1).then(|| Conv2d::new(ch[l], ch[l], 3, 2, 1, &mut rng));
            downs.push(DownLevel { blocks, down });
        }

        let ch_mid = ch[levels - 1];
        let mid1 = ResBlock::new(ch_mid, ch_mid, cfg.time_dim, &mut rng);
        let mid_attn = cfg
            .text_conditioned
            .then(|| CrossAttention::new(ch_mid, cfg.text_dim, &mut rng));
        let mid2 = ResBlock::new(ch_mid, ch_mid, cfg.time_dim, &mut rng);

        // up levels in processing order: levels-1 down to 0
        let mut ups = Vec::with_capacity(levels);
        for l in (0..levels).rev() {
            let mut blocks = Vec::with_capacity(cfg.blocks_per_level + 1);
            for b in 0..cfg.blocks_per_level + 1 {
                // skip channels follow the push order, popped in reverse
                let skip_ch = skip_channels_for(&ch, cfg.blocks_per_level, l, b);
                let attn = (cfg.text_conditioned && cfg.attention_levels.contains(&l))
                    .then(|| CrossAttention::new(ch[l], cfg.text_dim, &mut rng));
                blocks.push((
                    ResBlock::new(ch[l] + skip_ch, ch[l], cfg.time_dim, &mut rng),
                    attn,
                ));
            }
            let up = (l > 0).then(|| Conv2d::new(ch[l], ch[l - 1], 3, 1, 1, &mut rng));
            ups.push(UpLevel { blocks, up });
        }

        let norm_out = GroupNorm::new(ch[0]);
        let mut conv_out = Conv2d::new(ch[0], 3, 3, 1, 1, &mut rng);
        conv_out.zero_init();

        Ok(UNet {
            cfg,
            token_table,
            text_proj,
            time_fc1,
            time_fc2,
            conv_in,
            downs,
            mid1,
            mid_attn,
            mid2,
            ups,
            norm_out,
            conv_out,
        })
    }

    /// Embedding rows for token ids; masked slots are zero.
    pub fn embed_tokens(&self, ids: &[u32], mask: &[bool]) -> Result<Vec<T>> {
        let table = self
            .token_table
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no text pathway".into()))?;
        let d = self.cfg.text_dim;
        let mut rows = vec![T::ZERO; ids.len() * d];
        for (i, (&id, &m)) in ids.iter().zip(mask.iter()).enumerate() {
            if m {
                let id = id as usize;
                if id >= self.cfg.vocab_size {
                    return Err(Error::Lookup(format!("token id {id} outside table")));
                }
                rows[i * d..(i + 1) * d]
                    .copy_from_slice(&table.value.data[id * d..(id + 1) * d]);
            }
        }
        Ok(rows)
    }

    /// Snapshot of the learned token table as `f32`, for the analysis encoder.
    pub fn token_table_snapshot(&self) -> Option<Vec<f32>> {
        self.token_table
            .as_ref()
            .map(|t| t.value.data.iter().map(|v| v.to_f64() as f32).collect())
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.numel());
        n
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<T>)) {
        if let Some(t) = &mut self.token_table {
            f("text.table".to_string(), t);
        }
        if let Some(p) = &mut self.text_proj {
            p.visit_params("text.proj", f);
        }
        self.time_fc1.visit_params("time.fc1", f);
        self.time_fc2.visit_params("time.fc2", f);
        self.conv_in.visit_params("conv_in", f);
        for (l, level) in self.downs.iter_mut().enumerate() {
            for (b, (res, attn)) in level.blocks.iter_mut().enumerate() {
                res.visit_params(&format!("down.{l}.{b}"), f);
                if let Some(a) = attn {
                    a.visit_params(&format!("down.{l}.{b}.attn"), f);
                }
            }
            if let Some(d) = &mut level.down {
                d.visit_params(&format!("down.{l}.downconv"), f);
            }
        }
        self.mid1.visit_params("mid.0", f);
        if let Some(a) = &mut self.mid_attn {
            a.visit_params("mid.attn", f);
        }
        self.mid2.visit_params("mid.1", f);
        for (i, level) in self.ups.iter_mut().enumerate() {
            for (b, (res, attn)) in level.blocks.iter_mut().enumerate() {
                res.visit_params(&format!("up.{i}.{b}"), f);
                if let Some(a) = attn {
                    a.visit_params(&format!("up.{i}.{b}.attn"), f);
                }
            }
            if let Some(u) = &mut level.up {
                u.visit_params(&format!("up.{i}.upconv"), f);
            }
        }
        self.norm_out.visit_params("out.norm", f);
        self.conv_out.visit_params("out.conv", f);
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    /// Predict the noise in `x_t` (`[H*W, 3]` flattened, values around
    /// `[-1,1]`). For the SR variant, `lowres` is the raw low-resolution
    /// conditioning image in `[-1,1]`, upsampled and concatenated internally.
    pub fn forward(
        &self,
        x_t: &[T],
        lowres: Option<&[T]>,
        t: usize,
        text: Option<&TextCond<T>>,
    ) -> Result<(Vec<T>, UNetCtx<T>)> {
        let size = self.cfg.image_size;
        if x_t.len() != size * size * 3 {
            return Err(Error::Contract(format!(
                "x_t has {} values, expected {}",
                x_t.len(),
                size * size * 3
            )));
        }
        let x: Vec<T> = match (self.cfg.variant, lowres) {
            (DenoiserVariant::Base, None) => x_t.to_vec(),
            (DenoiserVariant::Base, Some(_)) => {
                return Err(Error::Contract("base variant takes no low-res input".into()))
            }
            (DenoiserVariant::SuperResolution { scale }, Some(lr)) => {
                let low = size / scale;
                if lr.len() != low * low * 3 {
                    return Err(Error::Contract(format!(
                        "low-res input has {} values, expected {}",
                        lr.len(),
                        low * low * 3
                    )));
                }
                let up = upsample_bilinear(lr, low, low, 3, scale);
                let mut cat = vec![T::ZERO; size * size * 6];
                for p in 0..size * size {
                    cat[p * 6..p * 6 + 3].copy_from_slice(&x_t[p * 3..p * 3 + 3]);
                    cat[p * 6 + 3..p * 6 + 6].copy_from_slice(&up[p * 3..p * 3 + 3]);
                }
                cat
            }
            (DenoiserVariant::SuperResolution { .. }, None) => {
                return Err(Error::Contract("SR variant requires a low-res input".into()))
            }
        };

        // condition vector: time MLP plus projected pooled text
        let sin: Vec<T> = timestep_embedding(t, self.cfg.time_dim)?
            .into_iter()
            .map(T::from_f64)
            .collect();
        let (h1, time_fc1_ctx) = self.time_fc1.forward(&sin);
        let (h1a, time_silu_in) = silu(&h1);
        let (mut cond, time_fc2_ctx) = self.time_fc2.forward(&h1a);

        let mut text_proj_ctx = None;
        let mut text_saved = None;
        if let Some(tc) = text {
            let proj = self
                .text_proj
                .as_ref()
                .ok_or_else(|| Error::Contract("model has no text pathway".into()))?;
            if tc.rows.len() != tc.mask.len() * self.cfg.text_dim {
                return Err(Error::Contract("text rows/mask shape mismatch".into()));
            }
            let valid: Vec<usize> =
                (0..tc.mask.len()).filter(|&i| tc.mask[i]).collect();
            let mut pooled = vec![T::ZERO; self.cfg.text_dim];
            if !valid.is_empty() {
                for &i in &valid {
                    for (o, &v) in pooled
                        .iter_mut()
                        .zip(tc.rows[i * self.cfg.text_dim..].iter())
                    {
                        *o += v;
                    }
                }
                let inv = T::from_f64(1.0 / valid.len() as f64);
                pooled.iter_mut().for_each(|v| *v *= inv);
            }
            let (tp, tp_ctx) = proj.forward(&pooled);
            for (c, &v) in cond.iter_mut().zip(tp.iter()) {
                *c += v;
            }
            text_proj_ctx = Some(tp_ctx);
            text_saved = Some(TextCtxSaved {
                rows: tc.rows.clone(),
                mask: tc.mask.to_vec(),
                token_ids: tc.token_ids.clone(),
                valid_count: valid.len(),
            });
        }

        let empty_mask: Vec<bool> = Vec::new();
        let (text_rows, text_mask): (&[T], &[bool]) = match &text_saved {
            Some(ts) => (&ts.rows, &ts.mask),
            None => (&[], &empty_mask),
        };

        // down path
        let (mut h, conv_in_ctx) = self.conv_in.forward(&x, size, size);
        let mut cur_hw = (size, size);
        let mut skips: Vec<(Vec<T>, usize)> = vec![(h.clone(), self.downs_ch(0))];
        let mut down_runs = Vec::with_capacity(self.downs.len());
        let mut down_convs = Vec::with_capacity(self.downs.len());
        for (l, level) in self.downs.iter().enumerate() {
            let mut runs = Vec::with_capacity(level.blocks.len());
            for (res, attn) in &level.blocks {
                let cin = h.len() / (cur_hw.0 * cur_hw.1);
                let (mut out, res_ctx) = res.forward(&h, cur_hw.0, cur_hw.1, &cond);
                let attn_ctx = match attn {
                    Some(a) => {
                        let (o, ctx) = a.forward(&out, text_rows, text_mask);
                        out = o;
                        Some(ctx)
                    }
                    None => None,
                };
                runs.push(BlockRun {
                    res: res_ctx,
                    attn: attn_ctx,
                    h: cur_hw.0,
                    w: cur_hw.1,
                    cin,
                    skip_taken: None,
                });
                h = out;
                skips.push((h.clone(), self.downs_ch(l)));
            }
            down_runs.push(runs);
            match &level.down {
                Some(dc) => {
                    let (out, ctx) = dc.forward(&h, cur_hw.0, cur_hw.1);
                    down_convs.push(Some((ctx, cur_hw.0, cur_hw.1)));
                    h = out;
                    cur_hw = (cur_hw.0 / 2, cur_hw.1 / 2);
                    skips.push((h.clone(), self.downs_ch(l)));
                }
                None => down_convs.push(None),
            }
        }
        let n_skips = skips.len();

        // middle

        let (m1, mid1_ctx) = self.mid1.forward(&h, cur_hw.0, cur_hw.1, &cond);
        let (m1, mid_attn_ctx) = match &self.mid_attn {
            Some(a) => {
                let (o, ctx) = a.forward(&m1, text_rows, text_mask);
                (o, Some(ctx))
            }
            None => (m1, None),
        };
        let (m2, mid2_ctx) = self.mid2.forward(&m1, cur_hw.0, cur_hw.1, &cond);
        h = m2;

        // up path
        let mut up_runs = Vec::with_capacity(self.ups.len());
        let mut up_convs = Vec::with_capacity(self.ups.len());
        for level in &self.ups {
            let mut runs = Vec::with_capacity(level.blocks.len());
            for (res, attn) in &level.blocks {
                let (skip, skip_ch) = skips.pop().expect("skip available");
                let skip_idx = skips.len();
                let cur_ch = h.len() / (cur_hw.0 * cur_hw.1);
                let mut cat = vec![T::ZERO; cur_hw.0 * cur_hw.1 * (cur_ch + skip_ch)];
                for p in 0..cur_hw.0 * cur_hw.1 {
                    cat[p * (cur_ch + skip_ch)..p * (cur_ch + skip_ch) + cur_ch]
                        .copy_from_slice(&h[p * cur_ch..(p + 1) * cur_ch]);
                    cat[p * (cur_ch + skip_ch) + cur_ch..(p + 1) * (cur_ch + skip_ch)]
                        .copy_from_slice(&skip[p * skip_ch..(p + 1) * skip_ch]);
                }
                let (mut out, res_ctx) = res.forward(&cat, cur_hw.0, cur_hw.1, &cond);
                let attn_ctx = match attn {
                    Some(a) => {
                        let (o, ctx) = a.forward(&out, text_rows, text_mask);
                        out = o;
                        Some(ctx)
                    }
                    None => None,
                };
                runs.push(BlockRun {
                    res: res_ctx,
                    attn: attn_ctx,
                    h: cur_hw.0,
                    w: cur_hw.1,
                    cin: cur_ch + skip_ch,
                    skip_taken: Some((skip_idx, skip_ch)),
                });
                h = out;
            }
            match &level.up {
                Some(uc) => {
                    let cur_ch = h.len() / (cur_hw.0 * cur_hw.1);
                    let upsampled = upsample_nearest_2x(&h, cur_hw.0, cur_hw.1, cur_ch);
                    cur_hw = (cur_hw.0 * 2, cur_hw.1 * 2);
                    let (out, ctx) = uc.forward(&upsampled, cur_hw.0, cur_hw.1);
                    up_convs.push(Some((ctx, cur_hw.0, cur_hw.1)));
                    h = out;
                }
                None => up_convs.push(None),
            }
            up_runs.push(runs);
        }
        debug_assert!(skips.is_empty(), "all skips consumed");

        let (n, norm_out_ctx) = self.norm_out.forward(&h);
        let (na, silu_out_in) = silu(&n);
        let (eps_hat, conv_out_ctx) = self.conv_out.forward(&na, size, size);

        Ok((
            eps_hat,
            UNetCtx {
                time_fc1: time_fc1_ctx,
                time_silu_in,
                time_fc2: time_fc2_ctx,
                text_proj: text_proj_ctx,
                text: text_saved,
                conv_in: conv_in_ctx,
                down_runs,
                down_convs,
                mid1: mid1_ctx,
                mid_attn: mid_attn_ctx,
                mid2: mid2_ctx,

                up_runs,
                up_convs,
                norm_out: norm_out_ctx,
                silu_out_in,
                conv_out: conv_out_ctx,
                n_skips,

            },
        ))
    }

    fn downs_ch(&self, level: usize) -> usize {
        self.cfg.channel_mults[level] * self.cfg.base_channels
    }

    /// Accumulate parameter gradients for one sample. Input-image gradients
    /// are not propagated (the corruption is data, not parameters).
    pub fn backward(&mut self, ctx: &UNetCtx<T>, d_eps: &[T]) {
        let mut dcond = vec![T::ZERO; self.cfg.time_dim];
        let mut dtext_rows: Vec<T> =
            ctx.text.as_ref().map(|ts| vec![T::ZERO; ts.rows.len()]).unwrap_or_default();

        let dna = self.conv_out.backward(&ctx.conv_out, d_eps);
        let mut dn = vec![T::ZERO; dna.len()];
        silu_backward(&ctx.silu_out_in, &dna, &mut dn);
        let mut dh = self.norm_out.backward(&ctx.norm_out, &dn);

        let mut dskips: Vec<Option<Vec<T>>> = (0..ctx.n_skips).map(|_| None).collect();

        // up path, reversed
        for (i, level) in self.ups.iter_mut().enumerate().rev() {
            if let Some((uc_ctx, uh, uw)) = &ctx.up_convs[i] {
                let up = level.up.as_mut().expect("upconv exists");
                let dup = up.backward(uc_ctx, &dh);
                let cur_ch = dup.len() / (uh * uw);
                dh = upsample_nearest_2x_backward(&dup, uh / 2, uw / 2, cur_ch);
            }
            for (b, (res, attn)) in level.blocks.iter_mut().enumerate().rev() {
                let run = &ctx.up_runs[i][b];
                if let (Some(a), Some(actx)) = (attn.as_mut(), run.attn.as_ref()) {
                    let (dx, dtext) = a.backward(actx, &dh);
                    dh = dx;
                    add_into(&mut dtext_rows, &dtext);
                }
                let dcat = res.backward(&run.res, &dh, &mut dcond);
                let (skip_idx, skip_ch) = run.skip_taken.expect("up block consumed a skip");
                let cur_ch = run.cin - skip_ch;
                let mut dcur = vec![T::ZERO; run.h * run.w * cur_ch];
                let mut dskip = vec![T::ZERO; run.h * run.w * skip_ch];
                for p in 0..run.h * run.w {
                    dcur[p * cur_ch..(p + 1) * cur_ch]
                        .copy_from_slice(&dcat[p * run.cin..p * run.cin + cur_ch]);
                    dskip[p * skip_ch..(p + 1) * skip_ch]
                        .copy_from_slice(&dcat[p * run.cin + cur_ch..(p + 1) * run.cin]);
                }
                dskips[skip_idx] = Some(dskip);
                dh = dcur;
            }
        }

        // middle, reversed
        dh = self.mid2.backward(&ctx.mid2, &dh, &mut dcond);
        if let (Some(a), Some(actx)) = (self.mid_attn.as_mut(), ctx.mid_attn.as_ref()) {
            let (dx, dtext) = a.backward(actx, &dh);
            dh = dx;
            add_into(&mut dtext_rows, &dtext);
        }
        dh = self.mid1.backward(&ctx.mid1, &dh, &mut dcond);

        // down path, reversed; add stored skip grads at their push points
        let mut skip_cursor = ctx.n_skips;
        for (l, level) in self.downs.iter_mut().enumerate().rev() {
            if ctx.down_convs[l].is_some() {
                skip_cursor -= 1;
                if let Some(ds) = &dskips[skip_cursor] {
                    for (o, &d) in dh.iter_mut().zip(ds.iter()) {
                        *o += d;
                    }
                }
                let (dc_ctx, _, _) = ctx.down_convs[l].as_ref().unwrap();
                let down = level.down.as_mut().expect("downconv exists");
                dh = down.backward(dc_ctx, &dh);
            }
            for (b, (res, attn)) in level.blocks.iter_mut().enumerate().rev() {
                skip_cursor -= 1;
                if let Some(ds) = &dskips[skip_cursor] {
                    for (o, &d) in dh.iter_mut().zip(ds.iter()) {
                        *o += d;
                    }
                }
                let run = &ctx.down_runs[l][b];
                if let (Some(a), Some(actx)) = (attn.as_mut(), run.attn.as_ref()) {
                    let (dx, dtext) = a.backward(actx, &dh);
                    dh = dx;
                    add_into(&mut dtext_rows, &dtext);
                }
                dh = res.backward(&run.res, &dh, &mut dcond);
            }
        }
        // conv_in skip (index 0)
        skip_cursor -= 1;
        debug_assert_eq!(skip_cursor, 0);
        if let Some(ds) = &dskips[0] {
            for (o, &d) in dh.iter_mut().zip(ds.iter()) {
                *o += d;
            }
        }
        let _ = self.conv_in.backward(&ctx.conv_in, &dh);

        // condition vector: text projection then time MLP
        if let (Some(proj), Some(tp_ctx), Some(ts)) =
            (self.text_proj.as_mut(), ctx.text_proj.as_ref(), ctx.text.as_ref())
        {
            let dpooled = proj.backward(tp_ctx, &dcond);
            if ts.valid_count > 0 {
                let inv = T::from_f64(1.0 / ts.valid_count as f64);
                let d = self.cfg.text_dim;
                for (i, &m) in ts.mask.iter().enumerate() {
                    if m {
                        for (o, &dp) in
                            dtext_rows[i * d..(i + 1) * d].iter_mut().zip(dpooled.iter())
                        {
                            *o += dp * inv;
                        }
                    }
                }
            }
        }
        self.scatter_text_grad(ctx, &dtext_rows);
        let dh1a = self.time_fc2.backward(&ctx.time_fc2, &dcond);
        let mut dh1 = vec![T::ZERO; dh1a.len()];
        silu_backward(&ctx.time_silu_in, &dh1a, &mut dh1);
        let _ = self.time_fc1.backward(&ctx.time_fc1, &dh1);
    }

    /// Scatter the accumulated token-row gradient into the learned table.
    fn scatter_text_grad(&mut self, ctx: &UNetCtx<T>, drows: &[T]) {
        let (Some(table), Some(ts)) = (self.token_table.as_mut(), ctx.text.as_ref()) else {
            return;
        };
        let Some(ids) = &ts.token_ids else {
            return;
        };
        let d = self.cfg.text_dim;
        for (i, (&id, &m)) in ids.iter().zip(ts.mask.iter()).enumerate() {
            if m {
                let row = &mut table.grad.data[id as usize * d..(id as usize + 1) * d];
                for (g, &dr) in row.iter_mut().zip(drows[i * d..(i + 1) * d].iter()) {
                    *g += dr;
                }
            }
        }
    }
}

fn add_into<T: Real>(acc: &mut [T], delta: &[T]) {
    for (a, &d) in acc.iter_mut().zip(delta.iter()) {
        *a += d;
    }
}

fn skip_channels_for(
    ch: &[usize],
    blocks_per_level: usize,
    level: usize,
    block_in_level: usize,
) -> usize {
    // Reconstruct the channel count of the skip this up-block pops. Push
    // order: conv_in (ch[0]), then per level l: B blocks (ch[l]) and, below
    // the last level, one downconv (ch[l]). Pops happen in reverse.
    let levels = ch.len();
    let mut pushes: Vec<usize> = vec![ch[0]];
    for l in 0..levels {
        for _ in 0..blocks_per_level {
            pushes.push(ch[l]);
        }
        if l < levels - 1 {
            pushes.push(ch[l]);
        }
    }
    // up levels run from levels-1 down to `level`; blocks consumed so far:
    let consumed = (levels - 1 - level) * (blocks_per_level + 1) + block_in_level;
    pushes[pushes.len() - 1 - consumed]
}
