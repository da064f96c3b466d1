//! Layers with explicit forward/backward passes.
//!
//! Feature maps are `[H*W, C]` (pixel-major, channels contiguous). Conv
//! weights are stored `[k*k*cin, cout]` so the forward pass is one im2col
//! gather plus one matmul. Every `forward` returns the context its `backward`
//! consumes; gradients accumulate into the owning layer's `Param` buffers.

use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_acc, matmul_at_b_acc, Param, Real, Tensor};

fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// x * sigmoid(x), elementwise. Returns (output, saved input).
pub fn silu<T: Real>(x: &[T]) -> (Vec<T>, Vec<T>) {
    let y = x.iter().map(|&v| v * sigmoid(v)).collect();
    (y, x.to_vec())
}

pub fn silu_backward<T: Real>(saved_x: &[T], dy: &[T], dx: &mut [T]) {
    for ((&x, &g), d) in saved_x.iter().zip(dy.iter()).zip(dx.iter_mut()) {
        let s = sigmoid(x);
        *d += g * (s * (T::ONE + x * (T::ONE - s)));
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Param<T>, // [in, out]
    pub b: Option<Param<T>>,
    pub d_in: usize,
    pub d_out: usize,
}

pub struct LinearCtx<T> {
    x: Vec<T>,
    rows: usize,
}

impl<T: Real> Linear<T> {
    pub fn new(d_in: usize, d_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / d_in as f64).sqrt();
        Linear {
            w: Param::new(Tensor::randn(&[d_in, d_out], std, rng)),
            b: bias.then(|| Param::new(Tensor::zeros(&[d_out]))),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LinearCtx<T>) {
        let rows = x.len() / self.d_in;
        let mut y = vec![T::ZERO; rows * self.d_out];
        matmul_acc(x, &self.w.value.data, &mut y, rows, self.d_in, self.d_out);
        if let Some(b) = &self.b {
            for r in 0..rows {
                for (o, &bv) in y[r * self.d_out..(r + 1) * self.d_out]
                    .iter_mut()
                    .zip(b.value.data.iter())
                {
                    *o += bv;
                }
            }
        }
        (y, LinearCtx { x: x.to_vec(), rows })
    }

    /// Accumulates weight grads and returns dx.
    pub fn backward(&mut self, ctx: &LinearCtx<T>, dy: &[T]) -> Vec<T> {
        let rows = ctx.rows;
        matmul_at_b_acc(&ctx.x, dy, &mut self.w.grad.data, rows, self.d_in, self.d_out);
        if let Some(b) = &mut self.b {
            for r in 0..rows {
                for (g, &d) in b.grad.data.iter_mut().zip(dy[r * self.d_out..].iter()) {
                    *g += d;
                }
            }
        }
        // dx = dy · wᵀ
        let wt = transpose(&self.w.value.data, self.d_in, self.d_out);
        let mut dx = vec![T::ZERO; rows * self.d_in];
        matmul_acc(dy, &wt, &mut dx, rows, self.d_out, self.d_in);
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.w"), &mut self.w);
        if let Some(b) = &mut self.b {
            f(format!("{prefix}.b"), b);
        }
    }
}

fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::ZERO; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub w: Param<T>, // [k*k*cin, cout]
    pub b: Param<T>, // [cout]
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCtx<T> {
    cols: Vec<T>, // [oh*ow, k*k*cin]
    h: usize,
    w_in: usize,
    oh: usize,
    ow: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // variance-scaling init over fan-in
        let std = (2.0 / (k * k * cin) as f64).sqrt();
        Conv2d {
            w: Param::new(Tensor::randn(&[k * k * cin, cout], std, rng)),
            b: Param::new(Tensor::zeros(&[cout])),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    /// Zero all weights; used for the final output projection.
    pub fn zero_init(&mut self) {
        self.w.value.fill(T::ZERO);
        self.b.value.fill(T::ZERO);
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &[T], h: usize, w_in: usize) -> (Vec<T>, Conv2dCtx<T>) {
        debug_assert_eq!(x.len(), h * w_in * self.cin);
        let (oh, ow) = self.out_size(h, w_in);
        let kkcin = self.k * self.k * self.cin;
        let mut cols = vec![T::ZERO; oh * ow * kkcin];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[(oy * ow + ox) * kkcin..(oy * ow + ox + 1) * kkcin];
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w_in as isize {
                            continue;
                        }
                        let src = (iy as usize * w_in + ix as usize) * self.cin;
                        let dst = (ky * self.k + kx) * self.cin;
                        row[dst..dst + self.cin].copy_from_slice(&x[src..src + self.cin]);
                    }
                }
            }
        }
        let mut y = vec![T::ZERO; oh * ow * self.cout];
        matmul_acc(&cols, &self.w.value.data, &mut y, oh * ow, kkcin, self.cout);
        for p in 0..oh * ow {
            for (o, &bv) in y[p * self.cout..(p + 1) * self.cout]
                .iter_mut()
                .zip(self.b.value.data.iter())
            {
                *o += bv;
            }
        }
        (y, Conv2dCtx { cols, h, w_in, oh, ow })
    }

    pub fn backward(&mut self, ctx: &Conv2dCtx<T>, dy: &[T]) -> Vec<T> {
        let kkcin = self.k * self.k * self.cin;
        let m = ctx.oh * ctx.ow;
        matmul_at_b_acc(&ctx.cols, dy, &mut self.w.grad.data, m, kkcin, self.cout);
        for p in 0..m {
            for (g, &d) in self.b.grad.data.iter_mut().zip(dy[p * self.cout..].iter()) {
                *g += d;
            }
        }
        let wt = transpose(&self.w.value.data, kkcin, self.cout);
        let mut dcols = vec![T::ZERO; m * kkcin];
        matmul_acc(dy, &wt, &mut dcols, m, self.cout, kkcin);
        // col2im scatter
        let mut dx = vec![T::ZERO; ctx.h * ctx.w_in * self.cin];
        for oy in 0..ctx.oh {
            for ox in 0..ctx.ow {
                let row = &dcols[(oy * ctx.ow + ox) * kkcin..(oy * ctx.ow + ox + 1) * kkcin];
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= ctx.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= ctx.w_in as isize {
                            continue;
                        }
                        let dst = (iy as usize * ctx.w_in + ix as usize) * self.cin;
                        let src = (ky * self.k + kx) * self.cin;
                        for c in 0..self.cin {
                            dx[dst + c] += row[src + c];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

// ---------------------------------------------------------------------------
// GroupNorm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GroupNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

pub struct GroupNormCtx<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>, // per group
    pixels: usize,
}

/// Largest group count ≤ 8 that divides the channel count.
pub fn group_count(channels: usize) -> usize {
    for g in [8, 4, 2] {
        if channels % g == 0 {
            return g;
        }
    }
    1
}

impl<T: Real> GroupNorm<T> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::new(Tensor::zeros(&[channels]));
        gamma.value.fill(T::ONE);
        GroupNorm {
            gamma,
            beta: Param::new(Tensor::zeros(&[channels])),
            channels,
            groups: group_count(channels),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, GroupNormCtx<T>) {
        let c = self.channels;
        let pixels = x.len() / c;
        let cpg = c / self.groups;
        let n = pixels * cpg;
        let mut xhat = vec![T::ZERO; x.len()];
        let mut inv_std = vec![T::ZERO; self.groups];
        let mut y = vec![T::ZERO; x.len()];
        for g in 0..self.groups {
            let c0 = g * cpg;
            let mut sum = T::ZERO;
            for p in 0..pixels {
                for ci in 0..cpg {
                    sum += x[p * c + c0 + ci];
                }
            }
            let mean = sum / T::from_f64(n as f64);
            let mut var = T::ZERO;
            for p in 0..pixels {
                for ci in 0..cpg {
                    let d = x[p * c + c0 + ci] - mean;
                    var += d * d;
                }
            }
            var = var / T::from_f64(n as f64);
            let inv = T::ONE / (var + T::from_f64(self.eps)).sqrt();
            inv_std[g] = inv;
            for p in 0..pixels {
                for ci in 0..cpg {
                    let idx = p * c + c0 + ci;
                    let xh = (x[idx] - mean) * inv;
                    xhat[idx] = xh;
                    y[idx] = self.gamma.value.data[c0 + ci] * xh + self.beta.value.data[c0 + ci];
                }
            }
        }
        (y, GroupNormCtx { xhat, inv_std, pixels })
    }

    pub fn backward(&mut self, ctx: &GroupNormCtx<T>, dy: &[T]) -> Vec<T> {
        let c = self.channels;
        let cpg = c / self.groups;
        let pixels = ctx.pixels;
        let n = T::from_f64((pixels * cpg) as f64);
        let mut dx = vec![T::ZERO; dy.len()];
        for g in 0..self.groups {
            let c0 = g * cpg;
            let inv = ctx.inv_std[g];
            let mut s1 = T::ZERO; // Σ dxhat
            let mut s2 = T::ZERO; // Σ dxhat * xhat
            for p in 0..pixels {
                for ci in 0..cpg {
                    let idx = p * c + c0 + ci;
                    let dxh = dy[idx] * self.gamma.value.data[c0 + ci];
                    s1 += dxh;
                    s2 += dxh * ctx.xhat[idx];
                }
            }
            for p in 0..pixels {
                for ci in 0..cpg {
                    let idx = p * c + c0 + ci;
                    let dxh = dy[idx] * self.gamma.value.data[c0 + ci];
                    dx[idx] = inv * (dxh - (s1 + ctx.xhat[idx] * s2) / n);
                }
            }
        }
        for p in 0..pixels {
            for ci in 0..c {
                let idx = p * c + ci;
                self.gamma.grad.data[ci] += dy[idx] * ctx.xhat[idx];
                self.beta.grad.data[ci] += dy[idx];
            }
        }
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Cross-attention over text tokens
// ---------------------------------------------------------------------------

/// Pre-normed single-head cross-attention with a residual connection.
/// Queries come from the feature map, keys/values from text token embeddings.
/// Masked-out tokens receive exactly zero attention weight.
#[derive(Debug, Clone)]
pub struct CrossAttention<T> {
    pub norm: GroupNorm<T>,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub channels: usize,
    pub text_dim: usize,
}

pub struct CrossAttentionCtx<T> {
    norm_ctx: GroupNormCtx<T>,
    q_ctx: LinearCtx<T>,
    k_ctx: LinearCtx<T>,
    v_ctx: LinearCtx<T>,
    o_ctx: LinearCtx<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>, // [Nq, L]
    valid: Vec<usize>,
    nq: usize,
    l: usize,
}

impl<T: Real> CrossAttention<T> {
    pub fn new(channels: usize, text_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        CrossAttention {
            norm: GroupNorm::new(channels),
            wq: Linear::new(channels, channels, false, rng),
            wk: Linear::new(text_dim, channels, false, rng),
            wv: Linear::new(text_dim, channels, false, rng),
            wo: Linear::new(channels, channels, false, rng),
            channels,
            text_dim,
        }
    }

    /// `text` is `[l, text_dim]`; `mask[j]` marks valid tokens. With no valid
    /// token the attention output is zero and the layer reduces to identity.
    pub fn forward(
        &self,
        x: &[T],
        text: &[T],
        mask: &[bool],
    ) -> (Vec<T>, CrossAttentionCtx<T>) {
        let a = self.channels;
        let nq = x.len() / a;
        let l = mask.len();
        let valid: Vec<usize> = (0..l).filter(|&j| mask[j]).collect();

        let (xn, norm_ctx) = self.norm.forward(x);
        let (q, q_ctx) = self.wq.forward(&xn);
        let (k, k_ctx) = self.wk.forward(text);
        let (v, v_ctx) = self.wv.forward(text);

        let scale = T::from_f64(1.0 / (a as f64).sqrt());
        let mut probs = vec![T::ZERO; nq * l];
        let mut attn = vec![T::ZERO; nq * a];
        if !valid.is_empty() {
            for i in 0..nq {
                let qi = &q[i * a..(i + 1) * a];
                let mut scores = Vec::with_capacity(valid.len());
                let mut max = T::from_f64(f64::NEG_INFINITY);
                for &j in &valid {
                    let kj = &k[j * a..(j + 1) * a];
                    let mut s = T::ZERO;
                    for (qq, kk) in qi.iter().zip(kj.iter()) {
                        s += *qq * *kk;
                    }
                    s *= scale;
                    if s > max {
                        max = s;
                    }
                    scores.push(s);
                }
                let mut denom = T::ZERO;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                for (jj, &j) in valid.iter().enumerate() {
                    let p = scores[jj] / denom;
                    probs[i * l + j] = p;
                    let vj = &v[j * a..(j + 1) * a];
                    for (o, &vv) in attn[i * a..(i + 1) * a].iter_mut().zip(vj.iter()) {
                        *o += p * vv;
                    }
                }
            }
        }
        let (out, o_ctx) = self.wo.forward(&attn);
        let y: Vec<T> = x.iter().zip(out.iter()).map(|(&xv, &ov)| xv + ov).collect();
        (
            y,
            CrossAttentionCtx {
                norm_ctx,
                q_ctx,
                k_ctx,
                v_ctx,
                o_ctx,
                q,
                k,
                v,
                probs,
                valid,
                nq,
                l,
            },
        )
    }

    /// Returns (dx, d_text).
    pub fn backward(&mut self, ctx: &CrossAttentionCtx<T>, dy: &[T]) -> (Vec<T>, Vec<T>) {
        let a = self.channels;
        let (nq, l) = (ctx.nq, ctx.l);
        let dattn = self.wo.backward(&ctx.o_ctx, dy);

        let mut dq = vec![T::ZERO; nq * a];
        let mut dk = vec![T::ZERO; l * a];
        let mut dv = vec![T::ZERO; l * a];
        let scale = T::from_f64(1.0 / (a as f64).sqrt());
        if !ctx.valid.is_empty() {
            for i in 0..nq {
                let da = &dattn[i * a..(i + 1) * a];
                // dP and softmax backward restricted to valid tokens
                let mut dp = vec![T::ZERO; ctx.valid.len()];
                let mut dot = T::ZERO; // Σ_j dP_j * P_j
                for (jj, &j) in ctx.valid.iter().enumerate() {
                    let vj = &ctx.v[j * a..(j + 1) * a];
                    let mut s = T::ZERO;
                    for (dd, vv) in da.iter().zip(vj.iter()) {
                        s += *dd * *vv;
                    }
                    dp[jj] = s;
                    dot += s * ctx.probs[i * l + j];
                }
                for (jj, &j) in ctx.valid.iter().enumerate() {
                    let p = ctx.probs[i * l + j];
                    let ds = p * (dp[jj] - dot) * scale;
                    let qi = &ctx.q[i * a..(i + 1) * a];
                    let kj = &ctx.k[j * a..(j + 1) * a];
                    for c in 0..a {
                        dq[i * a + c] += ds * kj[c];
                        dk[j * a + c] += ds * qi[c];
                    }
                    // dV += P ⊙ dattn
                    for c in 0..a {
                        dv[j * a + c] += p * da[c];
                    }
                }
            }
        }
        let dxn = self.wq.backward(&ctx.q_ctx, &dq);
        let dt_k = self.wk.backward(&ctx.k_ctx, &dk);
        let dt_v = self.wv.backward(&ctx.v_ctx, &dv);
        let d_text: Vec<T> = dt_k.iter().zip(dt_v.iter()).map(|(&x1, &x2)| x1 + x2).collect();
        let dx_norm = self.norm.backward(&ctx.norm_ctx, &dxn);
        let dx: Vec<T> = dy.iter().zip(dx_norm.iter()).map(|(&g, &n)| g + n).collect();
        (dx, d_text)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.norm.visit_params(&format!("{prefix}.norm"), f);
        self.wq.visit_params(&format!("{prefix}.wq"), f);
        self.wk.visit_params(&format!("{prefix}.wk"), f);
        self.wv.visit_params(&format!("{prefix}.wv"), f);
        self.wo.visit_params(&format!("{prefix}.wo"), f);
    }
}

// ---------------------------------------------------------------------------
// Resampling helpers
// ---------------------------------------------------------------------------

/// Nearest-neighbor 2x upsample of a `[h*w, c]` map.
pub fn upsample_nearest_2x<T: Real>(x: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let mut y = vec![T::ZERO; 4 * h * w * c];
    let (oh, ow) = (2 * h, 2 * w);
    for oy in 0..oh {
        for ox in 0..ow {
            let src = ((oy / 2) * w + ox / 2) * c;
            let dst = (oy * ow + ox) * c;
            y[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    y
}

/// Backward of [`upsample_nearest_2x`]: sums the four child gradients.
pub fn upsample_nearest_2x_backward<T: Real>(dy: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; h * w * c];
    let ow = 2 * w;
    for oy in 0..2 * h {
        for ox in 0..ow {
            let src = (oy * ow + ox) * c;
            let dst = ((oy / 2) * w + ox / 2) * c;
            for ci in 0..c {
                dx[dst + ci] += dy[src + ci];
            }
        }
    }
    dx
}

/// Bilinear upsample of a `[h*w, c]` map by an integer factor
/// (half-pixel-center convention). Used for low-resolution conditioning.
pub fn upsample_bilinear<T: Real>(x: &[T], h: usize, w: usize, c: usize, scale: usize) -> Vec<T> {
    let (oh, ow) = (h * scale, w * scale);
    let mut y = vec![T::ZERO; oh * ow * c];
    let s = scale as f64;
    for oy in 0..oh {
        let sy = ((oy as f64 + 0.5) / s - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = T::from_f64(sy - y0 as f64);
        for ox in 0..ow {
            let sx = ((ox as f64 + 0.5) / s - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = T::from_f64(sx - x0 as f64);
            let dst = (oy * ow + ox) * c;
            for ci in 0..c {
                let p00 = x[(y0 * w + x0) * c + ci];
                let p01 = x[(y0 * w + x1) * c + ci];
                let p10 = x[(y1 * w + x0) * c + ci];
                let p11 = x[(y1 * w + x1) * c + ci];
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                y[dst + ci] = top + (bot - top) * fy;
            }
        }
    }
    y
}
