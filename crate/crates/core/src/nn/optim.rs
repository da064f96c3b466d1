//! Optimizers. Adam is the desk-scale default; Adafactor is available for the
//! base model. State is keyed by parameter slot in the model's fixed
//! traversal order, so updates are deterministic and checkpointable.

use super::tensor::{Param, Real, Tensor};

pub trait Optimizer<T: Real> {
    /// Called once per training step before any `update`.
    fn begin_step(&mut self);
    /// Apply one update to the parameter at `slot` using its accumulated grad.
    fn update(&mut self, slot: usize, param: &mut Param<T>);
    fn learning_rate(&self) -> f64;
    /// State tensors for exact-resume checkpoints, in a stable order.
    fn state(&self) -> Vec<(String, Tensor<T>)>;
    fn restore(&mut self, state: &[(String, Tensor<T>)]);
    fn step_count(&self) -> u64;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    fn ensure_slot(&mut self, slot: usize, shape: &[usize]) {
        while self.m.len() <= slot {
            self.m.push(Tensor::zeros(&[0]));
            self.v.push(Tensor::zeros(&[0]));
        }
        if self.m[slot].numel() == 0 {
            self.m[slot] = Tensor::zeros(shape);
            self.v[slot] = Tensor::zeros(shape);
        }
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn update(&mut self, slot: usize, param: &mut Param<T>) {
        self.ensure_slot(slot, &param.value.shape);
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::from_f64(self.lr / bc1);
        let bc2_sqrt_inv = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(self.eps);
        let m = &mut self.m[slot].data;
        let v = &mut self.v[slot].data;
        for i in 0..param.value.data.len() {
            let g = param.grad.data[i];
            m[i] = b1 * m[i] + one_m_b1 * g;
            v[i] = b2 * v[i] + one_m_b2 * g * g;
            let vhat_sqrt = (v[i] * bc2_sqrt_inv * bc2_sqrt_inv).sqrt();
            param.value.data[i] -= step * m[i] / (vhat_sqrt + eps);
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, t) in self.m.iter().enumerate() {
            out.push((format!("adam.m.{i:04}"), t.clone()));
        }
        for (i, t) in self.v.iter().enumerate() {
            out.push((format!("adam.v.{i:04}"), t.clone()));
        }
        out.push((
            "adam.t".to_string(),
            Tensor::from_vec(vec![T::from_f64(self.t as f64)], &[1]),
        ));
        out
    }

    fn restore(&mut self, state: &[(String, Tensor<T>)]) {
        self.m.clear();
        self.v.clear();
        for (name, t) in state {
            if name.starts_with("adam.m.") {
                self.m.push(t.clone());
            } else if name.starts_with("adam.v.") {
                self.v.push(t.clone());
            } else if name == "adam.t" {
                self.t = t.data[0].to_f64() as u64;
            }
        }
    }

    fn step_count(&self) -> u64 {
        self.t
    }
}

// ---------------------------------------------------------------------------
// Adafactor
// ---------------------------------------------------------------------------

/// Adafactor with factored second moments for matrices, fixed step size, and
/// RMS update clipping at 1.0.
pub struct Adafactor<T> {
    pub lr: f64,
    pub eps1: f64,
    t: u64,
    row: Vec<Tensor<T>>,
    col: Vec<Tensor<T>>,
    full: Vec<Tensor<T>>,
}

impl<T: Real> Adafactor<T> {
    pub fn new(lr: f64) -> Self {
        Adafactor { lr, eps1: 1e-30, t: 0, row: Vec::new(), col: Vec::new(), full: Vec::new() }
    }

    fn ensure_slot(&mut self, slot: usize, shape: &[usize]) {
        while self.row.len() <= slot {
            self.row.push(Tensor::zeros(&[0]));
            self.col.push(Tensor::zeros(&[0]));
            self.full.push(Tensor::zeros(&[0]));
        }
        if shape.len() == 2 {
            if self.row[slot].numel() == 0 {
                self.row[slot] = Tensor::zeros(&[shape[0]]);
                self.col[slot] = Tensor::zeros(&[shape[1]]);
            }
        } else if self.full[slot].numel() == 0 {
            self.full[slot] = Tensor::zeros(shape);
        }
    }
}

impl<T: Real> Optimizer<T> for Adafactor<T> {
    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn update(&mut self, slot: usize, param: &mut Param<T>) {
        self.ensure_slot(slot, &param.value.shape);
        let beta2 = 1.0 - (self.t as f64).powf(-0.8);
        let b2 = T::from_f64(beta2);
        let one_m_b2 = T::from_f64(1.0 - beta2);
        let eps1 = T::from_f64(self.eps1);
        let n = param.value.data.len();
        let mut update = vec![T::ZERO; n];
        if param.value.shape.len() == 2 {
            let (rows, cols) = (param.value.shape[0], param.value.shape[1]);
            let r = &mut self.row[slot].data;
            let c = &mut self.col[slot].data;
            for i in 0..rows {
                let mut s = T::ZERO;
                for j in 0..cols {
                    let g = param.grad.data[i * cols + j];
                    s += g * g + eps1;
                }
                r[i] = b2 * r[i] + one_m_b2 * s;
            }
            for j in 0..cols {
                let mut s = T::ZERO;
                for i in 0..rows {
                    let g = param.grad.data[i * cols + j];
                    s += g * g + eps1;
                }
                c[j] = b2 * c[j] + one_m_b2 * s;
            }
            let r_sum: f64 = r.iter().map(|x| x.to_f64()).sum();
            let r_sum = T::from_f64(r_sum.max(1e-30));
            for i in 0..rows {
                for j in 0..cols {
                    let vhat = r[i] * c[j] / r_sum;
                    update[i * cols + j] = param.grad.data[i * cols + j] / vhat.sqrt().maxv(eps1);
                }
            }
        } else {
            let v = &mut self.full[slot].data;
            for i in 0..n {
                let g = param.grad.data[i];
                v[i] = b2 * v[i] + one_m_b2 * (g * g + eps1);
                update[i] = g / v[i].sqrt().maxv(eps1);
            }
        }
        // clip update RMS at 1.0
        let rms = (update.iter().map(|u| u.to_f64() * u.to_f64()).sum::<f64>() / n as f64).sqrt();
        let scale = T::from_f64(self.lr / rms.max(1.0));
        for i in 0..n {
            param.value.data[i] -= scale * update[i];
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, t) in self.row.iter().enumerate() {
            out.push((format!("adafactor.row.{i:04}"), t.clone()));
        }
        for (i, t) in self.col.iter().enumerate() {
            out.push((format!("adafactor.col.{i:04}"), t.clone()));
        }
        for (i, t) in self.full.iter().enumerate() {
            out.push((format!("adafactor.full.{i:04}"), t.clone()));
        }
        out.push((
            "adafactor.t".to_string(),
            Tensor::from_vec(vec![T::from_f64(self.t as f64)], &[1]),
        ));
        out
    }

    fn restore(&mut self, state: &[(String, Tensor<T>)]) {
        self.row.clear();
        self.col.clear();
        self.full.clear();
        for (name, t) in state {
            if name.starts_with("adafactor.row.") {
                self.row.push(t.clone());
            } else if name.starts_with("adafactor.col.") {
                self.col.push(t.clone());
            } else if name.starts_with("adafactor.full.") {
                self.full.push(t.clone());
            } else if name == "adafactor.t" {
                self.t = t.data[0].to_f64() as u64;
            }
        }
    }

    fn step_count(&self) -> u64 {
        self.t
    }
}

// ---------------------------------------------------------------------------
// EMA
// ---------------------------------------------------------------------------

/// Exponential moving average of parameters. Off by default.
pub struct Ema<T> {
    pub decay: f64,
    shadow: Vec<Tensor<T>>,
}

impl<T: Real> Ema<T> {
    pub fn new(decay: f64) -> Self {
        Ema { decay, shadow: Vec::new() }
    }

    pub fn observe(&mut self, slot: usize, value: &Tensor<T>) {
        while self.shadow.len() <= slot {
            self.shadow.push(Tensor::zeros(&[0]));
        }
        if self.shadow[slot].numel() == 0 {
            self.shadow[slot] = value.clone();
            return;
        }
        let d = T::from_f64(self.decay);
        let one_m_d = T::from_f64(1.0 - self.decay);
        for (s, &v) in self.shadow[slot].data.iter_mut().zip(value.data.iter()) {
            *s = d * *s + one_m_d * v;
        }
    }

    pub fn shadow(&self, slot: usize) -> Option<&Tensor<T>> {
        self.shadow.get(slot).filter(|t| t.numel() > 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adam on a quadratic bowl converges toward the minimum.
    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Param::new(Tensor::from_vec(vec![5.0f64, -3.0], &[2]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            p.zero_grad();
            for i in 0..2 {
                p.grad.data[i] = 2.0 * p.value.data[i];
            }
            opt.begin_step();
            opt.update(0, &mut p);
        }
        assert!(p.value.data.iter().all(|v| v.abs() < 1e-2), "{:?}", p.value.data);
    }

    #[test]
    fn adafactor_minimizes_quadratic_matrix() {
        let mut p = Param::new(Tensor::from_vec(vec![2.0f64, -1.5, 0.5, 3.0], &[2, 2]));
        let mut opt = Adafactor::new(0.02);
        for _ in 0..2000 {
            p.zero_grad();
            for i in 0..4 {
                p.grad.data[i] = 2.0 * p.value.data[i];
            }
            opt.begin_step();
            opt.update(0, &mut p);
        }
        // RMS-clipped updates bounce within ~lr of the optimum
        assert!(p.value.data.iter().all(|v| v.abs() < 0.1), "{:?}", p.value.data);
    }

    #[test]
    fn adam_state_round_trip_is_exact() {
        let mut p1 = Param::new(Tensor::from_vec(vec![1.0f32, 2.0], &[2]));
        let mut p2 = p1.clone();
        let mut opt1 = Adam::new(0.01);
        // run 3 steps, snapshot, run 2 more
        for s in 0..5 {
            if s == 3 {
                let snap = opt1.state();
                let mut opt2 = Adam::new(0.01);
                opt2.restore(&snap);
                for s2 in 3..5 {
                    p2.zero_grad();
                    p2.grad.data[0] = 0.3 + s2 as f32;
                    p2.grad.data[1] = -0.7;
                    opt2.begin_step();
                    opt2.update(0, &mut p2);
                }
            }
            p1.zero_grad();
            p1.grad.data[0] = 0.3 + s as f32;
            p1.grad.data[1] = -0.7;
            opt1.begin_step();
            opt1.update(0, &mut p1);
            if s < 3 {
                p2 = p1.clone();
            }
        }
        assert_eq!(p1.value.data, p2.value.data);
    }
}
