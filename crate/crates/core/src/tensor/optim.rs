use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Cosine decay from `base_lr` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "cosine schedule step {step} exceeds total {total_steps}"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine { total_steps: usize },
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize, base_lr: f64) -> Result<f64> {
        match *self {
            LrSchedule::Constant => Ok(base_lr),
            LrSchedule::Cosine { total_steps } => {
                cosine_lr(step.min(total_steps), total_steps, base_lr)
            }
        }
    }
}

/// Scale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay coefficient; 0 gives plain Adam.
    pub weight_decay: f64,
    /// Maximum global gradient norm, `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub schedule: LrSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: Some(2.0),
            schedule: LrSchedule::Constant,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: usize,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub lr: f64,
    pub grad_norm: f64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate the next call to [`AdamW::step`] will use.
    pub fn current_lr(&self) -> Result<f64> {
        self.config.schedule.lr_at(self.step, self.config.lr)
    }

    /// One update. `names` label parameters in diagnostics.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &mut [Tensor],
        names: &[&str],
    ) -> Result<StepStats> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape("adamw_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                let param = names
                    .get(i)
                    .map_or_else(|| format!("#{i}"), |s| s.to_string());
                return Err(Error::NonFiniteGradient { param });
            }
        }
        let grad_norm = match self.config.clip_norm {
            Some(max) => clip_global_norm(grads, max),
            None => grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt(),
        };

        let lr = self.current_lr()?;
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - lr * c.weight_decay;

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            for (((w, &gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(StepStats { lr, grad_norm })
    }
}
