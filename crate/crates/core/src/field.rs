//! Mask-conditional vector-field network.
//!
//! Input row layout: `[time embedding | zp(x_path) | zp(x_cond) | cond mask]`,
//! where `zp` zero-pads a sub-vector back to `D` coordinates. The network
//! is a residual MLP and always emits `D` outputs; callers index them by
//! the target (training) or missing (imputation) mask.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_checkpoint, save_checkpoint, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub time_dim: usize,
}

impl FieldConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hidden: 256,
            blocks: 4,
            time_dim: 128,
        }
    }

    pub fn input_width(&self) -> usize {
        self.time_dim + 3 * self.dim
    }

    pub fn param_count(&self) -> usize {
        let (h, d) = (self.hidden, self.dim);
        (self.input_width() + 1) * h + self.blocks * 2 * (h * h + h) + (h + 1) * d
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0
            || self.hidden == 0
            || self.time_dim < 2
            || !self.time_dim.is_multiple_of(2)
        {
            return Err(Error::invalid(format!("invalid network config {self:?}")));
        }
        Ok(())
    }
}

/// Sinusoidal embedding: `[sin(w_k t) | cos(w_k t)]` with
/// `w_k = 10^(-4k / (half - 1))`, `k = 0..half`, for `t` in `[0, 1]`.
/// Frequencies stay at or below 1 so the features vary smoothly in `t`.
pub fn time_embedding(t: f64, dim: usize, out: &mut [f64]) {
    let half = dim / 2;
    debug_assert_eq!(out.len(), dim);
    let denom = (half.max(2) - 1) as f64;
    for k in 0..half {
        let freq = 10f64.powf(-4.0 * k as f64 / denom);
        let (s, c) = (freq * t).sin_cos();
        out[k] = s;
        out[half + k] = c;
    }
}

/// Writes one network input row. `x_path` is kept only where `path_mask`
/// is set and `x_cond` only where `cond_mask` is set.
pub fn write_features(
    out: &mut [f64],
    time_dim: usize,
    t: f64,
    x_path: &[f64],
    path_mask: &[bool],
    x_cond: &[f64],
    cond_mask: &[bool],
) -> Result<()> {
    let d = path_mask.len();
    if x_path.len() != d
        || x_cond.len() != d
        || cond_mask.len() != d
        || out.len() != time_dim + 3 * d
    {
        return Err(Error::Shape {
            op: "assemble_inputs",
            lhs: vec![x_path.len(), x_cond.len(), path_mask.len(), cond_mask.len()],
            rhs: vec![out.len()],
        });
    }
    time_embedding(t, time_dim, &mut out[..time_dim]);
    let (path, rest) = out[time_dim..].split_at_mut(d);
    let (cond, mask) = rest.split_at_mut(d);
    for j in 0..d {
        path[j] = if path_mask[j] { x_path[j] } else { 0.0 };
        cond[j] = if cond_mask[j] { x_cond[j] } else { 0.0 };
        mask[j] = if cond_mask[j] { 1.0 } else { 0.0 };
    }
    Ok(())
}

/// Single-row convenience around [`write_features`] with the default
/// 128-dim time embedding.
pub fn assemble_inputs(
    x_path: &[f64],
    x_cond: &[f64],
    target: &[bool],
    cond: &[bool],
    t: f64,
) -> Result<Vec<f64>> {
    let time_dim = 128;
    let mut out = vec![0.0; time_dim + 3 * target.len()];
    write_features(&mut out, time_dim, t, x_path, target, x_cond, cond)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FieldNetwork {
    config: FieldConfig,
    names: Vec<String>,
    params: Vec<Arc<Tensor>>,
}

/// Parameter names and shapes in storage order. Weights are `[in, out]`.
fn layout(config: &FieldConfig) -> Vec<(String, Vec<usize>)> {
    let (h, d) = (config.hidden, config.dim);
    let mut out = vec![
        ("input.weight".to_string(), vec![config.input_width(), h]),
        ("input.bias".to_string(), vec![h]),
    ];
    for b in 0..config.blocks {
        out.push((format!("block{b}.fc1.weight"), vec![h, h]));
        out.push((format!("block{b}.fc1.bias"), vec![h]));
        out.push((format!("block{b}.fc2.weight"), vec![h, h]));
        out.push((format!("block{b}.fc2.bias"), vec![h]));
    }
    out.push(("head.weight".to_string(), vec![h, d]));
    out.push(("head.bias".to_string(), vec![d]));
    out
}

fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("consistent shape")
}

impl FieldNetwork {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(config: FieldConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (names, params) = layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let t = match shape[..] {
                    [fan_in, fan_out] => xavier(fan_in, fan_out, rng),
                    _ => Tensor::zeros(&shape),
                };
                (name, Arc::new(t))
            })
            .unzip();
        Ok(Self {
            config,
            names,
            params,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Arc<Tensor>] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &*self.params[i])
    }

    /// Mutable access for optimiser updates; clones only if a graph still
    /// shares the storage.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(Arc::make_mut).collect()
    }

    /// Replaces a parameter tensor of the same shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("no parameter `{name}`")))?;
        if self.params[i].shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                self.params[i].shape(),
                value.shape(),
            ));
        }
        self.params[i] = Arc::new(value);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Registers all parameters on `g` as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(Arc::clone(p))).collect()
    }

    /// Forward pass on the tape. `features` is `[B, input_width]`.
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], features: Var) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::invalid(
                "parameter bindings do not match the network",
            ));
        }
        let width = g.value(features).shape().get(1).copied().unwrap_or(0);
        if width != self.config.input_width() {
            return Err(Error::shape(
                "field.forward",
                g.value(features).shape(),
                &[0, self.config.input_width()],
            ));
        }
        let affine = |g: &mut Graph, x: Var, w: Var, b: Var| -> Result<Var> {
            let y = g.matmul(x, w)?;
            g.add_row(y, b)
        };
        let pre = affine(g, features, vars[0], vars[1])?;
        let mut h = g.relu(pre);
        for b in 0..self.config.blocks {
            let base = 2 + 4 * b;
            let z = affine(g, h, vars[base], vars[base + 1])?;
            let z = g.relu(z);
            let z = affine(g, z, vars[base + 2], vars[base + 3])?;
            h = g.add(h, z)?;
        }
        let n = vars.len();
        affine(g, h, vars[n - 2], vars[n - 1])
    }

    /// Untracked forward pass for a `[B, input_width]` batch.
    pub fn forward(&self, features: Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let vars = self.bind(&mut g);
        let x = g.constant(features);
        let out = self.forward_graph(&mut g, &vars, x)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, manifest: &Path, mut meta: serde_json::Value) -> Result<()> {
        let tensors: Vec<(&str, &Tensor)> = self
            .names
            .iter()
            .map(String::as_str)
            .zip(self.params.iter().map(|p| &**p))
            .collect();
        if let Some(obj) = meta.as_object_mut() {
            obj.insert("network".into(), serde_json::to_value(self.config)?);
        } else {
            meta = serde_json::json!({ "network": self.config, "extra": meta });
        }
        save_checkpoint(manifest, &tensors, meta)
    }

    /// Loads a network and returns it with the checkpoint metadata.
    pub fn load(manifest: &Path) -> Result<(Self, serde_json::Value)> {
        let ck = load_checkpoint(manifest)?;
        let config: FieldConfig = serde_json::from_value(
            ck.meta
                .get("network")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("manifest lacks network config".into()))?,
        )?;
        config.validate()?;
        let expected = layout(&config);
        if ck.tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                ck.tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(ck.tensors.len());
        let mut names = Vec::with_capacity(expected.len());
        for ((name, t), (want, shape)) in ck.tensors.into_iter().zip(expected) {
            if name != want || t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` {:?} does not match `{want}` {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(Arc::new(t));
        }
        Ok((
            Self {
                config,
                names,
                params,
            },
            ck.meta,
        ))
    }
}
