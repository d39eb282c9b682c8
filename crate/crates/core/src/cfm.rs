//! Independent-coupling flow-matching path, the per-row normalised target
//! loss, and the training loop shared with the diffusion baseline.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::IncompleteDataset;
use crate::error::{Error, Result};
use crate::field::{write_features, FieldConfig, FieldNetwork};
use crate::matrix::Matrix;
use crate::split::{SplitMasks, SplitStrategy};
use crate::tensor::{AdamW, AdamWConfig, Graph, LrSchedule, Tensor, Var};

/// One draw from the conditional path for the target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub x0: Vec<f64>,
    pub x_t: Vec<f64>,
    /// Regression target `x_targ - x0`.
    pub u: Vec<f64>,
}

/// Draws `t ~ U(0, 1)` and then [`sample_path_at`].
pub fn sample_path<R: Rng + ?Sized>(x_targ: &[f64], sigma: f64, rng: &mut R) -> PathSample {
    let t: f64 = rng.random();
    sample_path_at(x_targ, t, sigma, rng)
}

/// `x_t = t * x_targ + (1 - t) * x0 (+ sigma * eps)` with `x0 ~ N(0, I)`.
pub fn sample_path_at<R: Rng + ?Sized>(
    x_targ: &[f64],
    t: f64,
    sigma: f64,
    rng: &mut R,
) -> PathSample {
    let x0: Vec<f64> = x_targ.iter().map(|_| rng.sample(StandardNormal)).collect();
    let mut x_t: Vec<f64> = x_targ
        .iter()
        .zip(&x0)
        .map(|(&x, &z)| t * x + (1.0 - t) * z)
        .collect();
    if sigma > 0.0 {
        for v in x_t.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let u = x_targ.iter().zip(&x0).map(|(&x, &z)| x - z).collect();
    PathSample { t, x0, x_t, u }
}

/// Produces one training example for a split row: the network input row
/// and the regression target (only target coordinates are read).
pub trait Objective {
    fn name(&self) -> &'static str;

    /// `x` holds standardised values (zero where missing).
    fn sample_row(
        &self,
        x: &[f64],
        split: &SplitMasks,
        time_dim: usize,
        rng: &mut ChaCha8Rng,
        features: &mut [f64],
        target: &mut [f64],
    ) -> Result<()>;
}

/// Flow-matching objective with the independent coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMatching {
    pub sigma: f64,
}

impl Objective for FlowMatching {
    fn name(&self) -> &'static str {
        "cfmi"
    }

    fn sample_row(
        &self,
        x: &[f64],
        split: &SplitMasks,
        time_dim: usize,
        rng: &mut ChaCha8Rng,
        features: &mut [f64],
        target: &mut [f64],
    ) -> Result<()> {
        let idx: Vec<usize> = (0..x.len()).filter(|&j| split.target[j]).collect();
        let x_targ: Vec<f64> = idx.iter().map(|&j| x[j]).collect();
        let path = sample_path(&x_targ, self.sigma, rng);
        let mut x_path = vec![0.0; x.len()];
        target.iter_mut().for_each(|v| *v = 0.0);
        for (k, &j) in idx.iter().enumerate() {
            x_path[j] = path.x_t[k];
            target[j] = path.u[k];
        }
        write_features(
            features,
            time_dim,
            path.t,
            &x_path,
            &split.target,
            x,
            &split.cond,
        )
    }
}

/// Per-row weights `s_t / ||s_t||_0`.
pub fn target_weights(splits: &[SplitMasks]) -> Result<Tensor> {
    let d = splits.first().map_or(0, |s| s.target.len());
    let mut w = Vec::with_capacity(splits.len() * d);
    for (i, s) in splits.iter().enumerate() {
        let k = s.target_count();
        if k == 0 {
            return Err(Error::invalid(format!(
                "row {i} of the batch has no target dimension"
            )));
        }
        let inv = 1.0 / k as f64;
        w.extend(s.target.iter().map(|&t| if t { inv } else { 0.0 }));
    }
    Tensor::matrix(splits.len(), d, w)
}

/// Batch mean of `sum_j weights_ij * (pred_ij - target_ij)^2`.
pub fn weighted_loss(g: &mut Graph, pred: Var, target: Var, weights: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let weighted = g.mul(sq, weights)?;
    let per_row = g.sum_axis(weighted, 1)?;
    g.mean_axis(per_row, 0)
}

/// Value of the normalised target loss for a batch of predictions.
pub fn cfmi_loss(pred: &Tensor, target: &Tensor, splits: &[SplitMasks]) -> Result<f64> {
    let weights = target_weights(splits)?;
    let mut g = Graph::inference();
    let (p, t, w) = (
        g.constant(pred.clone()),
        g.constant(target.clone()),
        g.constant(weights),
    );
    let l = weighted_loss(&mut g, p, t, w)?;
    g.value(l).item()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Random,
    RandomHistorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// 0 reproduces plain Adam.
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub cosine_schedule: bool,
    /// Path noise; 0 gives the deterministic interpolant.
    pub sigma: f64,
    pub split: SplitKind,
    /// Probability of the random branch under `random_historical`.
    pub mix_prob: f64,
    pub seed: u64,
    /// Rows held out only for monitoring the loss.
    pub holdout_fraction: f64,
    pub validate_every: usize,
    pub checkpoint_every: Option<usize>,
    pub hidden: usize,
    pub blocks: usize,
    pub time_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::short()
    }
}

impl TrainConfig {
    /// Small training budget (5000 steps).
    pub fn short() -> Self {
        Self {
            steps: 5000,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-5,
            clip_norm: 2.0,
            cosine_schedule: true,
            sigma: 0.0,
            split: SplitKind::Random,
            mix_prob: 0.5,
            seed: 0,
            holdout_fraction: 0.05,
            validate_every: 500,
            checkpoint_every: None,
            hidden: 256,
            blocks: 4,
            time_dim: 128,
        }
    }

    /// Large training budget (75000 steps).
    pub fn long() -> Self {
        Self {
            steps: 75_000,
            ..Self::short()
        }
    }

    pub fn strategy(&self) -> SplitStrategy {
        match self.split {
            SplitKind::Random => SplitStrategy::Random,
            SplitKind::RandomHistorical => SplitStrategy::RandomHistorical {
                mix_prob: self.mix_prob,
            },
        }
    }

    pub fn network(&self, dim: usize) -> FieldConfig {
        FieldConfig {
            dim,
            hidden: self.hidden,
            blocks: self.blocks,
            time_dim: self.time_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) || !(self.sigma >= 0.0) {
            return bad("weight_decay, sigma must be >= 0 and clip_norm > 0");
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return bad("mix_prob must lie in [0, 1]");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: Some(self.clip_norm),
            schedule: if self.cosine_schedule && self.steps > 0 {
                LrSchedule::Cosine {
                    total_steps: self.steps,
                }
            } else {
                LrSchedule::Constant
            },
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: FieldNetwork,
    pub log: Vec<LossRecord>,
    pub validation: Vec<ValidationRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub holdout_rows: Vec<usize>,
}

impl TrainOutcome {
    pub fn write_loss_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(f, "step,lr,loss")?;
        for r in &self.log {
            writeln!(f, "{},{},{}", r.step, r.lr, r.loss)?;
        }
        Ok(())
    }

    pub fn write_validation_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(f, "step,val_loss")?;
        for r in &self.validation {
            writeln!(f, "{},{}", r.step, r.loss)?;
        }
        Ok(())
    }
}

/// RNG stream for one purpose of a seeded run.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_TRAIN: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_VALIDATION: u64 = 2;

/// Training inputs in standardised units with zeros in missing cells.
struct TrainingView {
    x: Matrix,
    mask: crate::matrix::MissingnessMask,
    pool: Vec<usize>,
}

pub(crate) struct BatchBuffers {
    features: Vec<f64>,
    target: Vec<f64>,
    splits: Vec<SplitMasks>,
}

fn build_batch<O: Objective + ?Sized>(
    view: &TrainingView,
    rows: &[usize],
    cfg: &TrainConfig,
    objective: &O,
    rng: &mut ChaCha8Rng,
) -> Result<BatchBuffers> {
    let d = view.x.cols();
    let width = cfg.time_dim + 3 * d;
    let mut features = vec![0.0; rows.len() * width];
    let mut target = vec![0.0; rows.len() * d];
    let mut splits = Vec::with_capacity(rows.len());
    for (b, &i) in rows.iter().enumerate() {
        let mask = view.mask.row(i);
        let strategy = cfg.strategy();
        let partner_row = if strategy.needs_partner() {
            view.pool[rng.random_range(0..view.pool.len())]
        } else {
            i
        };
        let split = strategy.split(mask, view.mask.row(partner_row), rng)?;
        objective.sample_row(
            view.x.row(i),
            &split,
            cfg.time_dim,
            rng,
            &mut features[b * width..(b + 1) * width],
            &mut target[b * d..(b + 1) * d],
        )?;
        splits.push(split);
    }
    Ok(BatchBuffers {
        features,
        target,
        splits,
    })
}

fn batch_loss(net: &FieldNetwork, g: &mut Graph, batch: &BatchBuffers) -> Result<(Vec<Var>, Var)> {
    let (b, d) = (batch.splits.len(), net.dim());
    let vars = net.bind(g);
    let x = g.constant(Tensor::matrix(
        b,
        net.config().input_width(),
        batch.features.clone(),
    )?);
    let pred = net.forward_graph(g, &vars, x)?;
    let target = g.constant(Tensor::matrix(b, d, batch.target.clone())?);
    let weights = g.constant(target_weights(&batch.splits)?);
    let loss = weighted_loss(g, pred, target, weights)?;
    Ok((vars, loss))
}

pub(crate) fn eval_loss(net: &FieldNetwork, batch: &BatchBuffers) -> Result<f64> {
    let mut g = Graph::inference();
    let (_, loss) = batch_loss(net, &mut g, batch)?;
    g.value(loss).item()
}

/// The network a run with `cfg` starts from.
pub fn init_network(dim: usize, cfg: &TrainConfig) -> Result<FieldNetwork> {
    FieldNetwork::new(cfg.network(dim), &mut stream_rng(cfg.seed, STREAM_INIT))
}

/// Trains the flow-matching imputer.
pub fn train(dataset: &IncompleteDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, &FlowMatching { sigma: cfg.sigma }, None)
}

/// Generic training loop. With `out_dir`, writes periodic checkpoints
/// `checkpoint_<step>.json` when `checkpoint_every` is set.
pub fn train_with<O: Objective + ?Sized>(
    dataset: &IncompleteDataset,
    cfg: &TrainConfig,
    objective: &O,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (n, d) = (dataset.rows(), dataset.cols());
    let mut x = dataset.standardized();
    x.data_mut()
        .iter_mut()
        .filter(|v| v.is_nan())
        .for_each(|v| *v = 0.0);
    let mask = dataset.mask().clone();

    let mut train_rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let mut eligible: Vec<usize> = (0..n).filter(|&i| mask.observed_in_row(i) > 0).collect();
    if eligible.is_empty() {
        return Err(Error::invalid("no row has an observed value to train on"));
    }
    eligible.shuffle(&mut train_rng);
    let n_hold = if eligible.len() >= 20 {
        (cfg.holdout_fraction * eligible.len() as f64).round() as usize
    } else {
        0
    };
    let mut holdout: Vec<usize> = eligible.drain(..n_hold).collect();
    holdout.sort_unstable();
    let mut pool = eligible;
    pool.sort_unstable();

    let view = TrainingView { x, mask, pool };

    let mut net = init_network(d, cfg)?;
    let names: Vec<String> = net.param_names().to_vec();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut opt = {
        let params: Vec<&Tensor> = net.params().iter().map(|p| &**p).collect();
        AdamW::new(cfg.optimizer(), &params)
    };

    let val_batch = {
        let mut rng = stream_rng(cfg.seed, STREAM_VALIDATION);
        let src = if holdout.is_empty() {
            &view.pool
        } else {
            &holdout
        };
        let rows: Vec<usize> = (0..256.min(4 * cfg.batch_size))
            .map(|_| src[rng.random_range(0..src.len())])
            .collect();
        build_batch(&view, &rows, cfg, objective, &mut rng)?
    };

    let mut log = Vec::with_capacity(cfg.steps);
    let mut validation = vec![ValidationRecord {
        step: 0,
        loss: eval_loss(&net, &val_batch)?,
    }];
    let mut checkpoints = Vec::new();
    let mut last_checkpoint: Option<PathBuf> = None;

    for step in 0..cfg.steps {
        let rows: Vec<usize> = (0..cfg.batch_size)
            .map(|_| view.pool[train_rng.random_range(0..view.pool.len())])
            .collect();
        let batch = build_batch(&view, &rows, cfg, objective, &mut train_rng)?;
        let lr = opt.current_lr()?;
        let (loss, mut grads) = {
            let mut g = Graph::new();
            let (vars, loss_var) = batch_loss(&net, &mut g, &batch)?;
            let loss = g.value(loss_var).item()?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    loss,
                    last_checkpoint,
                });
            }
            let mut gr = g.backward(loss_var)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| gr.take(v)).collect();
            (loss, grads)
        };
        {
            let mut params = net.params_mut();
            match opt.step(&mut params, &mut grads, &name_refs) {
                Ok(_) => {}
                Err(Error::NonFiniteGradient { .. }) => {
                    return Err(Error::Divergence {
                        step,
                        loss,
                        last_checkpoint,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        log.push(LossRecord { step, lr, loss });

        let done = step + 1;
        if cfg.validate_every > 0 && done % cfg.validate_every == 0 && done != cfg.steps {
            let loss = eval_loss(&net, &val_batch)?;
            log::info!(
                "{} step {done}/{}: validation loss {loss:.4}",
                objective.name(),
                cfg.steps
            );
            validation.push(ValidationRecord { step: done, loss });
        }
        if let (Some(dir), Some(every)) = (out_dir, cfg.checkpoint_every) {
            if done % every == 0 {
                let path = dir.join(format!("checkpoint_{done}.json"));
                net.save(&path, checkpoint_meta(cfg, objective.name(), done))?;
                checkpoints.push(path.clone());
                last_checkpoint = Some(path);
            }
        }
    }
    if cfg.steps > 0 {
        validation.push(ValidationRecord {
            step: cfg.steps,
            loss: eval_loss(&net, &val_batch)?,
        });
    }
    Ok(TrainOutcome {
        net,
        log,
        validation,
        checkpoints,
        holdout_rows: holdout,
    })
}

pub fn checkpoint_meta(cfg: &TrainConfig, method: &str, steps: usize) -> serde_json::Value {
    serde_json::json!({
        "method": method,
        "steps": steps,
        "seed": cfg.seed,
        "train_config": cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(target: &[bool], cond: &[bool]) -> SplitMasks {
        SplitMasks {
            target: target.to_vec(),
            cond: cond.to_vec(),
        }
    }

    #[test]
    fn path_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.3, -1.2];
        let p0 = sample_path_at(&x, 0.0, 0.0, &mut rng);
        assert_eq!(p0.x_t, p0.x0);
        let p1 = sample_path_at(&x, 1.0, 0.0, &mut rng);
        assert_eq!(p1.x_t, x);
        for (k, u) in p1.u.iter().enumerate() {
            assert_eq!(*u, x[k] - p1.x0[k]);
        }
    }

    #[test]
    fn path_algebra_recovers_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = [0.7, 2.0, -0.4];
        for _ in 0..100 {
            let p = sample_path(&x, 0.0, &mut rng);
            if p.t < 1e-6 {
                continue;
            }
            for k in 0..3 {
                assert!(((p.x_t[k] - p.x0[k]) / p.t - p.u[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perfect_field_has_zero_loss() {
        let u = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let s = vec![
            split(&[true, false], &[false, true]),
            split(&[true, true], &[false, false]),
        ];
        assert_eq!(cfmi_loss(&u, &u, &s).unwrap(), 0.0);
    }

    #[test]
    fn one_dim_residual() {
        let pred = Tensor::matrix(1, 2, vec![3.0, 100.0]).unwrap();
        let tgt = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let s = vec![split(&[true, false], &[false, true])];
        assert_eq!(cfmi_loss(&pred, &tgt, &s).unwrap(), 9.0);
    }

    #[test]
    fn scaling_equalises_rows() {
        let pred = Tensor::full(&[2, 4], 1.0);
        let tgt = Tensor::zeros(&[2, 4]);
        let s = vec![
            split(&[true, false, false, false], &[false, true, true, true]),
            split(&[true, true, true, true], &[false; 4]),
        ];
        assert_eq!(cfmi_loss(&pred, &tgt, &s).unwrap(), 1.0);
    }

    #[test]
    fn empty_target_is_an_error() {
        let t = Tensor::zeros(&[1, 2]);
        let s = vec![split(&[false, false], &[true, true])];
        assert!(cfmi_loss(&t, &t, &s).is_err());
    }

    #[test]
    fn config_serde_flattens_split() {
        let cfg: TrainConfig = serde_json::from_str(
            r#"{"steps": 10, "split": "random_historical", "mix_prob": 0.25}"#,
        )
        .unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(
            cfg.strategy(),
            SplitStrategy::RandomHistorical { mix_prob: 0.25 }
        );
        assert_eq!(cfg.batch_size, 64);
        let back: TrainConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
