//! Score-based diffusion baseline sharing the imputation network, target
//! splits and training loop with the flow model.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cfm::{train_with, Objective, TrainConfig, TrainOutcome};
use crate::data::IncompleteDataset;
use crate::error::{Error, Result};
use crate::field::{write_features, FieldNetwork};
use crate::imputer::{imputation_features, init_missing, ConditionalSampler};
use crate::matrix::{Matrix, MissingnessMask};
use crate::split::SplitMasks;

pub const DEFAULT_STEPS: usize = 50;
pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 0.5;

/// Variance schedule indexed from 1; `beta[t - 1]` is `beta_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Quadratic schedule: `sqrt(beta_t)` linear from `sqrt(min)` to `sqrt(max)`.
    pub fn quadratic(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("diffusion needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let (lo, hi) = (beta_min.sqrt(), beta_max.sqrt());
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                let frac = if steps == 1 {
                    0.0
                } else {
                    i as f64 / (steps - 1) as f64
                };
                let s = lo + frac * (hi - lo);
                s * s
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::quadratic(DEFAULT_STEPS, BETA_MIN, BETA_MAX).expect("valid default schedule")
    }
}

/// Noise-prediction objective. Noise is applied to target dims only and
/// the network sees `t / T` as its time input.
#[derive(Debug, Clone, PartialEq)]
pub struct Csdi {
    pub schedule: NoiseSchedule,
}

impl Objective for Csdi {
    fn name(&self) -> &'static str {
        "csdi"
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
        let big_t = self.schedule.steps();
        let t = rng.random_range(1..=big_t);
        let ab = self.schedule.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut noisy = vec![0.0; x.len()];
        for j in 0..x.len() {
            if split.target[j] {
                let eps: f64 = rng.sample(StandardNormal);
                noisy[j] = sa * x[j] + sn * eps;
                target[j] = eps;
            } else {
                target[j] = 0.0;
            }
        }
        write_features(
            features,
            time_dim,
            t as f64 / big_t as f64,
            &noisy,
            &split.target,
            x,
            &split.cond,
        )
    }
}

/// Trains the diffusion baseline with the shared loop.
pub fn train_csdi(
    dataset: &IncompleteDataset,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_with(
        dataset,
        cfg,
        &Csdi {
            schedule: schedule.clone(),
        },
        out_dir,
    )
}

/// Ancestral sampling from `x_T ~ N(0, I)` on the missing dims.
#[derive(Debug, Clone)]
pub struct AncestralSampler<'a> {
    pub net: &'a FieldNetwork,
    pub schedule: NoiseSchedule,
}

impl ConditionalSampler for AncestralSampler<'_> {
    fn name(&self) -> &'static str {
        "csdi"
    }

    fn net(&self) -> &FieldNetwork {
        self.net
    }

    fn n_steps(&self) -> usize {
        self.schedule.steps()
    }

    fn fill(
        &self,
        rows: &mut Matrix,
        mask: &MissingnessMask,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<()> {
        let d = rows.cols();
        let big_t = self.schedule.steps();
        init_missing(rows, mask, rngs);
        for t in (1..=big_t).rev() {
            let eps = self.net.forward(imputation_features(
                self.net,
                rows,
                mask,
                t as f64 / big_t as f64,
            )?)?;
            let beta = self.schedule.beta(t);
            let coef = beta / (1.0 - self.schedule.alpha_bar(t)).sqrt();
            let inv_sqrt_alpha = 1.0 / self.schedule.alpha(t).sqrt();
            let sd = beta.sqrt();
            for (i, rng) in rngs.iter_mut().enumerate() {
                let m = mask.row(i);
                let e = &eps.data()[i * d..(i + 1) * d];
                for ((x, &o), &eh) in rows.row_mut(i).iter_mut().zip(m).zip(e) {
                    if !o {
                        let mut next = (*x - coef * eh) * inv_sqrt_alpha;
                        if t > 1 {
                            let z: f64 = rng.sample(StandardNormal);
                            next += sd * z;
                        }
                        *x = next;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_schedule_endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 50);
        assert!((s.beta(1) - 1e-4).abs() < 1e-15);
        assert!((s.beta(50) - 0.5).abs() < 1e-12);
        for t in 2..=50 {
            assert!(s.beta(t) > s.beta(t - 1));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::quadratic(1, 1e-4, 0.5).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!(NoiseSchedule::quadratic(0, 1e-4, 0.5).is_err());
        assert!(NoiseSchedule::quadratic(10, 0.6, 0.5).is_err());
    }

    #[test]
    fn noise_only_on_targets() {
        let obj = Csdi {
            schedule: NoiseSchedule::default(),
        };
        let split = SplitMasks {
            target: vec![true, false, false],
            cond: vec![false, true, false],
        };
        let x = [0.3, -1.2, 0.0];
        let mut feats = vec![0.0; 8 + 9];
        let mut target = vec![9.0; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        obj.sample_row(&x, &split, 8, &mut rng, &mut feats, &mut target)
            .unwrap();
        assert_eq!(&target[1..], &[0.0, 0.0]);
        assert_eq!(&feats[8 + 1..8 + 3], &[0.0, 0.0]);
        assert_eq!(&feats[8 + 3..8 + 6], &[0.0, -1.2, 0.0]);
        assert_eq!(&feats[8 + 6..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn middle_beta_matches_formula() {
        let s = NoiseSchedule::default();
        let frac = 24.0 / 49.0;
        let expect = ((1e-4f64).sqrt() * (1.0 - frac) + 0.5f64.sqrt() * frac).powi(2);
        assert!((s.beta(25) - expect).abs() < 1e-15);
        let ab: f64 = (1..=50).map(|t| 1.0 - s.beta(t)).product();
        assert!((s.alpha_bar(50) - ab).abs() < 1e-15);
        assert!(ab > 0.0 && ab < 1.0);
    }

    #[test]
    fn exact_noise_prediction_has_zero_loss() {
        use crate::cfm::cfmi_loss;
        use crate::tensor::Tensor;
        let split = SplitMasks {
            target: vec![true, true],
            cond: vec![false, false],
        };
        let eps = Tensor::matrix(1, 2, vec![0.4, -1.1]).unwrap();
        assert_eq!(
            cfmi_loss(&eps, &eps, std::slice::from_ref(&split)).unwrap(),
            0.0
        );
    }

    #[test]
    fn first_step_is_near_identity() {
        let s = NoiseSchedule::default();
        let ab = s.alpha_bar(1);
        let x = 0.8;
        let eps = 1.3;
        let noisy = ab.sqrt() * x + (1.0 - ab).sqrt() * eps;
        assert!((noisy - x).abs() <= 1e-2 * eps.abs() + 1e-4);
    }

    fn tiny_net() -> FieldNetwork {
        use crate::field::FieldConfig;
        let cfg = FieldConfig {
            dim: 3,
            hidden: 16,
            blocks: 1,
            time_dim: 8,
        };
        FieldNetwork::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn ancestral_sampler_keeps_observed_rows() {
        use crate::imputer::impute_row;
        let net = tiny_net();
        let sampler = AncestralSampler {
            net: &net,
            schedule: NoiseSchedule::default(),
        };
        let row = [0.1, 0.2, 0.3];
        let out = impute_row(
            &sampler,
            &row,
            &[true; 3],
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out, row);
        let a = impute_row(
            &sampler,
            &row,
            &[true, false, false],
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = impute_row(
            &sampler,
            &row,
            &[true, false, false],
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], 0.1);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
