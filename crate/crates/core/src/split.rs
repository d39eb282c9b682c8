//! Target / conditioning splits of a row's observed dimensions.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-row target and conditioning masks. Both are zero on missing dims,
/// disjoint, and together cover every observed dim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitMasks {
    pub target: Vec<bool>,
    pub cond: Vec<bool>,
}

impl SplitMasks {
    pub fn target_count(&self) -> usize {
        self.target.iter().filter(|&&b| b).count()
    }

    /// Checks the split invariants against the row's observation mask.
    pub fn is_valid_for(&self, mask: &[bool]) -> bool {
        self.target.len() == mask.len()
            && self.cond.len() == mask.len()
            && self.target_count() >= 1
            && mask
                .iter()
                .zip(self.target.iter().zip(&self.cond))
                .all(|(&m, (&t, &c))| !(t && c) && (t || c) == m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "split", rename_all = "snake_case")]
#[derive(Default)]
pub enum SplitStrategy {
    #[default]
    Random,
    RandomHistorical {
        #[serde(default = "default_mix_prob")]
        mix_prob: f64,
    },
}

fn default_mix_prob() -> f64 {
    0.5
}

impl SplitStrategy {
    /// Split `mask` using `partner`, a mask of another training row, when
    /// the strategy needs one.
    pub fn split<R: Rng + ?Sized>(
        &self,
        mask: &[bool],
        partner: &[bool],
        rng: &mut R,
    ) -> Result<SplitMasks> {
        match *self {
            SplitStrategy::Random => split_random(mask, rng),
            SplitStrategy::RandomHistorical { mix_prob } => {
                split_random_historical(mask, partner, mix_prob, rng)
            }
        }
    }

    pub fn needs_partner(&self) -> bool {
        matches!(self, SplitStrategy::RandomHistorical { .. })
    }
}

/// Number of targets for a row with `observed` dims given `u ~ U(0, 1)`.
pub fn target_count_for(u: f64, observed: usize) -> usize {
    ((u * observed as f64).round() as usize).clamp(1, observed)
}

pub fn split_random<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> Result<SplitMasks> {
    let observed: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(j, _)| j)
        .collect();
    if observed.is_empty() {
        return Err(Error::invalid(
            "cannot split a row with no observed dimensions",
        ));
    }
    let u: f64 = rng.random();
    let k = target_count_for(u, observed.len());
    let mut target = vec![false; mask.len()];
    for pick in index::sample(rng, observed.len(), k) {
        target[observed[pick]] = true;
    }
    let cond = mask.iter().zip(&target).map(|(&m, &t)| m && !t).collect();
    Ok(SplitMasks { target, cond })
}

/// With probability `mix_prob` a random split; otherwise condition on the
/// dims observed in both `mask` and `partner` and target the rest of the
/// row's observed dims. An empty target falls back to a random split.
pub fn split_random_historical<R: Rng + ?Sized>(
    mask: &[bool],
    partner: &[bool],
    mix_prob: f64,
    rng: &mut R,
) -> Result<SplitMasks> {
    if partner.len() != mask.len() {
        return Err(Error::shape(
            "split_random_historical",
            &[mask.len()],
            &[partner.len()],
        ));
    }
    if !(0.0..=1.0).contains(&mix_prob) {
        return Err(Error::invalid(format!(
            "mix_prob must lie in [0, 1], got {mix_prob}"
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid(
            "cannot split a row with no observed dimensions",
        ));
    }
    if rng.random_bool(mix_prob) {
        return split_random(mask, rng);
    }
    historical_split(mask, partner).map_or_else(|| split_random(mask, rng), Ok)
}

/// The intersection rule alone; `None` when it leaves no target.
pub fn historical_split(mask: &[bool], partner: &[bool]) -> Option<SplitMasks> {
    let cond: Vec<bool> = mask.iter().zip(partner).map(|(&m, &o)| m && o).collect();
    let target: Vec<bool> = mask.iter().zip(partner).map(|(&m, &o)| m && !o).collect();
    target
        .iter()
        .any(|&t| t)
        .then_some(SplitMasks { target, cond })
}
