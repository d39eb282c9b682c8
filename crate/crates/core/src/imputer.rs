//! Multiple imputation by integrating the learned conditional flow.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfm::stream_rng;
use crate::data::IncompleteDataset;
use crate::error::{Error, Result};
use crate::field::{write_features, FieldNetwork};
use crate::matrix::{Matrix, MissingnessMask};
use crate::tensor::Tensor;

/// Rows per network call during imputation.
const IMPUTE_BATCH: usize = 256;

/// Fills the missing cells of a batch of standardised rows.
pub trait ConditionalSampler: Sync {
    fn name(&self) -> &'static str;

    /// `rows` already hold observed values; missing cells are overwritten.
    /// `rngs` has one stream per row.
    fn fill(
        &self,
        rows: &mut Matrix,
        mask: &MissingnessMask,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<()>;

    fn net(&self) -> &FieldNetwork;

    /// Integration or denoising steps per sample.
    fn n_steps(&self) -> usize;
}

/// Explicit Euler integration of the flow on the grid `t_k = k / n_steps`.
#[derive(Debug, Clone, Copy)]
pub struct EulerSampler<'a> {
    pub net: &'a FieldNetwork,
    pub n_steps: usize,
}

impl<'a> EulerSampler<'a> {
    pub fn new(net: &'a FieldNetwork, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        Ok(Self { net, n_steps })
    }
}

/// Initial Gaussian draw on the missing coordinates of each row.
pub(crate) fn init_missing(rows: &mut Matrix, mask: &MissingnessMask, rngs: &mut [ChaCha8Rng]) {
    for (i, rng) in rngs.iter_mut().enumerate() {
        let m = mask.row(i);
        for (v, &obs) in rows.row_mut(i).iter_mut().zip(m) {
            if !obs {
                *v = rng.sample(StandardNormal);
            }
        }
    }
}

/// Network inputs for imputation: the path lives on the missing dims, the
/// conditioning on the observed dims, and the mask input is `m`.
pub(crate) fn imputation_features(
    net: &FieldNetwork,
    rows: &Matrix,
    mask: &MissingnessMask,
    t: f64,
) -> Result<Tensor> {
    let (b, d) = rows.shape();
    let cfg = net.config();
    let width = cfg.input_width();
    let mut feats = vec![0.0; b * width];
    let mut missing = vec![false; d];
    for i in 0..b {
        let m = mask.row(i);
        for (x, &o) in missing.iter_mut().zip(m) {
            *x = !o;
        }
        write_features(
            &mut feats[i * width..(i + 1) * width],
            cfg.time_dim,
            t,
            rows.row(i),
            &missing,
            rows.row(i),
            m,
        )?;
    }
    Tensor::matrix(b, width, feats)
}

impl ConditionalSampler for EulerSampler<'_> {
    fn name(&self) -> &'static str {
        "cfmi"
    }

    fn net(&self) -> &FieldNetwork {
        self.net
    }

    fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn fill(
        &self,
        rows: &mut Matrix,
        mask: &MissingnessMask,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<()> {
        let d = rows.cols();
        init_missing(rows, mask, rngs);
        let dt = 1.0 / self.n_steps as f64;
        for k in 0..self.n_steps {
            let t = k as f64 * dt;
            let v = self
                .net
                .forward(imputation_features(self.net, rows, mask, t)?)?;
            for i in 0..rows.rows() {
                let m = mask.row(i);
                let vi = &v.data()[i * d..(i + 1) * d];
                for ((x, &o), &vel) in rows.row_mut(i).iter_mut().zip(m).zip(vi) {
                    if !o {
                        *x += dt * vel;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub copies: usize,
    pub seed: u64,
    /// Euler steps, or diffusion steps for the ancestral sampler.
    pub n_steps: usize,
    pub checkpoint: Option<String>,
    pub train_steps: Option<usize>,
    /// Rows with nothing observed, imputed from the unconditional flow.
    pub unconditional_rows: Vec<usize>,
}

/// `K` completed copies on the standardised scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub copies: Vec<Matrix>,
    pub provenance: Provenance,
}

impl ImputationSet {
    /// Copies mapped back to the dataset's original units.
    pub fn to_raw(&self, dataset: &IncompleteDataset) -> Vec<Matrix> {
        self.copies
            .iter()
            .map(|c| dataset.unstandardize(c))
            .collect()
    }
}

fn check_net(net: &FieldNetwork, d: usize) -> Result<()> {
    if net.dim() != d {
        return Err(Error::invalid(format!(
            "network dimension {} does not match data width {d}",
            net.dim()
        )));
    }
    if !net.is_finite() {
        return Err(Error::Numerical("network parameters are not finite".into()));
    }
    Ok(())
}

/// Completes one standardised row. Fully observed rows are returned as is.
pub fn impute_row<S: ConditionalSampler + ?Sized>(
    sampler: &S,
    x_obs_row: &[f64],
    mask_row: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = mask_row.len();
    if x_obs_row.len() != d {
        return Err(Error::shape("impute_row", &[x_obs_row.len()], &[d]));
    }
    check_net(sampler.net(), d)?;
    if mask_row.iter().all(|&o| o) {
        return Ok(x_obs_row.to_vec());
    }
    let mut rows = Matrix::new(1, d, x_obs_row.to_vec())?;
    let mask = MissingnessMask::new(1, d, mask_row.to_vec())?;
    sampler.fill(&mut rows, &mask, std::slice::from_mut(rng))?;
    if rows.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("imputed values are not finite".into()));
    }
    Ok(rows.data().to_vec())
}

/// Per-row RNG stream for copy `copy` of row `row`.
pub fn row_rng(seed: u64, copy: usize, row: usize) -> ChaCha8Rng {
    stream_rng(seed, (1 << 63) | ((copy as u64) << 40) | row as u64)
}

/// Draws `copies` completions of `dataset`. Each row uses its own RNG
/// stream, so results do not depend on batching or thread count.
pub fn impute_dataset<S: ConditionalSampler + ?Sized>(
    sampler: &S,
    dataset: &IncompleteDataset,
    copies: usize,
    seed: u64,
) -> Result<ImputationSet> {
    if copies == 0 {
        return Err(Error::invalid("need at least one imputation"));
    }
    let (n, d) = (dataset.rows(), dataset.cols());
    check_net(sampler.net(), d)?;
    let base = dataset.standardized();
    let mask = dataset.mask();
    let todo: Vec<usize> = (0..n).filter(|&i| mask.observed_in_row(i) < d).collect();
    let unconditional_rows = mask.empty_rows();
    if !unconditional_rows.is_empty() {
        log::warn!(
            "{} rows have no observed value; sampling them unconditionally",
            unconditional_rows.len()
        );
    }

    let mut out = Vec::with_capacity(copies);
    for k in 0..copies {
        let filled: Vec<Result<Matrix>> = todo
            .par_chunks(IMPUTE_BATCH)
            .map(|chunk| {
                let mut rows = base.select_rows(chunk);
                let sub_mask = mask.select_rows(chunk);
                let mut rngs: Vec<ChaCha8Rng> =
                    chunk.iter().map(|&i| row_rng(seed, k, i)).collect();
                sampler.fill(&mut rows, &sub_mask, &mut rngs)?;
                for (r, &i) in chunk.iter().enumerate() {
                    if rows.row(r).iter().any(|v| !v.is_finite()) {
                        return Err(Error::Row {
                            row: i,
                            source: Box::new(Error::Numerical(
                                "imputed values are not finite".into(),
                            )),
                        });
                    }
                }
                Ok(rows)
            })
            .collect();
        let mut copy = base.clone();
        for (chunk, rows) in todo.chunks(IMPUTE_BATCH).zip(filled) {
            let rows = rows?;
            for (r, &i) in chunk.iter().enumerate() {
                copy.row_mut(i).copy_from_slice(rows.row(r));
            }
        }
        out.push(copy);
    }
    let n_steps = sampler.n_steps();
    Ok(ImputationSet {
        copies: out,
        provenance: Provenance {
            method: sampler.name().to_string(),
            copies,
            seed,
            n_steps,
            checkpoint: None,
            train_steps: None,
            unconditional_rows,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use rand::SeedableRng;

    fn net(dim: usize) -> FieldNetwork {
        let cfg = FieldConfig {
            dim,
            hidden: 16,
            blocks: 2,
            time_dim: 8,
        };
        FieldNetwork::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    fn dataset() -> IncompleteDataset {
        let nan = f64::NAN;
        let m = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, nan, 1.0],
            vec![nan, nan, nan],
            vec![4.0, 0.0, nan],
            vec![3.0, 5.0, 2.0],
        ])
        .unwrap();
        IncompleteDataset::from_matrix(m, crate::data::default_names(3)).unwrap()
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(EulerSampler::new(&net(2), 0).is_err());
    }

    #[test]
    fn single_euler_step_identity() {
        let net = net(3);
        let sampler = EulerSampler::new(&net, 1).unwrap();
        let row = [0.5, 0.0, -0.2];
        let mask = [true, false, true];
        let out = impute_row(&sampler, &row, &mask, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0: f64 = rng.sample(StandardNormal);
        let start = Matrix::new(1, 3, vec![0.5, x0, -0.2]).unwrap();
        let m = MissingnessMask::new(1, 3, mask.to_vec()).unwrap();
        let v = net
            .forward(imputation_features(&net, &start, &m, 0.0).unwrap())
            .unwrap();
        assert!((out[1] - (x0 + v.data()[1])).abs() < 1e-12);
        assert_eq!((out[0], out[2]), (0.5, -0.2));
    }

    #[test]
    fn copies_preserve_observed_cells() {
        let ds = dataset();
        let net = net(3);
        let sampler = EulerSampler::new(&net, 10).unwrap();
        let one = impute_dataset(&sampler, &ds, 1, 3).unwrap();
        let five = impute_dataset(&sampler, &ds, 5, 3).unwrap();
        let base = ds.standardized();
        for c in one.copies.iter().chain(&five.copies) {
            for i in 0..ds.rows() {
                for j in 0..ds.cols() {
                    if ds.mask().is_observed(i, j) {
                        assert_eq!(c.get(i, j), base.get(i, j));
                    } else {
                        assert!(c.get(i, j).is_finite());
                    }
                }
            }
        }
        // Copy 0 does not depend on how many copies were requested.
        assert_eq!(one.copies[0], five.copies[0]);
        assert_eq!(five.provenance.unconditional_rows, vec![2]);
    }

    #[test]
    fn seeds_change_filled_values() {
        let ds = dataset();
        let net = net(3);
        let sampler = EulerSampler::new(&net, 10).unwrap();
        let a = impute_dataset(&sampler, &ds, 1, 0).unwrap();
        let b = impute_dataset(&sampler, &ds, 1, 1).unwrap();
        assert_ne!(a.copies[0].get(1, 1), b.copies[0].get(1, 1));
        let again = impute_dataset(&sampler, &ds, 1, 0).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let ds = dataset();
        let net = net(2);
        let sampler = EulerSampler::new(&net, 5).unwrap();
        assert!(impute_dataset(&sampler, &ds, 1, 0).is_err());
        assert!(impute_dataset(&EulerSampler::new(&net, 5).unwrap(), &ds, 0, 0).is_err());
    }
}
