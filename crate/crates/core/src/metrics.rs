//! Distributional and point-wise scores of multiple imputations against the
//! complete ground truth. All inputs are expected on the standardised scale.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, MissingnessMask};
use crate::ot;

/// Largest side handled by the exact transport solver.
pub const W2_MAX_EXACT: usize = 512;
/// Points used for the median-distance bandwidth.
const BANDWIDTH_SAMPLE: usize = 1000;

fn check_inputs(imputations: &[Matrix], truth: &Matrix, mask: &MissingnessMask) -> Result<()> {
    if imputations.is_empty() {
        return Err(Error::invalid("need at least one imputation"));
    }
    let shape = truth.shape();
    if (mask.rows(), mask.cols()) != shape {
        return Err(Error::shape(
            "metrics",
            &[shape.0, shape.1],
            &[mask.rows(), mask.cols()],
        ));
    }
    if let Some(bad) = imputations.iter().find(|m| m.shape() != shape) {
        return Err(Error::shape(
            "metrics",
            &[shape.0, shape.1],
            &[bad.rows(), bad.cols()],
        ));
    }
    if mask.missing_count() == 0 {
        return Err(Error::NothingToScore);
    }
    Ok(())
}

fn missing_cells(mask: &MissingnessMask) -> impl Iterator<Item = usize> + '_ {
    mask.bits()
        .iter()
        .enumerate()
        .filter(|(_, &o)| !o)
        .map(|(c, _)| c)
}

/// RMSE over missing cells of each copy, one value per copy.
pub fn rmse_per_copy(
    imputations: &[Matrix],
    truth: &Matrix,
    mask: &MissingnessMask,
) -> Result<Vec<f64>> {
    check_inputs(imputations, truth, mask)?;
    let n_mis = mask.missing_count() as f64;
    Ok(imputations
        .iter()
        .map(|imp| {
            let sse: f64 = missing_cells(mask)
                .map(|c| (imp.data()[c] - truth.data()[c]).powi(2))
                .sum();
            (sse / n_mis).sqrt()
        })
        .collect())
}

pub fn avg_rmse(imputations: &[Matrix], truth: &Matrix, mask: &MissingnessMask) -> Result<f64> {
    let per = rmse_per_copy(imputations, truth, mask)?;
    Ok(mean(&per))
}

/// Empirical CRPS of the sample set `samples` at the realised value `y`.
/// Reorders `samples`.
pub fn crps_sample(samples: &mut [f64], y: f64) -> f64 {
    let k = samples.len() as f64;
    samples.sort_unstable_by(f64::total_cmp);
    let abs_err: f64 = samples.iter().map(|x| (x - y).abs()).sum();
    // sum_ij |x_i - x_j| = 2 sum_i (2i - K + 1) x_(i)
    let spread: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * i as f64 - k + 1.0) * x)
        .sum();
    abs_err / k - spread / (k * k)
}

/// CRPS averaged over missing cells, treating the copies as samples.
pub fn crps(imputations: &[Matrix], truth: &Matrix, mask: &MissingnessMask) -> Result<f64> {
    check_inputs(imputations, truth, mask)?;
    let mut buf = vec![0.0; imputations.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    for c in missing_cells(mask) {
        for (b, imp) in buf.iter_mut().zip(imputations) {
            *b = imp.data()[c];
        }
        total += crps_sample(&mut buf, truth.data()[c]);
        count += 1;
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", content = "bandwidth", rename_all = "snake_case")]
pub enum Kernel {
    /// `-|x - y|`
    Energy,
    /// `exp(-|x - y|^2 / (2 h^2))`
    Gaussian(f64),
    /// `exp(-|x - y| / h)`
    Laplacian(f64),
}

impl Kernel {
    #[inline]
    fn eval_sq(&self, d2: f64) -> f64 {
        match *self {
            Kernel::Energy => -d2.sqrt(),
            Kernel::Gaussian(h) => (-d2 / (2.0 * h * h)).exp(),
            Kernel::Laplacian(h) => (-d2.sqrt() / h).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Energy => Ok(()),
            Kernel::Gaussian(h) | Kernel::Laplacian(h) if h > 0.0 && h.is_finite() => Ok(()),
            _ => Err(Error::invalid(format!(
                "kernel bandwidth must be positive, got {self:?}"
            ))),
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean kernel value over all pairs; row sums are reduced in a fixed order
/// so the result does not depend on the thread count.
fn mean_kernel(a: &Matrix, b: &Matrix, kernel: Kernel) -> f64 {
    let rows: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            b.iter_rows()
                .map(|bj| kernel.eval_sq(sq_dist(ai, bj)))
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (a.rows() * b.rows()) as f64
}

/// Squared MMD as a biased V-statistic. Round-off negatives are clamped.
pub fn mmd(x: &Matrix, y: &Matrix, kernel: Kernel) -> Result<f64> {
    kernel.validate()?;
    if x.cols() != y.cols() {
        return Err(Error::shape("mmd", &[x.cols()], &[y.cols()]));
    }
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::invalid(
            "mmd needs at least two samples on each side",
        ));
    }
    let v = mean_kernel(x, x, kernel) + mean_kernel(y, y, kernel) - 2.0 * mean_kernel(x, y, kernel);
    if v < 0.0 {
        if v < -1e-9 {
            log::warn!("MMD^2 estimate {v:e} is negative; clamping to 0");
        }
        return Ok(0.0);
    }
    Ok(v)
}

/// Median pairwise distance of (a seeded subsample of) `y`.
pub fn median_bandwidth(y: &Matrix, seed: u64) -> Result<f64> {
    if y.rows() < 2 {
        return Err(Error::invalid("bandwidth needs at least two samples"));
    }
    let sub = if y.rows() > BANDWIDTH_SAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        y.select_rows(&index::sample(&mut rng, y.rows(), BANDWIDTH_SAMPLE).into_vec())
    } else {
        y.clone()
    };
    let mut d = Vec::with_capacity(sub.rows() * (sub.rows() - 1) / 2);
    for i in 0..sub.rows() {
        for j in i + 1..sub.rows() {
            d.push(sq_dist(sub.row(i), sub.row(j)).sqrt());
        }
    }
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, f64::total_cmp);
    let h = if d.len() % 2 == 1 {
        d[mid]
    } else {
        let lo = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + d[mid])
    };
    if !(h > 0.0) {
        return Err(Error::Numerical("median pairwise distance is zero".into()));
    }
    Ok(h)
}

/// Wasserstein-2 distance between uniform empirical measures.
pub fn wasserstein2(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.cols() != y.cols() {
        return Err(Error::shape("wasserstein2", &[x.cols()], &[y.cols()]));
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::invalid(
            "wasserstein2 needs at least one point on each side",
        ));
    }
    let (n, m) = (x.rows(), y.rows());
    let mut cost = vec![0.0; n * m];
    cost.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        for (j, c) in row.iter_mut().enumerate() {
            *c = sq_dist(x.row(i), y.row(j));
        }
    });
    Ok(ot::transport_cost(&cost, n, m)?.max(0.0).sqrt())
}

/// `wasserstein2` with the size cap applied: beyond `max_exact` points
/// per side a seeded uniform subsample is used if allowed. Inputs with the
/// same row count are treated as row-aligned and subsampled jointly.
pub fn wasserstein2_capped(
    x: &Matrix,
    y: &Matrix,
    max_exact: usize,
    subsample: bool,
    seed: u64,
) -> Result<f64> {
    if x.rows() <= max_exact && y.rows() <= max_exact {
        return wasserstein2(x, y);
    }
    if !subsample {
        return Err(Error::invalid(format!(
            "exact W2 is limited to {max_exact} points per side ({} vs {}); enable subsampling",
            x.rows(),
            y.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if x.rows() == y.rows() {
        // Row-aligned inputs (a completion and its truth) share one subsample.
        let idx = index::sample(&mut rng, x.rows(), max_exact).into_vec();
        return wasserstein2(&x.select_rows(&idx), &y.select_rows(&idx));
    }
    let mut pick = |m: &Matrix| {
        if m.rows() > max_exact {
            m.select_rows(&index::sample(&mut rng, m.rows(), max_exact).into_vec())
        } else {
            m.clone()
        }
    };
    let (xs, ys) = (pick(x), pick(y));
    wasserstein2(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSelection {
    pub w2: bool,
    pub rmse: bool,
    pub crps: bool,
    pub mmd: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self {
            w2: true,
            rmse: true,
            crps: true,
            mmd: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub metrics: MetricSelection,
    /// Kernel bandwidth; the median heuristic on the truth when unset.
    pub bandwidth: Option<f64>,
    pub w2_max_exact: usize,
    pub w2_subsample: bool,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            metrics: MetricSelection::default(),
            bandwidth: None,
            w2_max_exact: W2_MAX_EXACT,
            w2_subsample: false,
            seed: 0,
        }
    }
}

/// Config echo with the resolved bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMetricConfig {
    #[serde(flatten)]
    pub requested: MetricConfig,
    pub resolved_bandwidth: Option<f64>,
    pub copies: usize,
    pub missing_cells: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerCopy {
    pub w2: Vec<f64>,
    pub rmse: Vec<f64>,
    pub mmd_energy: Vec<f64>,
    pub mmd_gaussian: Vec<f64>,
    pub mmd_laplacian: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub w2: Option<f64>,
    pub avg_rmse: Option<f64>,
    pub crps: Option<f64>,
    pub mmd_energy: Option<f64>,
    pub mmd_gaussian: Option<f64>,
    pub mmd_laplacian: Option<f64>,
    pub per_copy: PerCopy,
    pub config: EffectiveMetricConfig,
}

pub const CSV_COLUMNS: [&str; 6] = [
    "w2",
    "avg_rmse",
    "crps",
    "mmd_energy",
    "mmd_gaussian",
    "mmd_laplacian",
];

impl MetricReport {
    pub fn values(&self) -> [Option<f64>; 6] {
        [
            self.w2,
            self.avg_rmse,
            self.crps,
            self.mmd_energy,
            self.mmd_gaussian,
            self.mmd_laplacian,
        ]
    }

    /// Header and one data row; disabled metrics are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = CSV_COLUMNS.join(",");
        s.push('\n');
        let cells: Vec<String> = self
            .values()
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        let _ = writeln!(s, "{}", cells.join(","));
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores `imputations` of the cells missing under `mask` against `truth`.
pub fn evaluate(
    imputations: &[Matrix],
    truth: &Matrix,
    mask: &MissingnessMask,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    check_inputs(imputations, truth, mask)?;
    let sel = cfg.metrics;
    let mut per = PerCopy::default();
    let mut report = MetricReport {
        w2: None,
        avg_rmse: None,
        crps: None,
        mmd_energy: None,
        mmd_gaussian: None,
        mmd_laplacian: None,
        per_copy: PerCopy::default(),
        config: EffectiveMetricConfig {
            requested: cfg.clone(),
            resolved_bandwidth: None,
            copies: imputations.len(),
            missing_cells: mask.missing_count(),
        },
    };
    if sel.rmse {
        per.rmse = rmse_per_copy(imputations, truth, mask)?;
        report.avg_rmse = Some(mean(&per.rmse));
    }
    if sel.crps {
        report.crps = Some(crps(imputations, truth, mask)?);
    }
    if sel.w2 {
        per.w2 = imputations
            .iter()
            .map(|imp| {
                wasserstein2_capped(imp, truth, cfg.w2_max_exact, cfg.w2_subsample, cfg.seed)
            })
            .collect::<Result<_>>()?;
        report.w2 = Some(mean(&per.w2));
    }
    if sel.mmd {
        let h = match cfg.bandwidth {
            Some(h) => h,
            None => median_bandwidth(truth, cfg.seed)?,
        };
        report.config.resolved_bandwidth = Some(h);
        for imp in imputations {
            per.mmd_energy.push(mmd(imp, truth, Kernel::Energy)?);
            per.mmd_gaussian.push(mmd(imp, truth, Kernel::Gaussian(h))?);
            per.mmd_laplacian
                .push(mmd(imp, truth, Kernel::Laplacian(h))?);
        }
        report.mmd_energy = Some(mean(&per.mmd_energy));
        report.mmd_gaussian = Some(mean(&per.mmd_gaussian));
        report.mmd_laplacian = Some(mean(&per.mmd_laplacian));
    }
    report.per_copy = per;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(v: &[f64]) -> Matrix {
        Matrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn effective_config_round_trips() {
        let e = EffectiveMetricConfig {
            requested: MetricConfig::default(),
            resolved_bandwidth: Some(0.7),
            copies: 3,
            missing_cells: 10,
        };
        let back: EffectiveMetricConfig =
            serde_json::from_value(serde_json::to_value(&e).unwrap()).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<MetricConfig>(r#"{"seeed": 1}"#).is_err());
    }

    #[test]
    fn rmse_examples() {
        let truth = line(&[0.0, 5.0]);
        let mask = MissingnessMask::new(2, 1, vec![false, true]).unwrap();
        let imps = [line(&[1.0, 5.0]), line(&[-1.0, 9.0])];
        assert_eq!(avg_rmse(&imps, &truth, &mask).unwrap(), 1.0);
        let none = MissingnessMask::all_observed(2, 1);
        assert!(matches!(
            avg_rmse(&imps, &truth, &none),
            Err(Error::NothingToScore)
        ));
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_sample(&mut [2.0], 0.0), 2.0);
        assert_eq!(crps_sample(&mut [0.0, 2.0], 1.0), 0.5);
        assert_eq!(crps_sample(&mut [3.0, 3.0, 3.0], 3.0), 0.0);
    }

    #[test]
    fn w2_line_shift() {
        let x = line(&[0.0, 1.0]);
        assert_eq!(wasserstein2(&x, &line(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((wasserstein2(&x, &line(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w2_cap_requires_flag() {
        let x = line(&(0..20).map(f64::from).collect::<Vec<_>>());
        assert!(wasserstein2_capped(&x, &x, 10, false, 0).is_err());
        let a = wasserstein2_capped(&x, &x, 10, true, 3).unwrap();
        let b = wasserstein2_capped(&x, &x, 10, true, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mmd_identical_is_zero_and_bad_bandwidth_errors() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]).unwrap();
        for k in [
            Kernel::Energy,
            Kernel::Gaussian(1.0),
            Kernel::Laplacian(0.7),
        ] {
            assert!(mmd(&x, &x, k).unwrap().abs() < 1e-12);
        }
        assert!(mmd(&x, &x, Kernel::Gaussian(0.0)).is_err());
        assert!(mmd(&x, &x, Kernel::Laplacian(-1.0)).is_err());
    }

    #[test]
    fn wide_gaussian_kernel_vanishes() {
        let x = line(&[0.0, 1.0, 2.0]);
        let y = line(&[5.0, 6.0]);
        assert!(mmd(&x, &y, Kernel::Gaussian(1e6)).unwrap() < 1e-10);
    }

    #[test]
    fn perfect_report_is_zero() {
        let truth = Matrix::from_rows(&[
            vec![0.0, 1.0],
            vec![2.0, -1.0],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let mask = MissingnessMask::new(
            4,
            2,
            vec![true, false, false, true, true, true, false, true],
        )
        .unwrap();
        let r = evaluate(
            &[truth.clone(), truth.clone()],
            &truth,
            &mask,
            &MetricConfig::default(),
        )
        .unwrap();
        for v in r.values() {
            assert!(v.unwrap().abs() < 1e-9);
        }
        assert!(r.config.resolved_bandwidth.unwrap() > 0.0);
        let csv = r.to_csv();
        assert!(csv.starts_with("w2,avg_rmse,crps,mmd_energy,mmd_gaussian,mmd_laplacian\n"));
    }

    #[test]
    fn disabled_metrics_are_absent() {
        let truth = line(&[0.0, 1.0, 2.0]);
        let mask = MissingnessMask::new(3, 1, vec![false, true, true]).unwrap();
        let cfg = MetricConfig {
            metrics: MetricSelection {
                w2: false,
                mmd: false,
                ..MetricSelection::default()
            },
            ..MetricConfig::default()
        };
        let r = evaluate(&[line(&[1.0, 1.0, 2.0])], &truth, &mask, &cfg).unwrap();
        assert!(r.w2.is_none() && r.mmd_energy.is_none());
        assert_eq!(r.avg_rmse, Some(1.0));
        assert!(r.to_csv().ends_with(",1,1,,,\n"));
    }
}
