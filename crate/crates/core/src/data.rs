//! Incomplete datasets: CSV ingestion, standardisation and MCAR / MAR
//! amputation of complete data.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, MissingnessMask};

pub const DEFAULT_MISSING_TOKENS: &[&str] = &["", "NaN", "NA"];

/// Retries allowed when an MCAR draw leaves a row with nothing observed.
const MAX_ROW_REDRAWS: usize = 100;

/// Data matrix with NaN in missing cells, its mask, and per-column
/// statistics of the observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompleteDataset {
    data: Matrix,
    mask: MissingnessMask,
    col_mean: Vec<f64>,
    col_std: Vec<f64>,
    names: Vec<String>,
}

/// Complete matrix aligned cell-for-cell with an amputated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPairing {
    pub complete: Matrix,
}

impl GroundTruthPairing {
    /// Observed cells of `incomplete` agree exactly with the complete data.
    pub fn is_consistent(&self, incomplete: &IncompleteDataset) -> bool {
        let (n, d) = self.complete.shape();
        if incomplete.data.shape() != (n, d) {
            return false;
        }
        (0..n).all(|i| {
            (0..d).all(|j| {
                !incomplete.mask.is_observed(i, j)
                    || incomplete.data.get(i, j) == self.complete.get(i, j)
            })
        })
    }
}

pub fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

impl IncompleteDataset {
    /// Builds a dataset from a matrix whose missing cells are NaN.
    pub fn from_matrix(data: Matrix, names: Vec<String>) -> Result<Self> {
        let (n, d) = data.shape();
        if n == 0 || d == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        if names.len() != d {
            return Err(Error::invalid(format!(
                "{} column names for {d} columns",
                names.len()
            )));
        }
        if data.data().iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("dataset contains infinite values"));
        }
        let mask = MissingnessMask::from_nan(&data);
        let mut col_mean = Vec::with_capacity(d);
        let mut col_std = Vec::with_capacity(d);
        for (j, name) in names.iter().enumerate() {
            let obs: Vec<f64> = (0..n)
                .filter(|&i| mask.is_observed(i, j))
                .map(|i| data.get(i, j))
                .collect();
            if obs.is_empty() {
                return Err(Error::invalid(format!(
                    "column `{name}` has no observed values"
                )));
            }
            let (lo, hi) = obs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            if lo == hi {
                return Err(Error::ZeroVariance(name.clone()));
            }
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / obs.len() as f64;
            col_mean.push(mean);
            col_std.push(var.sqrt());
        }
        Ok(Self {
            data,
            mask,
            col_mean,
            col_std,
            names,
        })
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn mask(&self) -> &MissingnessMask {
        &self.mask
    }

    pub fn col_mean(&self) -> &[f64] {
        &self.col_mean
    }

    pub fn col_std(&self) -> &[f64] {
        &self.col_std
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Data on the standardised scale; missing cells stay NaN.
    pub fn standardized(&self) -> Matrix {
        self.standardize(&self.data)
    }

    /// Applies this dataset's column statistics to any matrix of the same width.
    pub fn standardize(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        let d = self.cols();
        for row in out.data_mut().chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.col_mean[j]) / self.col_std[j];
            }
        }
        out
    }

    pub fn unstandardize(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        let d = self.cols();
        for row in out.data_mut().chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.col_std[j] + self.col_mean[j];
            }
        }
        out
    }
}

fn check_complete(complete: &Matrix) -> Result<()> {
    if complete.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("amputation needs a complete, finite matrix"));
    }
    Ok(())
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!(
            "missingness rate must lie in (0, 1), got {rate}"
        )));
    }
    Ok(())
}

fn apply_mask(
    complete: &Matrix,
    bits: Vec<bool>,
    names: Vec<String>,
) -> Result<(IncompleteDataset, GroundTruthPairing)> {
    let (n, d) = complete.shape();
    let mask = MissingnessMask::new(n, d, bits)?;
    let mut data = complete.clone();
    for i in 0..n {
        for j in 0..d {
            if !mask.is_observed(i, j) {
                data.set(i, j, f64::NAN);
            }
        }
    }
    let ds = IncompleteDataset::from_matrix(data, names)?;
    Ok((
        ds,
        GroundTruthPairing {
            complete: complete.clone(),
        },
    ))
}

/// Masks each cell independently with probability `rate`. Rows that end up
/// with nothing observed are redrawn.
pub fn ampute_mcar(
    complete: &Matrix,
    rate: f64,
    seed: u64,
) -> Result<(IncompleteDataset, GroundTruthPairing)> {
    ampute_mcar_named(complete, rate, seed, default_names(complete.cols()))
}

pub fn ampute_mcar_named(
    complete: &Matrix,
    rate: f64,
    seed: u64,
    names: Vec<String>,
) -> Result<(IncompleteDataset, GroundTruthPairing)> {
    check_rate(rate)?;
    check_complete(complete)?;
    let (n, d) = complete.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = Vec::with_capacity(n * d);
    let mut row = vec![true; d];
    let mut stuck = 0usize;
    for _ in 0..n {
        for attempt in 0..=MAX_ROW_REDRAWS {
            for b in row.iter_mut() {
                *b = !rng.random_bool(rate);
            }
            if row.iter().any(|&b| b) {
                break;
            }
            if attempt == MAX_ROW_REDRAWS {
                stuck += 1;
            }
        }
        bits.extend_from_slice(&row);
    }
    if stuck > 0 {
        log::warn!("{stuck} rows stayed fully missing after {MAX_ROW_REDRAWS} redraws");
    }
    apply_mask(complete, bits, names)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Number of leading columns kept fully observed under MAR.
pub fn mar_predictor_count(d: usize) -> usize {
    d.div_ceil(2)
}

/// MAR amputation: the first half of the columns (rounded up) stays
/// observed; each remaining cell goes missing with probability
/// `logistic(a + sum of standardised predictors)`, with `a` fitted by
/// bisection so the expected missing fraction of those cells is `rate`.
pub fn ampute_mar(
    complete: &Matrix,
    rate: f64,
    seed: u64,
) -> Result<(IncompleteDataset, GroundTruthPairing)> {
    ampute_mar_named(complete, rate, seed, default_names(complete.cols()))
}

pub fn ampute_mar_named(
    complete: &Matrix,
    rate: f64,
    seed: u64,
    names: Vec<String>,
) -> Result<(IncompleteDataset, GroundTruthPairing)> {
    let probs = mar_probabilities(complete, rate)?;
    let (n, d) = complete.shape();
    let n_pred = mar_predictor_count(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![true; n * d];
    for (i, &p) in probs.iter().enumerate() {
        for j in n_pred..d {
            bits[i * d + j] = !rng.random_bool(p);
        }
    }
    apply_mask(complete, bits, names)
}

/// Per-row missingness probability of the amputable MAR columns.
pub fn mar_probabilities(complete: &Matrix, rate: f64) -> Result<Vec<f64>> {
    check_rate(rate)?;
    check_complete(complete)?;
    let (n, d) = complete.shape();
    if d < 2 {
        return Err(Error::invalid("MAR amputation needs at least 2 columns"));
    }
    if n == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut score = vec![0.0; n];
    for j in 0..mar_predictor_count(d) {
        let col = complete.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let std = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        if std > 0.0 {
            for (s, v) in score.iter_mut().zip(&col) {
                *s += (v - mean) / std;
            }
        }
    }

    let mean_prob = |a: f64| score.iter().map(|s| logistic(a + s)).sum::<f64>() / n as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);
    Ok(score.iter().map(|s| logistic(intercept + s)).collect())
}

fn csv_err(e: csv::Error) -> Error {
    let (row, column) = e.position().map_or((0, 0), |p| (p.line() as usize, 0));
    Error::Csv {
        row,
        column,
        message: e.to_string(),
    }
}

/// Header row plus numeric body; `missing_tokens` mark missing cells.
pub fn read_csv_matrix(path: &Path, missing_tokens: &[&str]) -> Result<(Vec<String>, Matrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::invalid(format!("{other:?}")),
        })?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
        return Err(Error::invalid(format!("{} is empty", path.display())));
    }
    let d = names.len();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != d {
            return Err(Error::Csv {
                row: r + 1,
                column: rec.len(),
                message: format!("expected {d} fields"),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            let f = field.trim();
            if missing_tokens.contains(&f) {
                data.push(f64::NAN);
                continue;
            }
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                Ok(v) if v.is_nan() => data.push(f64::NAN),
                _ => {
                    return Err(Error::Csv {
                        row: r + 1,
                        column: c + 1,
                        message: format!("non-numeric value `{f}` in column `{}`", names[c]),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::invalid(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    Ok((names, Matrix::new(rows, d, data)?))
}

pub fn load_csv(path: &Path, missing_tokens: &[&str]) -> Result<IncompleteDataset> {
    let (names, m) = read_csv_matrix(path, missing_tokens)?;
    IncompleteDataset::from_matrix(m, names)
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        // shortest representation that round-trips
        format!("{v}")
    }
}

/// Writes a matrix with a header; NaN cells become empty fields.
pub fn write_csv_matrix(path: &Path, names: &[String], m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(names).map_err(csv_err)?;
    for row in m.iter_rows() {
        w.write_record(row.iter().map(|&v| format_cell(v)))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mask_csv(path: &Path, names: &[String], mask: &MissingnessMask) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(names).map_err(csv_err)?;
    for i in 0..mask.rows() {
        w.write_record(mask.row(i).iter().map(|&b| if b { "1" } else { "0" }))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mask_csv(path: &Path) -> Result<(Vec<String>, MissingnessMask)> {
    let (names, m) = read_csv_matrix(path, &[])?;
    let mut bits = Vec::with_capacity(m.data().len());
    for (k, &v) in m.data().iter().enumerate() {
        match v {
            x if x == 1.0 => bits.push(true),
            x if x == 0.0 => bits.push(false),
            _ => {
                return Err(Error::Csv {
                    row: k / m.cols() + 1,
                    column: k % m.cols() + 1,
                    message: format!("mask value {v} is not 0 or 1"),
                })
            }
        }
    }
    Ok((names, MissingnessMask::new(m.rows(), m.cols(), bits)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Matrix::new(n, d, data).unwrap()
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_tokens_become_mask() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "a,b\n1,\n3,4\n");
        let (names, m) = read_csv_matrix(&p, DEFAULT_MISSING_TOKENS).unwrap();
        assert_eq!(names, ["a", "b"]);
        let mask = MissingnessMask::from_nan(&m);
        assert_eq!(mask.bits(), &[true, false, true, true]);
    }

    #[test]
    fn csv_zero_variance_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "a,b\n1,5\n3,5\n2,NA\n");
        let err = load_csv(&p, DEFAULT_MISSING_TOKENS).unwrap_err();
        assert!(err.to_string().contains("zero variance column"), "{err}");
    }

    #[test]
    fn csv_complete_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "a,b\n1,2\n3,6\n");
        let ds = load_csv(&p, DEFAULT_MISSING_TOKENS).unwrap();
        assert_eq!(ds.mask().missing_count(), 0);
        assert_eq!(ds.col_mean(), &[2.0, 4.0]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "a,b\n1,2\n3,x\n");
        match load_csv(&p, DEFAULT_MISSING_TOKENS).unwrap_err() {
            Error::Csv { row, column, .. } => assert_eq!((row, column), (2, 2)),
            e => panic!("unexpected {e}"),
        }
        let p = write(dir.path(), "empty.csv", "");
        assert!(load_csv(&p, DEFAULT_MISSING_TOKENS).is_err());
        let p = write(dir.path(), "header.csv", "a,b\n");
        assert!(load_csv(&p, DEFAULT_MISSING_TOKENS).is_err());
    }

    #[test]
    fn two_point_zscore_uses_population_std() {
        let m = Matrix::new(2, 2, vec![2.0, 0.0, 4.0, 1.0]).unwrap();
        let ds = IncompleteDataset::from_matrix(m, default_names(2)).unwrap();
        assert_eq!(ds.standardized().column(0), vec![-1.0, 1.0]);
    }

    #[test]
    fn standardize_round_trip_keeps_nan() {
        let m = Matrix::new(3, 2, vec![1.5, f64::NAN, -2.0, 7.0, 10.25, 3.0]).unwrap();
        let ds = IncompleteDataset::from_matrix(m.clone(), default_names(2)).unwrap();
        let z = ds.standardized();
        assert!(z.get(0, 1).is_nan());
        let back = ds.unstandardize(&z);
        for (a, b) in back.data().iter().zip(m.data()) {
            if b.is_nan() {
                assert!(a.is_nan());
            } else {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // observed standardised columns: mean 0, std 1
        let col: Vec<f64> = z.column(0);
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mcar_rate_binomial_bound() {
        let m = normal_matrix(1000, 10, 1);
        let (ds, truth) = ampute_mcar(&m, 0.25, 7).unwrap();
        let missing = ds.mask().missing_count();
        assert!((2250..=2750).contains(&missing), "{missing}");
        assert!(truth.is_consistent(&ds));
        // per-column rates within 3 sigma
        let sigma = (0.25f64 * 0.75 / 1000.0).sqrt();
        for j in 0..10 {
            let miss = (0..1000).filter(|&i| !ds.mask().is_observed(i, j)).count() as f64 / 1000.0;
            assert!(
                (miss - 0.25).abs() < 3.0 * sigma + 1e-3,
                "column {j}: {miss}"
            );
        }
    }

    #[test]
    fn mcar_tiny_rate_and_determinism() {
        let m = normal_matrix(20, 3, 2);
        let (ds, _) = ampute_mcar(&m, 1e-9, 3).unwrap();
        assert_eq!(ds.mask().missing_count(), 0);
        let (a, _) = ampute_mcar(&m, 0.5, 11).unwrap();
        let (b, _) = ampute_mcar(&m, 0.5, 11).unwrap();
        assert_eq!(a.mask(), b.mask());
        assert!(a.mask().empty_rows().is_empty());
    }

    #[test]
    fn rate_out_of_range() {
        let m = normal_matrix(5, 2, 0);
        for r in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            assert!(ampute_mcar(&m, r, 0).is_err());
            assert!(ampute_mar(&m, r, 0).is_err());
        }
    }

    #[test]
    fn mar_two_columns() {
        let m = normal_matrix(4000, 2, 5);
        let (ds, truth) = ampute_mar(&m, 0.25, 9).unwrap();
        assert!(truth.is_consistent(&ds));
        let mask = ds.mask();
        assert!((0..4000).all(|i| mask.is_observed(i, 0)));
        let miss = (0..4000).filter(|&i| !mask.is_observed(i, 1)).count() as f64 / 4000.0;
        assert!((miss - 0.25).abs() < 0.025, "{miss}");
        assert!(ampute_mar(&normal_matrix(10, 1, 0), 0.25, 0).is_err());
    }

    #[test]
    fn mar_constant_predictor_is_mcar() {
        let mut m = normal_matrix(500, 2, 6);
        for i in 0..500 {
            m.set(i, 0, 1.0);
        }
        let p = mar_probabilities(&m, 0.3).unwrap();
        assert!(p.iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn mar_calibrates_expected_rate() {
        let m = normal_matrix(300, 5, 3);
        let p = mar_probabilities(&m, 0.25).unwrap();
        let mean = p.iter().sum::<f64>() / 300.0;
        assert!((mean - 0.25).abs() < 1e-9);
    }

    #[test]
    fn mar_missingness_tracks_predictor() {
        let m = normal_matrix(5000, 2, 12);
        let (ds, _) = ampute_mar(&m, 0.25, 13).unwrap();
        let x: Vec<f64> = m.column(0);
        let y: Vec<f64> = (0..5000)
            .map(|i| {
                if ds.mask().is_observed(i, 1) {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let n = 5000.0;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
        let sy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
        let r = cov / (sx * sy);
        // two-sided p < 0.01 for large n: |t| > 2.576
        let t = r * ((n - 2.0) / (1.0 - r * r)).sqrt();
        assert!(t > 2.576, "r = {r}, t = {t}");
    }

    #[test]
    fn mean_fill_rmse_is_about_one() {
        let m = normal_matrix(2000, 5, 21);
        let (ds, truth) = ampute_mcar(&m, 0.25, 22).unwrap();
        let zt = ds.standardize(&truth.complete);
        let mut se = 0.0;
        let mut cnt = 0.0;
        for i in 0..2000 {
            for j in 0..5 {
                if !ds.mask().is_observed(i, j) {
                    se += zt.get(i, j).powi(2);
                    cnt += 1.0;
                }
            }
        }
        let rmse = (se / cnt).sqrt();
        assert!((rmse - 1.0).abs() < 0.05, "{rmse}");
    }

    #[test]
    fn mask_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.csv");
        let mask = MissingnessMask::new(2, 2, vec![true, false, false, true]).unwrap();
        let names = default_names(2);
        write_mask_csv(&p, &names, &mask).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x0,x1\n1,0\n0,1\n");
        assert_eq!(read_mask_csv(&p).unwrap().1, mask);
    }
}
