//! Two-dimensional densities with known conditionals, grid integration,
//! kernel density estimates, and the end-to-end imputation demo.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfm::{train, TrainConfig};
use crate::data::ampute_mcar;
use crate::error::{Error, Result};
use crate::imputer::{impute_dataset, row_rng, ConditionalSampler, EulerSampler};
use crate::matrix::{Matrix, MissingnessMask};
use crate::metrics::{mmd, Kernel};
use crate::tensor::gemm;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityKind {
    /// `x1 ~ U(-half_width, half_width)`, `x2 = cos(freq x1) + N(0, noise^2)`.
    Cosine {
        half_width: f64,
        freq: f64,
        noise: f64,
    },
    /// Equal-weight rings: uniform angle, radius `r_k + N(0, width^2)`.
    Rings { radii: Vec<f64>, width: f64 },
    /// Equal-weight isotropic Gaussians.
    Mixture { means: Vec<[f64; 2]>, sigma: f64 },
    /// Independent Gaussian coordinates.
    Independent { mean: [f64; 2], sd: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density2D {
    pub name: String,
    pub kind: DensityKind,
    /// `[(x1_lo, x1_hi), (x2_lo, x2_hi)]`, holding essentially all mass.
    pub bounds: [(f64, f64); 2],
}

pub const BUILTIN: [&str; 3] = ["cosine", "two_ring", "gaussian_mixture"];

impl Density2D {
    pub fn cosine() -> Self {
        Self {
            name: "cosine".into(),
            kind: DensityKind::Cosine {
                half_width: 3.0,
                freq: 2.0,
                noise: 0.2,
            },
            bounds: [(-3.0, 3.0), (-2.2, 2.2)],
        }
    }

    pub fn two_ring() -> Self {
        Self {
            name: "two_ring".into(),
            kind: DensityKind::Rings {
                radii: vec![1.0, 2.0],
                width: 0.1,
            },
            bounds: [(-2.8, 2.8), (-2.8, 2.8)],
        }
    }

    pub fn gaussian_mixture() -> Self {
        Self {
            name: "gaussian_mixture".into(),
            kind: DensityKind::Mixture {
                means: vec![[1.5, 1.5], [1.5, -1.5], [-1.5, 1.5], [-1.5, -1.5]],
                sigma: 0.5,
            },
            bounds: [(-4.0, 4.0), (-4.0, 4.0)],
        }
    }

    pub fn independent(mean: [f64; 2], sd: [f64; 2]) -> Self {
        Self {
            name: "independent".into(),
            kind: DensityKind::Independent { mean, sd },
            bounds: [
                (mean[0] - 8.0 * sd[0], mean[0] + 8.0 * sd[0]),
                (mean[1] - 8.0 * sd[1], mean[1] + 8.0 * sd[1]),
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cosine" => Ok(Self::cosine()),
            "two_ring" => Ok(Self::two_ring()),
            "gaussian_mixture" => Ok(Self::gaussian_mixture()),
            other => Err(Error::invalid(format!(
                "unknown density `{other}`; expected one of {}",
                BUILTIN.join(", ")
            ))),
        }
    }

    /// Log density with respect to Lebesgue measure on the plane.
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        match &self.kind {
            DensityKind::Cosine {
                half_width,
                freq,
                noise,
            } => {
                if x[0].abs() > *half_width {
                    return f64::NEG_INFINITY;
                }
                -(2.0 * half_width).ln() + log_normal(x[1], (freq * x[0]).cos(), *noise)
            }
            DensityKind::Rings { radii, width } => {
                let r = x[0].hypot(x[1]);
                if r == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let p: f64 = radii
                    .iter()
                    .map(|&rk| log_normal(r, rk, *width).exp())
                    .sum::<f64>()
                    / radii.len() as f64;
                (p / (2.0 * PI * r)).ln()
            }
            DensityKind::Mixture { means, sigma } => {
                let p: f64 = means
                    .iter()
                    .map(|m| {
                        (log_normal(x[0], m[0], *sigma) + log_normal(x[1], m[1], *sigma)).exp()
                    })
                    .sum::<f64>()
                    / means.len() as f64;
                p.ln()
            }
            DensityKind::Independent { mean, sd } => {
                log_normal(x[0], mean[0], sd[0]) + log_normal(x[1], mean[1], sd[1])
            }
        }
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.log_density(x).exp()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };
        match &self.kind {
            DensityKind::Cosine {
                half_width,
                freq,
                noise,
            } => {
                let x1 = rng.random_range(-half_width..*half_width);
                [x1, (freq * x1).cos() + noise * z(rng)]
            }
            DensityKind::Rings { radii, width } => {
                let r = radii[rng.random_range(0..radii.len())] + width * z(rng);
                let theta = rng.random_range(0.0..2.0 * PI);
                [r * theta.cos(), r * theta.sin()]
            }
            DensityKind::Mixture { means, sigma } => {
                let m = means[rng.random_range(0..means.len())];
                [m[0] + sigma * z(rng), m[1] + sigma * z(rng)]
            }
            DensityKind::Independent { mean, sd } => {
                [mean[0] + sd[0] * z(rng), mean[1] + sd[1] * z(rng)]
            }
        }
    }

    /// `n` i.i.d. draws as an `n x 2` matrix.
    pub fn sample(&self, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n).flat_map(|_| self.draw(&mut rng)).collect();
        Matrix::new(n, 2, data).expect("n x 2")
    }

    /// Density evaluated on the grid `gx x gy`, row-major over `gx`.
    pub fn grid(&self, gx: &[f64], gy: &[f64]) -> DensityGrid {
        let values = gx
            .par_iter()
            .flat_map_iter(|&a| gy.iter().map(move |&b| self.density([a, b])))
            .collect();
        DensityGrid {
            gx: gx.to_vec(),
            gy: gy.to_vec(),
            values,
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Trapezoid rule on a possibly non-uniform grid.
pub fn trapezoid(values: &[f64], grid: &[f64]) -> f64 {
    values
        .windows(2)
        .zip(grid.windows(2))
        .map(|(v, g)| 0.5 * (v[0] + v[1]) * (g[1] - g[0]))
        .sum()
}

/// Half the L1 distance between two densities on a shared grid.
pub fn total_variation(p: &[f64], q: &[f64], grid: &[f64]) -> f64 {
    let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
    0.5 * trapezoid(&diff, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// `values[i * gy.len() + j]` is the density at `(gx[i], gy[j])`.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn integral(&self) -> f64 {
        let ny = self.gy.len();
        let inner: Vec<f64> = (0..self.gx.len())
            .map(|i| trapezoid(&self.values[i * ny..(i + 1) * ny], &self.gy))
            .collect();
        trapezoid(&inner, &self.gx)
    }

    pub fn total_variation(&self, other: &DensityGrid) -> Result<f64> {
        if self.gx != other.gx || self.gy != other.gy {
            return Err(Error::invalid("density grids differ"));
        }
        let diff = DensityGrid {
            gx: self.gx.clone(),
            gy: self.gy.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .collect(),
        };
        Ok(0.5 * diff.integral())
    }

    pub fn argmax(&self) -> (f64, f64) {
        let (k, _) =
            self.values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                });
        let ny = self.gy.len();
        (self.gx[k / ny], self.gy[k % ny])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x1,x2,density\n");
        let ny = self.gy.len();
        for (i, &a) in self.gx.iter().enumerate() {
            for (j, &b) in self.gy.iter().enumerate() {
                s.push_str(&format!("{a},{b},{}\n", self.values[i * ny + j]));
            }
        }
        s
    }
}

/// Normalised conditionals `p(x_free | x_axis = c)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGrid {
    /// Index of the conditioning coordinate.
    pub axis: usize,
    pub cond_values: Vec<f64>,
    pub grid: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
}

pub fn conditional_grid(
    density: &Density2D,
    axis: usize,
    cond_values: &[f64],
    grid: &[f64],
) -> Result<ConditionalGrid> {
    if axis > 1 {
        return Err(Error::invalid(format!("axis must be 0 or 1, got {axis}")));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(
            "grid must be strictly increasing with at least two points",
        ));
    }
    let densities = cond_values
        .par_iter()
        .map(|&c| {
            let slice: Vec<f64> = grid
                .iter()
                .map(|&x| density.density(if axis == 0 { [c, x] } else { [x, c] }))
                .collect();
            let mass = trapezoid(&slice, grid);
            if !(mass >= 1e-12) {
                return Err(Error::Numerical(format!(
                    "conditioning in zero-density region (x{} = {c})",
                    axis + 1
                )));
            }
            Ok(slice.into_iter().map(|v| v / mass).collect())
        })
        .collect::<Result<_>>()?;
    Ok(ConditionalGrid {
        axis,
        cond_values: cond_values.to_vec(),
        grid: grid.to_vec(),
        densities,
    })
}

fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(lo + 1) {
        Some(&hi) => sorted[lo] + frac * (hi - sorted[lo]),
        None => sorted[lo],
    }
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::invalid("bandwidth needs at least two samples"));
    }
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let sd = sample_std(v);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (v.len() as f64).powf(-0.2);
    if !(h > 0.0) {
        return Err(Error::Numerical("samples have zero spread".into()));
    }
    Ok(h)
}

fn gaussian_kernel_rows(points: &[f64], centres: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (h * (2.0 * PI).sqrt());
    points
        .iter()
        .flat_map(|&p| {
            centres
                .iter()
                .map(move |&c| norm * (-0.5 * ((p - c) / h).powi(2)).exp())
        })
        .collect()
}

/// One-dimensional Gaussian KDE evaluated on `grid`.
pub fn kde_1d(samples: &[f64], bandwidth: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::invalid("kde needs samples"));
    }
    let n = samples.len() as f64;
    Ok(grid
        .iter()
        .map(|&g| {
            gaussian_kernel_rows(&[g], samples, bandwidth)
                .iter()
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Gaussian product-kernel density estimate on `gx x gy`.
pub fn kde_2d(
    samples: &Matrix,
    bandwidth: [f64; 2],
    gx: &[f64],
    gy: &[f64],
) -> Result<DensityGrid> {
    if samples.cols() != 2 {
        return Err(Error::shape("kde_2d", &[2], &[samples.cols()]));
    }
    if samples.rows() < 10 {
        return Err(Error::invalid("kde_2d needs at least 10 samples"));
    }
    if !(bandwidth[0] > 0.0 && bandwidth[1] > 0.0) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth:?}"
        )));
    }
    let n = samples.rows();
    // The product kernel separates: K = Kx Ky^T / n.
    let kx = gaussian_kernel_rows(gx, &samples.column(0), bandwidth[0]);
    let ky = gaussian_kernel_rows(gy, &samples.column(1), bandwidth[1]);
    let mut values = vec![0.0; gx.len() * gy.len()];
    gemm(
        gx.len(),
        n,
        gy.len(),
        &kx,
        false,
        &ky,
        true,
        0.0,
        &mut values,
    );
    values.iter_mut().for_each(|v| *v /= n as f64);
    Ok(DensityGrid {
        gx: gx.to_vec(),
        gy: gy.to_vec(),
        values,
    })
}

pub fn silverman_2d(samples: &Matrix) -> Result<[f64; 2]> {
    Ok([
        silverman_bandwidth(&samples.column(0))?,
        silverman_bandwidth(&samples.column(1))?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Demo2dConfig {
    pub density: String,
    pub n: usize,
    pub missing_rate: f64,
    pub train: TrainConfig,
    pub n_steps: usize,
    /// Points per side in each energy-MMD comparison.
    pub mmd_points: usize,
    /// Disjoint blocks of imputed rows compared with fresh samples; both
    /// the imputed and the baseline MMD are averaged over them.
    pub mmd_repeats: usize,
    pub grid_size: usize,
    /// Conditioning values for the per-slice conditionals, per axis.
    pub slices: usize,
    /// Model draws per conditioning value.
    pub slice_draws: usize,
    pub seed: u64,
}

impl Default for Demo2dConfig {
    fn default() -> Self {
        Self {
            density: "cosine".into(),
            n: 20_000,
            missing_rate: 0.5,
            train: TrainConfig {
                steps: 20_000,
                ..TrainConfig::short()
            },
            n_steps: 100,
            mmd_points: 2000,
            mmd_repeats: 10,
            grid_size: 100,
            slices: 5,
            slice_draws: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub axis: usize,
    pub value: f64,
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo2dReport {
    pub density: String,
    /// Mean energy MMD between blocks of imputed data and fresh
    /// ground-truth samples of the same size.
    pub mmd_imputed: f64,
    /// Mean energy MMD between pairs of independent ground-truth samples.
    pub mmd_baseline: f64,
    pub ratio: f64,
    pub joint_total_variation: f64,
    pub slices: Vec<SliceReport>,
}

pub struct Demo2dOutput {
    pub report: Demo2dReport,
    pub truth_grid: DensityGrid,
    pub imputed_grid: DensityGrid,
    pub conditionals: Vec<(ConditionalGrid, Vec<Vec<f64>>)>,
    pub imputed: Matrix,
}

/// Trains on an amputed sample of `density`, imputes it, and compares the
/// result with ground truth jointly and slice by slice.
pub fn run_demo2d(cfg: &Demo2dConfig) -> Result<Demo2dOutput> {
    let density = Density2D::by_name(&cfg.density)?;
    if cfg.mmd_points < 2 || cfg.mmd_repeats == 0 || cfg.mmd_points * cfg.mmd_repeats > cfg.n {
        return Err(Error::invalid(
            "need mmd_points >= 2, mmd_repeats >= 1 and mmd_points * mmd_repeats <= n",
        ));
    }
    let complete = density.sample(cfg.n, cfg.seed);
    let (ds, _) = ampute_mcar(&complete, cfg.missing_rate, cfg.seed.wrapping_add(1))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let outcome = train(&ds, &train_cfg)?;
    let sampler = EulerSampler::new(&outcome.net, cfg.n_steps)?;
    let set = impute_dataset(&sampler, &ds, 1, cfg.seed.wrapping_add(2))?;
    let imputed = set.to_raw(&ds).swap_remove(0);

    let m = cfg.mmd_points;
    let (mut mmd_imputed, mut mmd_baseline) = (0.0, 0.0);
    for r in 0..cfg.mmd_repeats {
        let block: Vec<usize> = (r * m..(r + 1) * m).collect();
        let stream = cfg.seed.wrapping_add(1000 + 2 * r as u64);
        let fresh = density.sample(m, stream);
        let other = density.sample(m, stream + 1);
        mmd_imputed += mmd(&imputed.select_rows(&block), &fresh, Kernel::Energy)?;
        mmd_baseline += mmd(&other, &fresh, Kernel::Energy)?;
    }
    mmd_imputed /= cfg.mmd_repeats as f64;
    mmd_baseline /= cfg.mmd_repeats as f64;

    let [bx, by] = density.bounds;
    let gx = linspace(bx.0, bx.1, cfg.grid_size);
    let gy = linspace(by.0, by.1, cfg.grid_size);
    let truth_grid = density.grid(&gx, &gy);
    let imputed_grid = kde_2d(&imputed, silverman_2d(&imputed)?, &gx, &gy)?;
    let joint_total_variation = truth_grid.total_variation(&imputed_grid)?;

    let mut slices = Vec::new();
    let mut conditionals = Vec::new();
    for axis in 0..2 {
        let (lo, hi) = density.bounds[axis];
        let margin = 0.2 * (hi - lo);
        let values = linspace(lo + margin, hi - margin, cfg.slices);
        let free = density.bounds[1 - axis];
        let grid = linspace(free.0, free.1, 4 * cfg.grid_size);
        let truth = match conditional_grid(&density, axis, &values, &grid) {
            Ok(t) => t,
            Err(Error::Numerical(msg)) => {
                log::warn!("skipping slices on axis {axis}: {msg}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut model = Vec::with_capacity(values.len());
        for (s, &c) in values.iter().enumerate() {
            let draws = conditional_draws(
                &sampler,
                &ds,
                axis,
                c,
                cfg.slice_draws,
                cfg.seed.wrapping_add(10 + s as u64),
            )?;
            let h = silverman_bandwidth(&draws)?;
            let est = kde_1d(&draws, h, &grid)?;
            slices.push(SliceReport {
                axis,
                value: c,
                total_variation: total_variation(&truth.densities[s], &est, &grid),
            });
            model.push(est);
        }
        conditionals.push((truth, model));
    }

    Ok(Demo2dOutput {
        report: Demo2dReport {
            density: density.name.clone(),
            mmd_imputed,
            mmd_baseline,
            ratio: mmd_imputed / mmd_baseline,
            joint_total_variation,
            slices,
        },
        truth_grid,
        imputed_grid,
        conditionals,
        imputed,
    })
}

/// Model draws of the free coordinate given `x_axis = value` (raw units).
fn conditional_draws<S: ConditionalSampler>(
    sampler: &S,
    ds: &crate::data::IncompleteDataset,
    axis: usize,
    value: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let free = 1 - axis;
    let z = (value - ds.col_mean()[axis]) / ds.col_std()[axis];
    let mut row = [0.0; 2];
    row[axis] = z;
    let mut mask_row = [false; 2];
    mask_row[axis] = true;
    let mut rows = Matrix::new(draws, 2, row.repeat(draws))?;
    let mask = MissingnessMask::new(draws, 2, mask_row.repeat(draws))?;
    let mut rngs: Vec<ChaCha8Rng> = (0..draws).map(|i| row_rng(seed, 0, i)).collect();
    sampler.fill(&mut rows, &mask, &mut rngs)?;
    Ok(rows
        .column(free)
        .into_iter()
        .map(|v| v * ds.col_std()[free] + ds.col_mean()[free])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_mass(d: &Density2D, n: usize) -> f64 {
        let [bx, by] = d.bounds;
        d.grid(&linspace(bx.0, bx.1, n), &linspace(by.0, by.1, n))
            .integral()
    }

    #[test]
    fn builtins_integrate_to_one() {
        for name in BUILTIN {
            let d = Density2D::by_name(name).unwrap();
            let mass = box_mass(&d, 600);
            assert!((mass - 1.0).abs() < 0.01, "{name}: {mass}");
        }
        assert!(Density2D::by_name("spiral").is_err());
    }

    #[test]
    fn cosine_slice_is_closed_form() {
        let d = Density2D::cosine();
        let grid = linspace(-2.2, 2.2, 2001);
        let c = conditional_grid(&d, 0, &[0.0], &grid).unwrap();
        let max_err = grid
            .iter()
            .zip(&c.densities[0])
            .map(|(&x, &p)| (p - log_normal(x, 1.0, 0.2).exp()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "{max_err}");
    }

    #[test]
    fn zero_density_slice_errors() {
        let d = Density2D::cosine();
        let err = conditional_grid(&d, 0, &[5.0], &linspace(-2.0, 2.0, 50)).unwrap_err();
        assert!(err.to_string().contains("zero-density"));
    }

    #[test]
    fn independent_conditional_is_marginal() {
        let d = Density2D::independent([0.5, -1.0], [1.0, 0.7]);
        let grid = linspace(-7.0, 5.0, 801);
        let c = conditional_grid(&d, 0, &[-1.0, 0.0, 2.5], &grid).unwrap();
        let marginal: Vec<f64> = grid
            .iter()
            .map(|&x| log_normal(x, -1.0, 0.7).exp())
            .collect();
        for p in &c.densities {
            let err = p
                .iter()
                .zip(&marginal)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6);
            assert!((trapezoid(p, &grid) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kde_peak_and_mass() {
        let pts = Matrix::new(10, 2, [0.7, -0.3].repeat(10)).unwrap();
        let g = linspace(-2.0, 2.0, 201);
        let k = kde_2d(&pts, [0.05, 0.05], &g, &g).unwrap();
        let (a, b) = k.argmax();
        assert!((a - 0.7).abs() < 0.011 && (b + 0.3).abs() < 0.011);
        assert!((k.integral() - 1.0).abs() < 1e-3);
        assert!(kde_2d(&pts, [0.0, 0.1], &g, &g).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let d = Density2D::two_ring();
        assert_eq!(d.sample(50, 3), d.sample(50, 3));
        assert_ne!(d.sample(50, 3), d.sample(50, 4));
    }
}
