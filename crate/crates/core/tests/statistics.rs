//! Monte-Carlo and numerical oracles for the samplers, KDEs and transport.

use std::collections::HashMap;

use cfmi_core::cfm::sample_path_at;
use cfmi_core::ot::transport_cost;
use cfmi_core::split::{split_random, split_random_historical};
use cfmi_core::synth2d::{
    conditional_grid, kde_1d, linspace, silverman_bandwidth, total_variation, Density2D,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn random_split_target_frequency() {
    // k = clamp(round(2u), 1, 2): one target with probability 3/4, both
    // with 1/4, so each observed dim is a target with probability 5/8.
    let mask = [true, true, false];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 10_000;
    let mut hits = [0usize; 3];
    for _ in 0..n {
        let s = split_random(&mask, &mut rng).unwrap();
        for (h, &t) in hits.iter_mut().zip(&s.target) {
            *h += t as usize;
        }
    }
    for &h in &hits[..2] {
        let f = h as f64 / n as f64;
        assert!((f - 0.625).abs() < 0.02, "frequency {f}");
    }
    assert_eq!(hits[2], 0);
}

fn pattern_counts<F: FnMut(&mut ChaCha8Rng) -> Vec<bool>>(
    mut draw: F,
    n: usize,
    seed: u64,
) -> HashMap<Vec<bool>, usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = HashMap::new();
    for _ in 0..n {
        *counts.entry(draw(&mut rng)).or_insert(0) += 1;
    }
    counts
}

#[test]
fn mix_prob_one_is_the_random_split() {
    let mask = [true, true, true, false];
    let partner = [true, false, false, true];
    let n = 10_000;
    let a = pattern_counts(|r| split_random(&mask, r).unwrap().target, n, 1);
    let b = pattern_counts(
        |r| {
            split_random_historical(&mask, &partner, 1.0, r)
                .unwrap()
                .target
        },
        n,
        2,
    );
    let mut keys: Vec<&Vec<bool>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    // Two-sample chi-square on the target-set frequencies.
    let mut chi2 = 0.0;
    for k in &keys {
        let (x, y) = (
            *a.get(*k).unwrap_or(&0) as f64,
            *b.get(*k).unwrap_or(&0) as f64,
        );
        if x + y > 0.0 {
            chi2 += (x - y).powi(2) / (x + y);
        }
    }
    // 7 nonempty subsets of 3 dims: 6 degrees of freedom; 16.81 is the 0.99 quantile.
    assert_eq!(keys.len(), 7);
    assert!(chi2 < 16.81, "chi-square {chi2}");
}

#[test]
fn path_mean_at_half_time() {
    let x = [2.0, -1.0, 0.5];
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sum = [0.0; 3];
    for _ in 0..n {
        let p = sample_path_at(&x, 0.5, 0.0, &mut rng);
        for (s, v) in sum.iter_mut().zip(&p.x_t) {
            *s += v;
        }
    }
    // Var(x_t) = 0.25 per coordinate.
    let tol = 3.0 * 0.5 / (n as f64).sqrt();
    for (s, &xi) in sum.iter().zip(&x) {
        assert!((s / n as f64 - 0.5 * xi).abs() < tol);
    }
}

#[test]
fn ring_radii() {
    let d = Density2D::two_ring();
    let n = 20_000;
    let s = d.sample(n, 5);
    let (mut inner, mut outer) = (Vec::new(), Vec::new());
    for r in s.iter_rows().map(|p| p[0].hypot(p[1])) {
        if r < 1.5 {
            inner.push(r);
        } else {
            outer.push(r);
        }
    }
    for (radii, want) in [(inner, 1.0), (outer, 2.0)] {
        let m = radii.iter().sum::<f64>() / radii.len() as f64;
        let sd = (radii.iter().map(|r| (r - m).powi(2)).sum::<f64>() / radii.len() as f64).sqrt();
        assert!(
            (m - want).abs() < 3.0 * sd / (radii.len() as f64).sqrt(),
            "mean radius {m} vs {want}"
        );
    }
}

#[test]
fn kde_recovers_a_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
    let h = silverman_bandwidth(&xs).unwrap();
    let grid = linspace(-6.0, 6.0, 1201);
    let est = kde_1d(&xs, h, &grid).unwrap();
    let truth: Vec<f64> = grid
        .iter()
        .map(|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
        .collect();
    let tv = total_variation(&est, &truth, &grid);
    assert!(tv < 0.05, "tv {tv}");
}

#[test]
fn mixture_conditional_matches_refined_grid() {
    let d = Density2D::gaussian_mixture();
    let conds = [-1.5, -0.3, 0.0, 0.8, 1.5];
    let coarse_grid = linspace(-5.0, 5.0, 201);
    let fine_grid = linspace(-5.0, 5.0, 2001);
    for axis in 0..2 {
        let coarse = conditional_grid(&d, axis, &conds, &coarse_grid).unwrap();
        let fine = conditional_grid(&d, axis, &conds, &fine_grid).unwrap();
        for s in 0..conds.len() {
            // Fine grid sampled at the coarse nodes (every 10th point).
            let sub: Vec<f64> = fine.densities[s].iter().step_by(10).copied().collect();
            let tv = total_variation(&coarse.densities[s], &sub, &coarse_grid);
            assert!(tv < 1e-3, "axis {axis} slice {s}: tv {tv}");
        }
    }
}

/// Balanced assignment by enumerating permutations.
fn brute_assignment(cost: &[f64], n: usize) -> f64 {
    fn go(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == n {
            *best = acc;
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(cost, n, row + 1, used, acc + cost[row * n + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
    best
}

#[test]
fn unbalanced_transport_matches_replicated_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (n, m) in [(2, 3), (3, 2), (2, 4), (3, 6), (4, 8)] {
        let l = n * m / gcd(n, m);
        for _ in 0..3 {
            let cost: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..5.0)).collect();
            // Each source becomes l/n unit copies, each sink l/m copies.
            let mut big = vec![0.0; l * l];
            for a in 0..l {
                for b in 0..l {
                    big[a * l + b] = cost[(a / (l / n)) * m + b / (l / m)];
                }
            }
            let want = brute_assignment(&big, l) / l as f64;
            let got = transport_cost(&cost, n, m).unwrap();
            assert!((got - want).abs() < 1e-9, "{n}x{m}: {got} vs {want}");
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
