//! Exact discrete optimal transport between uniform empirical measures.

use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a dense `n x n` cost matrix.
/// Returns `assignment[row] = col` and the total cost.
pub fn hungarian(cost: &[f64], n: usize) -> Result<(Vec<usize>, f64)> {
    if cost.len() != n * n {
        return Err(Error::shape("hungarian", &[n, n], &[cost.len()]));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite transport cost".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Potentials formulation, 1-based with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((assignment, total))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Optimal transport cost between `n` sources and `m` sinks of equal
/// uniform mass, by successive shortest paths on integer masses.
/// Returns the cost per unit of mass.
pub fn transport_cost(cost: &[f64], n: usize, m: usize) -> Result<f64> {
    if cost.len() != n * m {
        return Err(Error::shape("transport_cost", &[n, m], &[cost.len()]));
    }
    if n == 0 || m == 0 {
        return Err(Error::invalid(
            "transport needs at least one point on each side",
        ));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite transport cost".into()));
    }
    if n == m {
        return Ok(hungarian(cost, n)?.1 / n as f64);
    }
    let g = gcd(n as u64, m as u64);
    let (a, b) = (m as u64 / g, n as u64 / g);
    let total_mass = n as u64 * a;
    let mut supply = vec![a; n];
    let mut demand = vec![b; m];
    let mut flow = vec![0u64; n * m];
    let mut pot_x = vec![0.0f64; n];
    let mut pot_y = vec![0.0f64; m];
    // Reduced costs start nonnegative once y-potentials hold column minima.
    for j in 0..m {
        pot_y[j] = (0..n)
            .map(|i| cost[i * m + j])
            .fold(f64::INFINITY, f64::min);
    }

    let mut dist_x = vec![0.0f64; n];
    let mut dist_y = vec![0.0f64; m];
    let mut done_x = vec![false; n];
    let mut done_y = vec![false; m];
    let mut prev_y = vec![usize::MAX; m]; // x node feeding y
    let mut prev_x = vec![usize::MAX; n]; // y node feeding x via a reverse edge

    let mut shipped = 0u64;
    while shipped < total_mass {
        dist_x
            .iter_mut()
            .zip(&supply)
            .for_each(|(d, &s)| *d = if s > 0 { 0.0 } else { f64::INFINITY });
        dist_y.iter_mut().for_each(|d| *d = f64::INFINITY);
        done_x.iter_mut().for_each(|b| *b = false);
        done_y.iter_mut().for_each(|b| *b = false);
        prev_x.iter_mut().for_each(|p| *p = usize::MAX);

        // Dense Dijkstra over x and y nodes.
        let sink = loop {
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_x[i] && dist_x[i] < best {
                    best = dist_x[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_y[j] && dist_y[j] < best {
                    best = dist_y[j];
                    pick = Some((false, j));
                }
            }
            match pick {
                None => return Err(Error::Numerical("transport network disconnected".into())),
                Some((true, i)) => {
                    done_x[i] = true;
                    let row = &cost[i * m..(i + 1) * m];
                    for j in 0..m {
                        if !done_y[j] {
                            let nd = best + (row[j] + pot_x[i] - pot_y[j]).max(0.0);
                            if nd < dist_y[j] {
                                dist_y[j] = nd;
                                prev_y[j] = i;
                            }
                        }
                    }
                }
                Some((false, j)) => {
                    done_y[j] = true;
                    if demand[j] > 0 {
                        break j;
                    }
                    for i in 0..n {
                        if !done_x[i] && flow[i * m + j] > 0 {
                            let nd = best + (pot_y[j] - cost[i * m + j] - pot_x[i]).max(0.0);
                            if nd < dist_x[i] {
                                dist_x[i] = nd;
                                prev_x[i] = j;
                            }
                        }
                    }
                }
            }
        };

        let d_sink = dist_y[sink];
        for i in 0..n {
            pot_x[i] += dist_x[i].min(d_sink);
        }
        for j in 0..m {
            pot_y[j] += dist_y[j].min(d_sink);
        }

        let mut bottleneck = demand[sink];
        let mut j = sink;
        loop {
            let i = prev_y[j];
            match prev_x[i] {
                usize::MAX => {
                    bottleneck = bottleneck.min(supply[i]);
                    break;
                }
                jp => {
                    bottleneck = bottleneck.min(flow[i * m + jp]);
                    j = jp;
                }
            }
        }
        let mut j = sink;
        loop {
            let i = prev_y[j];
            flow[i * m + j] += bottleneck;
            match prev_x[i] {
                usize::MAX => {
                    supply[i] -= bottleneck;
                    break;
                }
                jp => {
                    flow[i * m + jp] -= bottleneck;
                    j = jp;
                }
            }
        }
        demand[sink] -= bottleneck;
        shipped += bottleneck;
    }
    let total: f64 = flow.iter().zip(cost).map(|(&f, &c)| f as f64 * c).sum();
    Ok(total / total_mass as f64)
}
