//! Exact Wasserstein-p between pixel histograms by successive shortest paths.
//!
//! Masses are scaled to integers so the flow is exact. For `p ≤ 1` the ground
//! cost `‖·‖^p` is a metric, so the shared mass `min(x, y)` can stay in place
//! and only the surplus `(x − y)+` is routed to the deficit `(y − x)+`.

use super::{Histogram2D, TransportPlan};
use crate::error::{Error, Result};

/// Largest grid the oracle accepts.
pub const MAX_EXACT_CELLS: usize = 256;

/// Integer mass resolution: the larger total is scaled to about 2^40.
const MASS_SCALE_BITS: i32 = 40;

pub fn ground_cost(h_w: usize, a: usize, b: usize, p: f64) -> f64 {
    let (ai, aj) = ((a / h_w) as f64, (a % h_w) as f64);
    let (bi, bj) = ((b / h_w) as f64, (b % h_w) as f64);
    ((ai - bi).powi(2) + (aj - bj).powi(2)).sqrt().powf(p)
}

/// Returns `W_p(x, y)` and an optimal plan.
pub fn emd_exact(x: &Histogram2D, y: &Histogram2D, p: f64) -> Result<(f64, TransportPlan)> {
    check_p(p)?;
    x.check_same_grid(y)?;
    let n = x.height() * x.width();
    if n > MAX_EXACT_CELLS {
        return Err(Error::InvalidArgument(format!("exact EMD limited to {MAX_EXACT_CELLS} cells, got {n}")));
    }
    let (tx, ty) = (x.total(), y.total());
    if (tx - ty).abs() > 1e-9 * tx.max(ty) {
        return Err(Error::MassMismatch(tx, ty));
    }
    if x.masses() == y.masses() || tx == 0.0 {
        let flows = x.masses().iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| (i, i, m)).collect();
        return Ok((0.0, TransportPlan { flows, cost: 0.0 }));
    }

    let scale = 2f64.powi(MASS_SCALE_BITS) / tx.max(ty);
    let xi = to_integer(x.masses(), scale);
    let mut yi = to_integer(y.masses(), scale);
    let diff: i64 = xi.iter().sum::<i64>() - yi.iter().sum::<i64>();
    let big = (0..n).max_by_key(|&i| yi[i]).unwrap();
    yi[big] += diff;
    if yi[big] < 0 {
        return Err(Error::MassMismatch(tx, ty));
    }

    let w = x.width();
    let sources: Vec<usize> = (0..n).filter(|&i| xi[i] > yi[i]).collect();
    let sinks: Vec<usize> = (0..n).filter(|&i| yi[i] > xi[i]).collect();
    let supply: Vec<i64> = sources.iter().map(|&i| xi[i] - yi[i]).collect();
    let demand: Vec<i64> = sinks.iter().map(|&j| yi[j] - xi[j]).collect();
    let cost: Vec<f64> = sources.iter().flat_map(|&a| sinks.iter().map(move |&b| ground_cost(w, a, b, p))).collect();
    let flow = min_cost_flow(&supply, &demand, &cost);

    let mut flows = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..n {
        let stay = xi[i].min(yi[i]);
        if stay > 0 {
            flows.push((i, i, stay as f64 / scale));
        }
    }
    for (ia, &a) in sources.iter().enumerate() {
        for (ib, &b) in sinks.iter().enumerate() {
            let f = flow[ia * sinks.len() + ib];
            if f > 0 {
                total_cost += f as f64 * cost[ia * sinks.len() + ib];
                flows.push((a, b, f as f64 / scale));
            }
        }
    }
    let transport = total_cost / scale;
    Ok((transport.powf(1.0 / p), TransportPlan { flows, cost: transport }))
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

pub(super) fn check_p_public(p: f64) -> Result<()> {
    check_p(p)
}

fn to_integer(m: &[f64], scale: f64) -> Vec<i64> {
    m.iter().map(|&v| (v * scale).round() as i64).collect()
}

/// Transportation problem on a complete bipartite graph; returns the flow
/// matrix (row-major, sources × sinks).
fn min_cost_flow(supply: &[i64], demand: &[i64], cost: &[f64]) -> Vec<i64> {
    let (na, nb) = (supply.len(), demand.len());
    let mut flow = vec![0i64; na * nb];
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    // Node order: sources 0..na, sinks na..na+nb, super sink na+nb.
    let nv = na + nb + 1;
    let t = na + nb;
    let mut pot = vec![0.0f64; nv];
    let mut dist = vec![f64::INFINITY; nv];
    let mut prev = vec![usize::MAX; nv];
    let mut done = vec![false; nv];

    while rem_s.iter().any(|&s| s > 0) {
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for a in 0..na {
            if rem_s[a] > 0 {
                dist[a] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nv {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == t {
                break;
            }
            done[u] = true;
            if u < na {
                for b in 0..nb {
                    let v = na + b;
                    let rc = (cost[u * nb + b] + pot[u] - pot[v]).max(0.0);
                    if best + rc < dist[v] {
                        dist[v] = best + rc;
                        prev[v] = u;
                    }
                }
            } else {
                let b = u - na;
                for a in 0..na {
                    if flow[a * nb + b] > 0 {
                        let rc = (-cost[a * nb + b] + pot[u] - pot[a]).max(0.0);
                        if best + rc < dist[a] {
                            dist[a] = best + rc;
                            prev[a] = u;
                        }
                    }
                }
                if rem_d[b] > 0 {
                    let rc = (pot[u] - pot[t]).max(0.0);
                    if best + rc < dist[t] {
                        dist[t] = best + rc;
                        prev[t] = u;
                    }
                }
            }
        }
        let dt = dist[t];
        assert!(dt.is_finite(), "balanced transportation problem always has an augmenting path");
        for v in 0..nv {
            pot[v] += dist[v].min(dt);
        }

        // Walk back from the sink to find the bottleneck.
        let last_sink = prev[t];
        let mut amount = rem_d[last_sink - na];
        let mut v = last_sink;
        let origin;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                origin = v;
                break;
            }
            if v >= na {
                // forward edge source u -> sink v: unbounded
            } else {
                amount = amount.min(flow[v * nb + (u - na)]);
            }
            v = u;
        }
        amount = amount.min(rem_s[origin]);
        debug_assert!(amount > 0);

        let mut v = last_sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if v >= na {
                flow[u * nb + (v - na)] += amount;
            } else {
                flow[v * nb + (u - na)] -= amount;
            }
            v = u;
        }
        rem_s[origin] -= amount;
        rem_d[last_sink - na] -= amount;
    }
    flow
}
