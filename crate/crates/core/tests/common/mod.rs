//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use surplus_auctions::{Instance, InstanceKind, Valuation};

/// Grid resolution of the divisible oracle.
pub const GRID: usize = 64;

/// Unit-demand welfare with `copies` of every item, by exhaustive assignment.
pub fn bf_unit_demand(weights: &[Vec<f64>], copies: usize, exclude: Option<usize>) -> f64 {
    fn go(i: usize, weights: &[Vec<f64>], left: &mut [usize], exclude: Option<usize>) -> f64 {
        if i == weights.len() {
            return 0.0;
        }
        let mut best = go(i + 1, weights, left, exclude);
        if exclude == Some(i) {
            return best;
        }
        for j in 0..left.len() {
            if left[j] > 0 {
                left[j] -= 1;
                best = best.max(weights[i][j] + go(i + 1, weights, left, exclude));
                left[j] += 1;
            }
        }
        best
    }
    let m = weights[0].len();
    go(0, weights, &mut vec![copies; m], exclude)
}

/// Multi-unit welfare with `units` interchangeable units and at most `cap` per agent, by DP.
pub fn dp_multi_unit(marginals: &[Vec<f64>], units: usize, cap: usize, exclude: Option<usize>) -> f64 {
    let mut best = vec![0.0f64; units + 1];
    for (i, d) in marginals.iter().enumerate() {
        if exclude == Some(i) {
            continue;
        }
        let prefix: Vec<f64> = std::iter::once(0.0).chain(d.iter().scan(0.0, |s, x| { *s += x; Some(*s) })).collect();
        let mut next = best.clone();
        for u in 0..=units {
            for k in 1..=cap.min(u).min(d.len()) {
                next[u] = next[u].max(best[u - k] + prefix[k]);
            }
        }
        best = next;
    }
    best[units]
}

/// Indivisible welfare by sending every item to nobody or to one agent.
pub fn bf_explicit(profile: &[Valuation], m: usize, exclude: Option<usize>) -> f64 {
    let n = profile.len();
    let mut owner = vec![0usize; m];
    let mut best = 0.0f64;
    loop {
        let mut masks = vec![0u32; n + 1];
        for (j, &o) in owner.iter().enumerate() {
            masks[o] |= 1 << j;
        }
        if exclude.is_none_or(|x| masks[x + 1] == 0) {
            let total: f64 = (0..n).map(|i| profile[i].eval_mask(masks[i + 1])).sum();
            best = best.max(total);
        }
        let mut j = 0;
        while j < m {
            owner[j] += 1;
            if owner[j] <= n {
                break;
            }
            owner[j] = 0;
            j += 1;
        }
        if j == m {
            return best;
        }
    }
}

/// Divisible welfare on the 1/64 grid with per-agent cap `q`, item by item.
pub fn grid_divisible(profile: &[Valuation], q: f64, exclude: Option<usize>) -> f64 {
    let m = profile[0].item_count();
    let cap_units = (q * GRID as f64 + 1e-9).floor() as usize;
    (0..m)
        .map(|j| {
            let mut best = vec![0.0f64; GRID + 1];
            for (i, v) in profile.iter().enumerate() {
                if exclude == Some(i) {
                    continue;
                }
                let Valuation::DivisibleSeparable { curves } = v else { panic!("divisible profile expected") };
                let mut next = best.clone();
                for u in 0..=GRID {
                    for k in 1..=cap_units.min(u) {
                        next[u] = next[u].max(best[u - k] + curves[j].eval(k as f64 / GRID as f64));
                    }
                }
                best = next;
            }
            best[GRID]
        })
        .sum()
}

/// Oracle welfare with `copies` of each indivisible item (or cap `q` for divisible goods).
pub fn oracle_sw(instance: &Instance, copies: usize, q: f64, exclude: Option<usize>) -> f64 {
    let profile = instance.valuations();
    let m = instance.item_count();
    if instance.kind() == InstanceKind::Divisible {
        return grid_divisible(profile, q, exclude);
    }
    match &profile[0] {
        Valuation::UnitDemand { .. } => {
            let w: Vec<Vec<f64>> = profile
                .iter()
                .map(|v| match v {
                    Valuation::UnitDemand { weights } => weights.clone(),
                    _ => panic!("mixed profile"),
                })
                .collect();
            bf_unit_demand(&w, copies, exclude)
        }
        Valuation::MultiUnit { .. } => {
            let d: Vec<Vec<f64>> = profile
                .iter()
                .map(|v| match v {
                    Valuation::MultiUnit { marginals } => marginals.clone(),
                    _ => panic!("mixed profile"),
                })
                .collect();
            dp_multi_unit(&d, m * copies, m, exclude)
        }
        _ => {
            assert_eq!(copies, 1);
            bf_explicit(profile, m, exclude)
        }
    }
}

/// Total Clarke payments from welfare values alone: `sum_i SW(N - i) - (n - 1) SW(N)`.
pub fn oracle_total_payments(instance: &Instance, copies: usize, q: f64) -> f64 {
    let n = instance.agent_count();
    let full = oracle_sw(instance, copies, q, None);
    (0..n).map(|i| oracle_sw(instance, copies, q, Some(i))).sum::<f64>() - (n as f64 - 1.0) * full
}

/// Sum of VCG utilities `SW(N) - SW(N - i)`.
pub fn oracle_vcg_utilities(instance: &Instance, copies: usize, q: f64) -> f64 {
    let full = oracle_sw(instance, copies, q, None);
    (0..instance.agent_count()).map(|i| full - oracle_sw(instance, copies, q, Some(i))).sum()
}

/// Expected surplus of VCG with copies when every allocated agent is served
/// with probability `q / 2^l`: each branch contributes the scaled VCG utilities.
pub fn oracle_copies_surplus(instance: &Instance, r: u32, q: f64) -> f64 {
    (0..=r)
        .map(|l| {
            let c = 1usize << l;
            q / c as f64 * oracle_vcg_utilities(instance, c, 1.0)
        })
        .sum::<f64>()
        / (r as f64 + 1.0)
}

/// Expected surplus of restricted-capacity VCG on caps `2^-l`, `l = 0..=r`.
pub fn oracle_capacity_surplus(instance: &Instance, r: u32) -> f64 {
    (0..=r).map(|l| oracle_vcg_utilities(instance, 1, 0.5f64.powi(l as i32))).sum::<f64>() / (r as f64 + 1.0)
}

/// Linear divisible welfare at cap `q = 1/k`: each item goes to its `k` steepest agents.
pub fn linear_sw(slopes: &[Vec<f64>], k: usize, exclude: Option<usize>) -> f64 {
    let m = slopes[0].len();
    (0..m)
        .map(|j| {
            let mut col: Vec<f64> = slopes.iter().enumerate().filter(|(i, _)| Some(*i) != exclude).map(|(_, s)| s[j]).collect();
            col.sort_by(|a, b| b.total_cmp(a));
            col.iter().take(k).sum::<f64>() / k as f64
        })
        .sum()
}

/// `max(v1 - v2, (v1 + v2) / 2)` for an ordered pair.
pub fn g_oracle(a: f64, b: f64) -> f64 {
    let (h, l) = if a >= b { (a, b) } else { (b, a) };
    if h - l > (h + l) / 2.0 { h - l } else { (h + l) / 2.0 }
}

/// `E[1 / (1 + Bin(n - 1, p))]` by direct summation of the pmf.
pub fn binomial_inverse_sum(n: u64, m: u64) -> f64 {
    let p = 1.0 / m as f64;
    let k_max = n - 1;
    let mut pmf = (1.0 - p).powi(k_max as i32);
    let mut total = 0.0;
    for k in 0..=k_max {
        total += pmf / (k as f64 + 1.0);
        if k < k_max {
            pmf *= (k_max - k) as f64 / (k + 1) as f64 * p / (1.0 - p).max(f64::MIN_POSITIVE);
        }
    }
    if m == 1 { 1.0 / n as f64 } else { total }
}
