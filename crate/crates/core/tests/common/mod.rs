//! Brute-force reference: enumerate every ballot sequence and apply the
//! stopping rule at each round end.

#![allow(dead_code)]

pub mod tables;

use r2audit_core::{AuditConfig, PairedDistribution, Rule};

#[derive(Debug, Clone)]
pub struct OracleRound {
    pub n: u64,
    pub kmin: u64,
    pub stop: f64,
    pub risk: f64,
    /// Mass still in play after the round, indexed by winner count.
    pub ha: Vec<f64>,
    pub h0: Vec<f64>,
}

fn sigma_direct(k: u64, n: u64, p: f64) -> f64 {
    (2.0 * p).powi(k as i32) * (2.0 * (1.0 - p)).powi((n - k) as i32)
}

fn tail(v: &[f64], k: usize) -> f64 {
    v.iter().skip(k).sum()
}

fn oracle_kmin(ha: &[f64], h0: &[f64], n: u64, cfg: &AuditConfig) -> u64 {
    let p = cfg.p;
    let line = |threshold: f64| {
        (0..=n)
            .find(|&k| sigma_direct(k, n, p) >= threshold)
            .unwrap_or(n + 1)
    };
    let ratio_kmin = || {
        (0..=n)
            .find(|&k| {
                let (s, r) = (tail(ha, k as usize), tail(h0, k as usize));
                s > 0.0 && (r == 0.0 || s / r >= 1.0 / cfg.alpha)
            })
            .unwrap_or(n + 1)
    };
    match cfg.rule {
        Rule::Minerva => ratio_kmin(),
        Rule::Athena => ratio_kmin().max(line(1.0 / cfg.delta)),
        _ => line(1.0 / cfg.alpha),
    }
}

/// Exact per-round results for cumulative `schedule` (at most 20 ballots).
pub fn oracle(schedule: &[u64], cfg: &AuditConfig) -> Vec<OracleRound> {
    let last = *schedule.last().expect("nonempty schedule");
    assert!(last <= 20, "oracle enumerates 2^n sequences");
    let p = cfg.p;
    let mut alive: Vec<u32> = (0..1u32 << last).collect();
    let mut out = Vec::new();
    for &n in schedule {
        let mask = (1u32 << n) - 1;
        let count = |m: u32| (m & mask).count_ones() as u64;
        let mut ha = vec![0.0; n as usize + 1];
        let mut h0 = vec![0.0; n as usize + 1];
        let weight_a = |m: u32| {
            let k = count(m) as i32;
            p.powi(k) * (1.0 - p).powi(n as i32 - k)
        };
        // Sequences that agree on the first `n` ballots are one event at this round.
        let mut seen = std::collections::HashSet::new();
        for &m in &alive {
            if seen.insert(m & mask) {
                let k = count(m) as usize;
                ha[k] += weight_a(m);
                h0[k] += 0.5f64.powi(n as i32);
            }
        }
        let kmin = oracle_kmin(&ha, &h0, n, cfg);
        let stop = tail(&ha, kmin as usize);
        let risk = tail(&h0, kmin as usize);
        alive.retain(|&m| count(m) < kmin);
        for k in kmin as usize..=n as usize {
            ha[k] = 0.0;
            h0[k] = 0.0;
        }
        out.push(OracleRound {
            n,
            kmin,
            stop,
            risk,
            ha,
            h0,
        });
    }
    out
}

/// The engine's per-round `(kmin, S, R, distribution)` on the same schedule.
pub fn engine_rounds(
    schedule: &[u64],
    cfg: &AuditConfig,
) -> Vec<(u64, f64, f64, PairedDistribution)> {
    let mut dist = PairedDistribution::new(cfg.p).unwrap();
    let mut out = Vec::new();
    for &n in schedule {
        let round = dist.advance(n).unwrap();
        let kmin = round.kmin(cfg).unwrap();
        let (next, s, r) = round.truncate(kmin).unwrap();
        out.push((kmin, s, r, next.clone()));
        dist = next;
    }
    out
}

/// Largest absolute difference between the oracle and the engine over all
/// rounds: tails and every bin of both distributions.
pub fn oracle_gap(schedule: &[u64], cfg: &AuditConfig) -> (f64, bool) {
    let want = oracle(schedule, cfg);
    let got = engine_rounds(schedule, cfg);
    let mut gap = 0.0f64;
    let mut kmins_agree = true;
    for (o, (kmin, s, r, d)) in want.iter().zip(&got) {
        let effective = |k: u64, len: usize| k.min(len as u64);
        kmins_agree &= o.stop == 0.0 && *s == 0.0
            || effective(o.kmin, o.ha.len()) == effective(*kmin, o.ha.len());
        gap = gap.max((o.stop - s).abs()).max((o.risk - r).abs());
        for k in 0..o.ha.len() {
            gap = gap.max((o.ha[k] - d.ha.at(k as u64)).abs());
            gap = gap.max((o.h0[k] - d.h0.at(k as u64)).abs());
        }
    }
    (gap, kmins_agree)
}
