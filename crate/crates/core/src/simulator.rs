//! Monte Carlo audits: draw ballots with replacement from the announced
//! tallies (or a tie with the same irrelevant fraction) and run the stopping
//! rule round by round.
//!
//! Each trial owns a ChaCha stream selected by its index, so results do not
//! depend on thread count or scheduling.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contest::ContestRecord;
use crate::engine::{PairedDistribution, RoundSchedule};
use crate::error::{domain, Error, Result};
use crate::stopping::{AuditConfig, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimHypothesis {
    AsAnnounced,
    /// Relevant ballots split evenly; the irrelevant fraction is unchanged.
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub contest: ContestRecord,
    pub cfg: AuditConfig,
    /// Cumulative total ballots drawn by the end of each round.
    pub schedule: RoundSchedule,
    pub trials: u64,
    pub seed: u64,
    pub hypothesis: SimHypothesis,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        self.contest.validate()?;
        self.cfg.validate()?;
        self.schedule.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-draw probabilities of (winner, loser) ballots.
    pub fn draw_probs(&self) -> (f64, f64) {
        let n = self.contest.total_ballots as f64;
        match self.hypothesis {
            SimHypothesis::AsAnnounced => (
                self.contest.winner_votes() as f64 / n,
                self.contest.loser_votes() as f64 / n,
            ),
            SimHypothesis::Tie => {
                let half = self.contest.relevant() as f64 / n / 2.0;
                (half, half)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRate {
    pub round: usize,
    /// Cumulative total ballots scheduled by the end of the round.
    pub total_draws: u64,
    pub stopped: u64,
    /// Fraction of all trials stopping in this round.
    pub rate: f64,
    pub cumulative_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: u64,
    pub seed: u64,
    pub hypothesis: SimHypothesis,
    pub rule: Rule,
    pub rounds: Vec<RoundRate>,
    /// Fraction of trials that stopped in any round.
    pub stop_rate: f64,
    pub mean_relevant_draws: f64,
    pub mean_total_draws: f64,
}

struct Trial {
    rng: ChaCha8Rng,
    n: u64,
    k: u64,
    total: u64,
    history: Vec<u64>,
    stopped: bool,
}

/// kmin for a relevant-count history, and the truncated distribution when later rounds need it.
struct Node {
    kmin: u64,
    dist: Option<PairedDistribution>,
}

fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_counts(rng: &mut ChaCha8Rng, d: u64, pw: f64, pl: f64) -> Result<(u64, u64)> {
    let w = Binomial::new(d, pw)
        .map_err(|e| domain(e.to_string()))?
        .sample(rng);
    let rest = d - w;
    let cond = if pw < 1.0 {
        (pl / (1.0 - pw)).min(1.0)
    } else {
        0.0
    };
    let l = Binomial::new(rest, cond)
        .map_err(|e| domain(e.to_string()))?
        .sample(rng);
    Ok((w, l))
}

/// Nodes for round sizes `ns` (ascending) following `parent`.
fn resolve_group(
    parent: Option<&PairedDistribution>,
    ns: &[u64],
    cfg: &AuditConfig,
    need_dist: bool,
) -> Result<Vec<(u64, Node)>> {
    let base = match parent {
        Some(p) => p.clone(),
        None => PairedDistribution::new(cfg.p)?,
    };
    let prev = base.draws_total();
    let mut running: Option<PairedDistribution> = None;
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == prev {
            out.push((
                n,
                Node {
                    kmin: n + 1,
                    dist: Some(base.clone()),
                },
            ));
            continue;
        }
        if cfg.rule == Rule::EoRBravo && !need_dist {
            out.push((
                n,
                Node {
                    kmin: cfg.line().kmin(n).max(1),
                    dist: None,
                },
            ));
            continue;
        }
        let round = running.as_ref().unwrap_or(&base).advance(n)?;
        let kmin = round.kmin(cfg)?;
        let dist = if need_dist {
            Some(round.truncate(kmin)?.0)
        } else {
            None
        };
        out.push((n, Node { kmin, dist }));
        running = Some(round);
    }
    Ok(out)
}

pub fn simulate_batch(spec: &SimSpec) -> Result<SimReport> {
    spec.validate()?;
    let cfg = spec.cfg;
    let (pw, pl) = spec.draw_probs();
    let sizes = &spec.schedule.sizes;
    let rounds = sizes.len();
    let ordered = matches!(cfg.rule, Rule::B2Bravo | Rule::SbBravo);
    let line = cfg.line();

    let mut trials: Vec<Trial> = (0..spec.trials)
        .map(|i| Trial {
            rng: trial_rng(spec.seed, i),
            n: 0,
            k: 0,
            total: 0,
            history: Vec::new(),
            stopped: false,
        })
        .collect();
    let mut cache: HashMap<Vec<u64>, Node> = HashMap::new();
    let mut stopped_per_round = vec![0u64; rounds];

    for j in 0..rounds {
        let d = sizes[j] - if j == 0 { 0 } else { sizes[j - 1] };
        // Draw this round for every running trial.
        let draws: Vec<Result<bool>> = trials
            .par_iter_mut()
            .filter(|t| !t.stopped)
            .map(|t| {
                t.total += d;
                if ordered {
                    let mut hit = false;
                    for _ in 0..d {
                        let u: f64 = t.rng.random();
                        if u < pw + pl {
                            t.n += 1;
                            t.k += u64::from(u < pw);
                            if !hit && t.k >= line.kmin(t.n).max(1) {
                                hit = true;
                            }
                        }
                    }
                    Ok(hit)
                } else {
                    let (w, l) = draw_counts(&mut t.rng, d, pw, pl)?;
                    t.n += w + l;
                    t.k += w;
                    t.history.push(t.n);
                    Ok(false)
                }
            })
            .collect();
        let draws: Vec<bool> = draws.into_iter().collect::<Result<_>>()?;

        if ordered {
            let mut it = draws.into_iter();
            for t in trials.iter_mut().filter(|t| !t.stopped) {
                if it.next() == Some(true) {
                    t.stopped = true;
                    stopped_per_round[j] += 1;
                }
            }
            continue;
        }

        // Resolve kmin for each distinct history. Histories sharing earlier
        // rounds share a parent, and their round sizes are reached by
        // advancing one untruncated distribution in increasing order.
        let mut groups: BTreeMap<Vec<u64>, Vec<u64>> = BTreeMap::new();
        for t in trials
            .iter()
            .filter(|t| !t.stopped && !cache.contains_key(&t.history))
        {
            groups
                .entry(t.history[..j].to_vec())
                .or_default()
                .push(t.history[j]);
        }
        let need_dist = j + 1 < rounds;
        let nodes: Vec<Vec<(Vec<u64>, Node)>> = groups
            .into_par_iter()
            .map(|(prefix, mut ns)| {
                ns.sort_unstable();
                ns.dedup();
                let parent = if j == 0 {
                    None
                } else {
                    cache[&prefix].dist.as_ref()
                };
                resolve_group(parent, &ns, &cfg, need_dist).map(|nodes| {
                    nodes
                        .into_iter()
                        .map(|(n, node)| {
                            let mut key = prefix.clone();
                            key.push(n);
                            (key, node)
                        })
                        .collect()
                })
            })
            .collect::<Result<_>>()?;
        let nodes = nodes.into_iter().flatten();
        cache.extend(nodes);

        for t in trials.iter_mut().filter(|t| !t.stopped) {
            if t.k >= cache[&t.history].kmin {
                t.stopped = true;
                stopped_per_round[j] += 1;
            }
        }
    }

    let n_trials = spec.trials as f64;
    let mut cum = 0u64;
    let round_rates = stopped_per_round
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            cum += s;
            RoundRate {
                round: j + 1,
                total_draws: sizes[j],
                stopped: s,
                rate: s as f64 / n_trials,
                cumulative_rate: cum as f64 / n_trials,
            }
        })
        .collect();
    let relevant: u64 = trials.iter().map(|t| t.n).sum();
    let total: u64 = trials.iter().map(|t| t.total).sum();
    Ok(SimReport {
        trials: spec.trials,
        seed: spec.seed,
        hypothesis: spec.hypothesis,
        rule: cfg.rule,
        rounds: round_rates,
        stop_rate: cum as f64 / n_trials,
        mean_relevant_draws: relevant as f64 / n_trials,
        mean_total_draws: total as f64 / n_trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundComparison {
    pub round: usize,
    /// Relevant-ballot round size used for the analytic values.
    pub relevant_n: u64,
    pub analytic_stop: f64,
    pub analytic_risk: f64,
    pub simulated_stop: f64,
    pub simulated_risk: f64,
    pub stop_se: f64,
    pub risk_se: f64,
    /// Simulated values more than four standard errors from the analytic ones.
    pub stop_flagged: bool,
    pub risk_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rounds: Vec<RoundComparison>,
    /// Simulated first-round stop rate over risk, when the risk is nonzero.
    pub first_round_ratio: Option<f64>,
    /// First-round ratio exceeds `1/alpha` (tail-ratio rules only).
    pub ratio_exceeds_inverse_alpha: Option<bool>,
}

/// Simulate under both hypotheses and compare with the engine's per-round `S_j`, `R_j`.
///
/// Analytic values use the expected relevant-ballot schedule; with irrelevant
/// ballots present the simulated relevant counts vary around it.
pub fn empirical_vs_analytic(spec: &SimSpec) -> Result<Comparison> {
    if spec.trials < 1000 {
        return Err(Error::Config(
            "comparison needs at least 1000 trials".into(),
        ));
    }
    let announced = simulate_batch(&SimSpec {
        hypothesis: SimHypothesis::AsAnnounced,
        ..spec.clone()
    })?;
    let tie = simulate_batch(&SimSpec {
        hypothesis: SimHypothesis::Tie,
        ..spec.clone()
    })?;

    let frac = spec.contest.relevant() as f64 / spec.contest.total_ballots as f64;
    let mut rel: Vec<u64> = Vec::new();
    for &s in &spec.schedule.sizes {
        let n = ((s as f64 * frac).round() as u64).max(rel.last().map_or(1, |&p| p + 1));
        rel.push(n);
    }
    let cfg = spec.cfg;
    let mut dist = PairedDistribution::new(cfg.p)?;
    let trials = spec.trials as f64;
    let se = |p: f64| (p.max(1.0 / trials) * (1.0 - p).max(1.0 / trials) / trials).sqrt();
    let mut rows = Vec::new();
    for (j, &n) in rel.iter().enumerate() {
        let (s, r, next) = if matches!(cfg.rule, Rule::B2Bravo | Rule::SbBravo) {
            let (next, s, r) = dist.advance_ballot_by_ballot(n, &cfg)?;
            (s, r, next)
        } else {
            let round = dist.advance(n)?;
            let (next, s, r) = round.truncate(round.kmin(&cfg)?)?;
            (s, r, next)
        };
        dist = next;
        let (ss, sr) = (announced.rounds[j].rate, tie.rounds[j].rate);
        let (se_s, se_r) = (se(s), se(r));
        rows.push(RoundComparison {
            round: j + 1,
            relevant_n: n,
            analytic_stop: s,
            analytic_risk: r,
            simulated_stop: ss,
            simulated_risk: sr,
            stop_se: se_s,
            risk_se: se_r,
            stop_flagged: (ss - s).abs() > 4.0 * se_s,
            risk_flagged: (sr - r).abs() > 4.0 * se_r,
        });
    }
    let first_round_ratio = rows
        .first()
        .filter(|r| r.simulated_risk > 0.0)
        .map(|r| r.simulated_stop / r.simulated_risk);
    Ok(Comparison {
        ratio_exceeds_inverse_alpha: cfg
            .rule
            .uses_tail_ratio()
            .then(|| first_round_ratio.is_none_or(|x| x > 1.0 / cfg.alpha)),
        first_round_ratio,
        rounds: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn contest(w: u64, l: u64, other: u64) -> ContestRecord {
        let t = BTreeMap::from([("w".to_string(), w), ("l".to_string(), l)]);
        ContestRecord::from_tallies("c", t, w + l + other).unwrap()
    }

    fn spec(
        c: ContestRecord,
        rule: Rule,
        sizes: Vec<u64>,
        h: SimHypothesis,
        trials: u64,
    ) -> SimSpec {
        SimSpec {
            cfg: AuditConfig::new(rule, c.p(), 0.1).unwrap(),
            contest: c,
            schedule: RoundSchedule::explicit(sizes).unwrap(),
            trials,
            seed: 7,
            hypothesis: h,
        }
    }

    #[test]
    fn reproducible() {
        let s = spec(
            contest(700, 300, 100),
            Rule::Minerva,
            vec![30, 60],
            SimHypothesis::AsAnnounced,
            2000,
        );
        let a = simulate_batch(&s).unwrap();
        let b = simulate_batch(&s).unwrap();
        assert_eq!(a, b);
        let c = simulate_batch(&SimSpec { seed: 8, ..s }).unwrap();
        assert_ne!(a.rounds, c.rounds);
    }

    #[test]
    fn tie_keeps_irrelevant_fraction() {
        let s = spec(
            contest(700, 300, 1000),
            Rule::Minerva,
            vec![30],
            SimHypothesis::Tie,
            10,
        );
        let (pw, pl) = s.draw_probs();
        assert_eq!(pw, pl);
        assert!((pw + pl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_analytic_without_irrelevant_ballots() {
        let s = spec(
            contest(75, 25, 0),
            Rule::Minerva,
            vec![50, 100],
            SimHypothesis::AsAnnounced,
            4000,
        );
        let cmp = empirical_vs_analytic(&s).unwrap();
        for r in &cmp.rounds {
            assert!(!r.stop_flagged && !r.risk_flagged, "{r:?}");
        }
        assert_eq!(cmp.ratio_exceeds_inverse_alpha, Some(true));
    }

    #[test]
    fn selection_ordered_simulation() {
        let s = spec(
            contest(70, 30, 0),
            Rule::SbBravo,
            vec![60],
            SimHypothesis::AsAnnounced,
            4000,
        );
        let r = simulate_batch(&s).unwrap();
        let exact = crate::planner::stop_prob_at(60, None, &s.cfg).unwrap();
        assert!((r.stop_rate - exact).abs() < 4.0 * (exact * (1.0 - exact) / 4000.0).sqrt());
    }

    #[test]
    fn degenerate_contest_rejected() {
        let t = BTreeMap::from([("w".to_string(), 10), ("l".to_string(), 0)]);
        assert!(ContestRecord::from_tallies("c", t, 10).is_err());
        let s = spec(
            contest(70, 30, 0),
            Rule::Minerva,
            vec![60],
            SimHypothesis::Tie,
            1,
        );
        assert!(simulate_batch(&SimSpec { trials: 0, ..s }).is_err());
    }
}
