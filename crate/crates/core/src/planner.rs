//! Round-size planning, the B2 stopping-time table, and sample-size baselines.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::contest::ContestRecord;
use crate::engine::{BallotStepper, PairedDistribution};
use crate::error::{domain, Error, Result};
use crate::prob::{binom_tail, ConvolutionMethod};
use crate::stopping::{AuditConfig, BravoLine, Rule, TailRatio};

/// Largest cumulative round size the exact search will consider.
const MAX_ROUND: u64 = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMethod {
    ExactConvolution,
    GaussianApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerOptions {
    /// Minimum width of the scan that confirms every larger round also meets the target.
    pub window_min: u64,
    /// Scan width as a fraction of the round size, when larger than `window_min`.
    pub window_frac: f64,
    /// First rounds projected above this many relevant ballots use the normal approximation.
    pub gaussian_threshold: u64,
    pub convolution: ConvolutionMethod,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            window_min: 100,
            window_frac: 0.02,
            gaussian_threshold: 500_000,
            convolution: ConvolutionMethod::Direct,
        }
    }
}

impl PlannerOptions {
    pub fn window(&self, n: u64) -> u64 {
        self.window_min
            .max((self.window_frac * n as f64).ceil() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerResult {
    pub rule: Rule,
    pub target: f64,
    /// Cumulative relevant ballots after the planned round.
    pub relevant_round_size: u64,
    /// Relevant ballots the planned round adds.
    pub new_relevant_draws: u64,
    /// Total ballots to draw this round, scaled for irrelevant ballots.
    pub scaled_draws: u64,
    /// Expected distinct ballots among `scaled_draws`, when the population is known.
    pub expected_distinct: Option<u64>,
    /// Stopping probability of the planned round given that the audit reaches it.
    pub achieved_stop_prob: f64,
    pub kmin: u64,
    pub method: PlanMethod,
}

/// Hypothetical round outcome: the rule's kmin and the tails removed there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub n: u64,
    pub kmin: u64,
    pub stop_prob: f64,
    pub risk: f64,
}

fn fresh(prior: Option<&PairedDistribution>) -> bool {
    prior.is_none_or(|d| d.draws_total() == 0)
}

/// Minerva/Athena kmin for a single round of `n` draws, from binomial tails.
fn fresh_kmin(n: u64, cfg: &AuditConfig) -> Result<u64> {
    let threshold = 1.0 / cfg.alpha;
    let passes = |k: u64| -> Result<bool> {
        let t = TailRatio::from_tails(binom_tail(k, n, cfg.p)?, binom_tail(k, n, 0.5)?);
        Ok(matches!(t, TailRatio::Undefined) || t.reaches(threshold))
    };
    let (mut lo, mut hi) = (0u64, n + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut kmin = if lo <= n && binom_tail(lo, n, cfg.p)? > 0.0 {
        lo
    } else {
        n + 1
    };
    if cfg.rule == Rule::Athena {
        kmin = kmin
            .max(BravoLine::new(cfg.p, cfg.delta).kmin(n))
            .min(n + 1);
    }
    Ok(kmin)
}

/// kmin and removed tails if the next round ended at `n` cumulative relevant ballots.
pub fn whatif(n: u64, prior: Option<&PairedDistribution>, cfg: &AuditConfig) -> Result<WhatIf> {
    let base = match prior {
        Some(d) => d.clone(),
        None => PairedDistribution::new(cfg.p)?,
    };
    if n <= base.draws_total() {
        return Err(domain(format!(
            "round size {n} must exceed the {} relevant ballots already drawn",
            base.draws_total()
        )));
    }
    match cfg.rule {
        Rule::B2Bravo | Rule::SbBravo => {
            let (_, s, r) = base.advance_ballot_by_ballot(n, cfg)?;
            Ok(WhatIf {
                n,
                kmin: cfg.line().kmin(n).max(1),
                stop_prob: s,
                risk: r,
            })
        }
        Rule::EoRBravo | Rule::Minerva | Rule::Athena if fresh(prior) => {
            let kmin = match cfg.rule {
                Rule::EoRBravo => cfg.line().kmin(n).max(1),
                _ => fresh_kmin(n, cfg)?,
            };
            Ok(WhatIf {
                n,
                kmin,
                stop_prob: binom_tail(kmin, n, cfg.p)?,
                risk: binom_tail(kmin, n, 0.5)?,
            })
        }
        _ => {
            let round = base.advance(n)?;
            let kmin = round.kmin(cfg)?;
            let (s, r) = round.tails(kmin);
            Ok(WhatIf {
                n,
                kmin,
                stop_prob: s,
                risk: r,
            })
        }
    }
}

/// Probability of stopping in a round ending at `n`, given the prior rounds.
///
/// Not monotone in `n`.
pub fn stop_prob_at(n: u64, prior: Option<&PairedDistribution>, cfg: &AuditConfig) -> Result<f64> {
    whatif(n, prior, cfg).map(|w| w.stop_prob)
}

fn check_target(rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(domain(format!(
            "target stopping probability {rho} must lie in [0, 1)"
        )));
    }
    // A zero target asks for the first round that can stop at all.
    Ok(if rho == 0.0 { f64::MIN_POSITIVE } else { rho })
}

fn finish(
    rule: Rule,
    target: f64,
    prior_n: u64,
    remaining: f64,
    w: WhatIf,
    method: PlanMethod,
    contest: Option<&ContestRecord>,
) -> PlannerResult {
    let new = w.n - prior_n;
    let scaled = contest.map_or(new, |c| c.scale_draws(new));
    PlannerResult {
        rule,
        target,
        relevant_round_size: w.n,
        new_relevant_draws: new,
        scaled_draws: scaled,
        expected_distinct: contest.map(|c| expected_distinct(scaled, c.total_ballots)),
        achieved_stop_prob: w.stop_prob / remaining,
        kmin: w.kmin,
        method,
    }
}

/// Smallest round size from which every larger round (over the scan window)
/// stops with probability at least `rho`.
///
/// After earlier rounds the target applies to the stopping probability
/// conditional on reaching this round, i.e. relative to the announced-outcome
/// mass still in play.
pub fn next_round_size(
    rho: f64,
    prior: Option<&PairedDistribution>,
    cfg: &AuditConfig,
    contest: Option<&ContestRecord>,
    opts: &PlannerOptions,
) -> Result<PlannerResult> {
    let target = check_target(rho)?;
    let prior_n = prior.map_or(0, |d| d.draws_total());
    let prior = prior.map(|d| d.clone().with_method(opts.convolution));
    let prior = prior.as_ref();
    let remaining = prior.map_or(1.0, |d| d.ha.total_mass());
    if remaining.is_nan() || remaining <= 0.0 {
        return Err(domain("no announced-outcome mass remains to plan for"));
    }

    if matches!(cfg.rule, Rule::B2Bravo | Rule::SbBravo) {
        return selection_ordered_round_size(target * remaining, prior, cfg).map(|w| {
            finish(
                cfg.rule,
                rho,
                prior_n,
                remaining,
                w,
                PlanMethod::ExactConvolution,
                contest,
            )
        });
    }

    if fresh(prior) {
        let g = gaussian_round_size(cfg.p, cfg.alpha, cfg.delta, rho, cfg.rule)?;
        if g.relevant_round_size > opts.gaussian_threshold {
            return Ok(match contest {
                Some(c) => rescale(g, c),
                None => g,
            });
        }
    }

    let target = target * remaining;
    let eval = |n: u64| whatif(n, prior, cfg);
    // Bracket a crossing by doubling the new draws, then bisect.
    let mut step = 1u64;
    let mut lo = prior_n;
    let mut hi = prior_n + 1;
    while eval(hi)?.stop_prob < target {
        lo = hi;
        step *= 2;
        hi = prior_n + step;
        if hi > MAX_ROUND {
            return Err(domain(format!(
                "no round up to {MAX_ROUND} ballots reaches {rho}"
            )));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)?.stop_prob >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // `lo` fails (or is the prior total); look for a later failure above `hi`.
    let w = opts.window(hi);
    let mut answer = hi;
    for m in (hi + 1..=hi + w).rev() {
        if eval(m)?.stop_prob < target {
            answer = m + 1;
            break;
        }
    }
    let result = eval(answer)?;
    Ok(finish(
        cfg.rule,
        rho,
        prior_n,
        remaining,
        result,
        PlanMethod::ExactConvolution,
        contest,
    ))
}

/// Selection-ordered stopping probability only grows with round size, so the
/// first size reaching the target is the answer.
fn selection_ordered_round_size(
    target: f64,
    prior: Option<&PairedDistribution>,
    cfg: &AuditConfig,
) -> Result<WhatIf> {
    let base = match prior {
        Some(d) => d.clone(),
        None => PairedDistribution::new(cfg.p)?,
    };
    let mut stepper = BallotStepper::new(&base, cfg.line());
    let (mut s, mut r) = (0.0, 0.0);
    loop {
        let (ds, dr) = stepper.step();
        s += ds;
        r += dr;
        if s >= target {
            let n = stepper.draws();
            return Ok(WhatIf {
                n,
                kmin: cfg.line().kmin(n).max(1),
                stop_prob: s,
                risk: r,
            });
        }
        if stepper.draws() > MAX_ROUND {
            return Err(domain(format!(
                "no round up to {MAX_ROUND} ballots reaches {target}"
            )));
        }
    }
}

fn rescale(mut r: PlannerResult, c: &ContestRecord) -> PlannerResult {
    r.scaled_draws = c.scale_draws(r.new_relevant_draws);
    r.expected_distinct = Some(expected_distinct(r.scaled_draws, c.total_ballots));
    r
}

/// Plan a first round for a contest.
pub fn plan_first_round(
    contest: &ContestRecord,
    rule: Rule,
    alpha: f64,
    delta: f64,
    rho: f64,
    opts: &PlannerOptions,
) -> Result<PlannerResult> {
    let cfg = AuditConfig::new(rule, contest.p(), alpha)?.with_delta(delta)?;
    next_round_size(rho, None, &cfg, Some(contest), opts)
}

/// Expected number of distinct ballots in `draws` draws with replacement from
/// `population`, rounded up.
pub fn expected_distinct(draws: u64, population: u64) -> u64 {
    if draws == 0 || population == 0 {
        return 0;
    }
    let n = population as f64;
    let frac = -(draws as f64 * (-1.0 / n).ln_1p()).exp_m1();
    ((n * frac).ceil() as u64).min(draws)
}

/// Average sample number of ballot-by-ballot BRAVO when the announced outcome is right.
pub fn asn(p: f64, alpha: f64) -> Result<f64> {
    if !(p > 0.5 && p < 1.0) {
        return Err(domain(format!("p {p} must lie in (0.5, 1)")));
    }
    let zw = (2.0 * p).ln();
    let zl = (2.0 * (1.0 - p)).ln();
    Ok(((1.0 / alpha).ln() + zw / 2.0) / (p * zw + (1.0 - p) * zl))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percentile {
    pub quantile: f64,
    /// Smallest sample size by which the audit has stopped with this probability.
    pub ballots: Option<u64>,
}

/// Stopping-time distribution of ballot-by-ballot BRAVO under the announced outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BravoPercentiles {
    pub p: f64,
    pub margin: f64,
    pub alpha: f64,
    pub asn: f64,
    pub horizon: u64,
    pub percentiles: Vec<Percentile>,
    /// `sum n * S_n + horizon * residual`.
    pub expected_ballots: f64,
    /// Probability the audit has not stopped by the horizon.
    pub residual: f64,
    /// Total risk over the horizon.
    pub risk: f64,
    /// Per-step stopping probabilities `S_1 .. S_horizon`.
    #[serde(skip)]
    pub stop_probs: Vec<f64>,
}

pub const DEFAULT_QUANTILES: [f64; 5] = [0.25, 0.5, 0.75, 0.9, 0.99];

/// Default horizon: six times the average sample number.
pub fn default_horizon(p: f64, alpha: f64) -> Result<u64> {
    Ok((6.0 * asn(p, alpha)?).ceil() as u64)
}

pub fn bravo_percentiles(
    p: f64,
    alpha: f64,
    quantiles: &[f64],
    horizon: Option<u64>,
) -> Result<BravoPercentiles> {
    let cfg = AuditConfig::new(Rule::B2Bravo, p, alpha)?;
    let horizon = match horizon {
        Some(h) => h,
        None => default_horizon(p, alpha)?,
    };
    if horizon == 0 {
        return Err(domain("horizon must be at least one ballot"));
    }
    if let Some(q) = quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(domain(format!("quantile {q} must lie in (0, 1)")));
    }
    let mut stepper = BallotStepper::new(&PairedDistribution::new(p)?, cfg.line());
    let mut stop_probs = Vec::with_capacity(horizon as usize);
    let mut cum = 0.0;
    let mut risk = 0.0;
    let mut expected = 0.0;
    let mut percentiles: Vec<Percentile> = quantiles
        .iter()
        .map(|&q| Percentile {
            quantile: q,
            ballots: None,
        })
        .collect();
    for _ in 0..horizon {
        let (s, r) = stepper.step();
        let n = stepper.draws();
        cum += s;
        risk += r;
        expected += n as f64 * s;
        stop_probs.push(s);
        for pc in percentiles.iter_mut().filter(|pc| pc.ballots.is_none()) {
            if cum >= pc.quantile {
                pc.ballots = Some(n);
            }
        }
    }
    let residual = stepper.remaining_alt();
    expected += horizon as f64 * residual;
    Ok(BravoPercentiles {
        p,
        margin: 2.0 * p - 1.0,
        alpha,
        asn: asn(p, alpha)?,
        horizon,
        percentiles,
        expected_ballots: expected,
        residual,
        risk,
        stop_probs,
    })
}

/// `ln P[Z > x]` for a standard normal `Z`, accurate far into both tails.
pub fn ln_normal_sf(x: f64) -> f64 {
    if x < -5.0 {
        return (-0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln_1p();
    }
    if x < 30.0 {
        return (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - x.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// Normal approximation to the first-round stopping probability at `n`.
///
/// Tails are `Q((k - mean) / sd)` with no continuity correction.
pub fn gaussian_stop_prob(
    n: u64,
    p: f64,
    alpha: f64,
    delta: f64,
    rule: Rule,
) -> Result<(u64, f64)> {
    let nf = n as f64;
    let sd_a = (nf * p * (1.0 - p)).sqrt();
    let sd_0 = nf.sqrt() / 2.0;
    let ln_s = |k: u64| ln_normal_sf((k as f64 - nf * p) / sd_a);
    let ln_r = |k: u64| ln_normal_sf((k as f64 - nf / 2.0) / sd_0);
    let kmin = match rule {
        Rule::EoRBravo => BravoLine::new(p, alpha).kmin(n),
        Rule::Minerva | Rule::Athena => {
            let need = (1.0 / alpha).ln();
            let (mut lo, mut hi) = (n / 2, n + 1);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if ln_s(mid) - ln_r(mid) >= need {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            if rule == Rule::Athena {
                lo.max(BravoLine::new(p, delta).kmin(n)).min(n + 1)
            } else {
                lo
            }
        }
        other => {
            return Err(Error::Usage(format!(
                "the normal approximation does not cover rule {other}"
            )));
        }
    };
    let s = if kmin <= n { ln_s(kmin).exp() } else { 0.0 };
    Ok((kmin, s))
}

/// First-round size from the normal approximation (doubling then bisection).
pub fn gaussian_round_size(
    p: f64,
    alpha: f64,
    delta: f64,
    rho: f64,
    rule: Rule,
) -> Result<PlannerResult> {
    let target = check_target(rho)?;
    let eval = |n: u64| gaussian_stop_prob(n, p, alpha, delta, rule);
    let (mut lo, mut hi) = (1u64, 2u64);
    while eval(hi)?.1 < target {
        lo = hi;
        hi *= 2;
        if hi > 1 << 50 {
            return Err(domain(format!(
                "no round reaches {rho} under the normal approximation"
            )));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)?.1 >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (kmin, s) = eval(hi)?;
    Ok(PlannerResult {
        rule,
        target: rho,
        relevant_round_size: hi,
        new_relevant_draws: hi,
        scaled_draws: hi,
        expected_distinct: None,
        achieved_stop_prob: s,
        kmin,
        method: PlanMethod::GaussianApprox,
    })
}
