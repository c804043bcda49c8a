//! Stopping rules: the likelihood ratio, the BRAVO line, and the tail-ratio
//! kmin searches used by Minerva and Athena.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::prob::TallyPmf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// BRAVO tested after every ballot.
    B2Bravo,
    /// BRAVO tested once, at the end of each round.
    EoRBravo,
    /// BRAVO tested on every prefix of the round's ordered ballots.
    SbBravo,
    Minerva,
    Athena,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::B2Bravo,
        Rule::EoRBravo,
        Rule::SbBravo,
        Rule::Minerva,
        Rule::Athena,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Rule::B2Bravo => "b2-bravo",
            Rule::EoRBravo => "eor-bravo",
            Rule::SbBravo => "sb-bravo",
            Rule::Minerva => "minerva",
            Rule::Athena => "athena",
        }
    }

    /// Rules whose decision uses the tail ratio of the round distributions.
    pub fn uses_tail_ratio(&self) -> bool {
        matches!(self, Rule::Minerva | Rule::Athena)
    }

    pub fn is_bravo(&self) -> bool {
        !self.uses_tail_ratio()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown rule {s:?}")))
    }
}

fn default_delta() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub p: f64,
    pub rule: Rule,
    /// Permit Athena with `delta < alpha`.
    #[serde(default)]
    pub allow_small_delta: bool,
}

impl AuditConfig {
    pub fn new(rule: Rule, p: f64, alpha: f64) -> Result<Self> {
        let cfg = AuditConfig {
            alpha,
            delta: 1.0,
            p,
            rule,
            allow_small_delta: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha {} must lie in (0, 1)",
                self.alpha
            )));
        }
        if !(self.p > 0.5 && self.p < 1.0) {
            return Err(Error::Config(format!("p {} must lie in (0.5, 1)", self.p)));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(Error::Config(format!(
                "delta {} must be positive",
                self.delta
            )));
        }
        if self.rule == Rule::Athena && self.delta < self.alpha {
            if self.allow_small_delta {
                log::warn!("athena delta {} below alpha {}", self.delta, self.alpha);
            } else {
                return Err(Error::Config(format!(
                    "athena delta {} below alpha {}; set allow_small_delta to override",
                    self.delta, self.alpha
                )));
            }
        }
        Ok(())
    }

    pub fn line(&self) -> BravoLine {
        BravoLine::new(self.p, self.alpha)
    }
}

/// `kmin(n) = ceil(slope * n + intercept)`: the smallest winner count whose
/// likelihood ratio reaches `1/threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BravoLine {
    pub slope: f64,
    pub intercept: f64,
}

impl BravoLine {
    /// Line for likelihood-ratio threshold `1/threshold`.
    pub fn new(p: f64, threshold: f64) -> Self {
        let lo = (p / (1.0 - p)).ln();
        BravoLine {
            slope: (0.5 / (1.0 - p)).ln() / lo,
            intercept: -threshold.ln() / lo,
        }
    }

    /// Smallest passing winner count at `n` draws, or the sentinel `n + 1`.
    pub fn kmin(&self, n: u64) -> u64 {
        let k = (self.slope * n as f64 + self.intercept).ceil();
        if k <= 0.0 {
            0
        } else if k > n as f64 {
            n + 1
        } else {
            k as u64
        }
    }
}

pub fn ln_sigma(k: u64, p: f64, n: u64) -> Result<f64> {
    if k > n {
        return Err(domain(format!("winner count {k} exceeds draws {n}")));
    }
    Ok(k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p() + n as f64 * std::f64::consts::LN_2)
}

/// Likelihood ratio of `k` winner ballots in `n` draws, announced vs tied.
pub fn sigma(k: u64, p: f64, n: u64) -> Result<f64> {
    ln_sigma(k, p, n).map(f64::exp)
}

pub fn bravo_kmin(n: u64, cfg: &AuditConfig) -> u64 {
    cfg.line().kmin(n)
}

/// Ratio of two tail masses, keeping the degenerate cases distinct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailRatio {
    Value(f64),
    /// Null tail is zero while the alternative tail is not.
    Infinite,
    /// Both tails are zero.
    Undefined,
}

impl TailRatio {
    pub fn from_tails(s: f64, r: f64) -> Self {
        match (s > 0.0, r > 0.0) {
            (_, true) => TailRatio::Value(s / r),
            (true, false) => TailRatio::Infinite,
            (false, false) => TailRatio::Undefined,
        }
    }

    /// `ratio >= threshold`, with the infinite ratio passing.
    pub fn reaches(&self, threshold: f64) -> bool {
        match self {
            TailRatio::Value(v) => *v >= threshold,
            TailRatio::Infinite => true,
            TailRatio::Undefined => false,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            TailRatio::Value(v) => Some(*v),
            TailRatio::Infinite => Some(f64::INFINITY),
            TailRatio::Undefined => None,
        }
    }
}

impl Serialize for TailRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TailRatio::Value(v) => s.serialize_f64(*v),
            TailRatio::Infinite => s.serialize_str("inf"),
            TailRatio::Undefined => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for TailRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Option::<Repr>::deserialize(d)? {
            None => Ok(TailRatio::Undefined),
            Some(Repr::Num(v)) => Ok(TailRatio::Value(v)),
            Some(Repr::Str(s)) if s == "inf" => Ok(TailRatio::Infinite),
            Some(Repr::Str(s)) => Err(serde::de::Error::custom(format!("bad ratio {s:?}"))),
        }
    }
}

fn check_pair(h0: &TallyPmf, ha: &TallyPmf) -> Result<()> {
    if h0.draws_total() != ha.draws_total() {
        return Err(Error::Usage(format!(
            "paired distributions disagree on draws: {} vs {}",
            h0.draws_total(),
            ha.draws_total()
        )));
    }
    if h0.hypothesis().success_prob() != 0.5 {
        return Err(Error::Usage(
            "first distribution must be the null hypothesis".into(),
        ));
    }
    Ok(())
}

/// `S(k) / R(k)`: upper tail of the alternative over upper tail of the null.
pub fn tail_ratio(h0: &TallyPmf, ha: &TallyPmf, k: u64) -> Result<TailRatio> {
    check_pair(h0, ha)?;
    Ok(TailRatio::from_tails(ha.upper_tail(k), h0.upper_tail(k)))
}

/// Smallest `k` with `S(k)/R(k) >= 1/alpha`, or the sentinel `draws + 1`.
///
/// The ratio is non-decreasing in `k`, so a binary search suffices. Bins where
/// both tails vanish lie above every bin with mass and count as passing.
pub fn minerva_kmin(h0: &TallyPmf, ha: &TallyPmf, alpha: f64) -> Result<u64> {
    check_pair(h0, ha)?;
    let s = ha.upper_tails();
    let r = h0.upper_tails();
    Ok(kmin_from_tails(&s, &r, alpha, ha.draws_total()))
}

/// Binary search over precomputed upper tails (index `k` = mass at `k` and above).
pub fn kmin_from_tails(s: &[f64], r: &[f64], alpha: f64, draws: u64) -> u64 {
    let threshold = 1.0 / alpha;
    let len = s.len().max(r.len());
    let at = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
    let passes = |k: usize| {
        let ratio = TailRatio::from_tails(at(s, k), at(r, k));
        matches!(ratio, TailRatio::Undefined) || ratio.reaches(threshold)
    };
    // Search [0, len - 1]; the last index carries zero tails and passes.
    let (mut lo, mut hi) = (0usize, len - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if passes(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if at(s, lo) > 0.0 {
        lo as u64
    } else {
        draws + 1
    }
}

/// Minerva's kmin raised to the BRAVO line with risk limit `delta`.
pub fn athena_kmin(h0: &TallyPmf, ha: &TallyPmf, cfg: &AuditConfig) -> Result<u64> {
    let n = ha.draws_total();
    let km = minerva_kmin(h0, ha, cfg.alpha)?;
    let kd = BravoLine::new(cfg.p, cfg.delta).kmin(n);
    Ok(km.max(kd).min(n + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Correct,
    Undetermined,
}

/// Outcome of one round's stopping test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingEvaluation {
    pub round: usize,
    /// Cumulative relevant ballots.
    pub n: u64,
    /// Cumulative winner ballots.
    pub k: u64,
    /// Smallest passing winner count; `n + 1` when the round cannot stop.
    pub kmin: u64,
    pub ratio_at_k: TailRatio,
    pub sigma_at_k: f64,
    pub decision: Decision,
    /// Reciprocal of the governing ratio, clamped to [0, 1]. Not a calibrated p-value.
    pub p_value_analog: f64,
    /// Probability of stopping in this round if the announced outcome is right.
    pub stop_prob: f64,
    /// Probability of stopping in this round if the contest is tied.
    pub risk: f64,
    /// Selection-ordered rounds: prefix length (within the round's relevant ballots) that met the line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_at_prefix: Option<u64>,
}

/// `p_value_analog` for a rule given the ratio at the observed count.
pub fn p_value_analog(cfg: &AuditConfig, ratio: TailRatio, sigma: f64) -> f64 {
    let inv = |r: TailRatio| match r {
        TailRatio::Value(v) => 1.0 / v,
        TailRatio::Infinite => 0.0,
        TailRatio::Undefined => 1.0,
    };
    let raw = match cfg.rule {
        Rule::Athena => inv(ratio).max(cfg.alpha / (cfg.delta * sigma)),
        Rule::Minerva => inv(ratio),
        _ => 1.0 / sigma,
    };
    raw.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Winner,
    Loser,
}

/// Result of testing the BRAVO line on every prefix of an ordered sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOrderedResult {
    /// Total prefix length (including `prior_n`) at which the line was first met.
    pub stopped_at: Option<u64>,
    /// Index of the round containing `stopped_at`.
    pub round: Option<usize>,
    /// Ballots drawn through the end of that round.
    pub ballots_drawn: Option<u64>,
    /// `(n, k, kmin)` for every prefix examined.
    pub kmin_trace: Vec<(u64, u64, u64)>,
}

/// Apply the BRAVO line to every prefix of `sequence`.
///
/// `round_ends` lists cumulative round boundaries; when given, the result
/// reports the round in which the stop fell and the ballots drawn through it.
pub fn evaluate_selection_ordered(
    sequence: &[Mark],
    cfg: &AuditConfig,
    round_ends: Option<&[u64]>,
) -> Result<SelectionOrderedResult> {
    if sequence.is_empty() {
        return Err(domain(
            "selection-ordered evaluation needs at least one ballot",
        ));
    }
    let line = cfg.line();
    let mut k = 0u64;
    let mut trace = Vec::with_capacity(sequence.len());
    let mut stopped_at = None;
    for (i, mark) in sequence.iter().enumerate() {
        let n = i as u64 + 1;
        if *mark == Mark::Winner {
            k += 1;
        }
        let kmin = line.kmin(n);
        trace.push((n, k, kmin));
        if k >= kmin {
            stopped_at = Some(n);
            break;
        }
    }
    let (round, ballots_drawn) = match (stopped_at, round_ends) {
        (Some(n), Some(ends)) => match ends.iter().position(|&e| e >= n) {
            Some(j) => (Some(j), Some(ends[j])),
            None => (None, None),
        },
        _ => (None, None),
    };
    Ok(SelectionOrderedResult {
        stopped_at,
        round,
        ballots_drawn,
        kmin_trace: trace,
    })
}
