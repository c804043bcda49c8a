//! Multi-round audit state machine.
//!
//! The engine works on relevant ballots only (votes for the announced winner
//! or loser). Irrelevant ballots are recorded with each observation but do not
//! enter the distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{CompensatedSum, ConvolutionMethod, Hypothesis, TallyPmf};
use crate::stopping::{
    athena_kmin, ln_sigma, minerva_kmin, p_value_analog, AuditConfig, BravoLine, Decision, Mark,
    Rule, StoppingEvaluation, TailRatio,
};

/// Bins below this are skipped by the likelihood-ratio check; their products
/// may have passed through subnormal range.
const LR_CHECK_FLOOR: f64 = 1e-250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulePolicy {
    ExplicitList,
    /// Each round is `ceil(multiplier * previous)`, continuing past the listed sizes.
    Geometric {
        multiplier: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleAmendment {
    pub version: u32,
    /// Zero-based index of the first round whose size changed.
    pub from_round: usize,
    pub sizes: Vec<u64>,
    pub reason: String,
}

/// Cumulative relevant-ballot targets `n_1 < n_2 < ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub sizes: Vec<u64>,
    pub policy: SchedulePolicy,
    #[serde(default)]
    pub version: u32,
    #[serde(default)]
    pub amendments: Vec<ScheduleAmendment>,
    /// False once the schedule has been changed after the audit started.
    #[serde(default = "yes")]
    pub conforming: bool,
}

fn yes() -> bool {
    true
}

fn check_increasing(sizes: &[u64], floor: u64) -> Result<()> {
    let mut prev = floor;
    for (i, &s) in sizes.iter().enumerate() {
        if s <= prev {
            return Err(Error::Config(format!(
                "round sizes must be strictly increasing and above {floor}; entry {} is {s}",
                i + 1
            )));
        }
        prev = s;
    }
    Ok(())
}

impl RoundSchedule {
    pub fn explicit(sizes: Vec<u64>) -> Result<Self> {
        let s = RoundSchedule {
            sizes,
            policy: SchedulePolicy::ExplicitList,
            version: 0,
            amendments: Vec::new(),
            conforming: true,
        };
        s.validate()?;
        Ok(s)
    }

    /// `rounds` sizes starting at `first`, each `ceil(multiplier * previous)`.
    pub fn geometric(first: u64, multiplier: f64, rounds: usize) -> Result<Self> {
        if !multiplier.is_finite() || multiplier < 1.0 {
            return Err(Error::Config(format!(
                "multiplier {multiplier} must be at least 1"
            )));
        }
        let mut sizes = vec![first];
        while sizes.len() < rounds.max(1) {
            sizes.push(next_geometric(*sizes.last().unwrap(), multiplier));
        }
        let s = RoundSchedule {
            sizes,
            policy: SchedulePolicy::Geometric { multiplier },
            version: 0,
            amendments: Vec::new(),
            conforming: true,
        };
        s.validate()?;
        Ok(s)
    }

    /// Ballot-by-ballot schedule `1, 2, ..., horizon`.
    pub fn every_ballot(horizon: u64) -> Result<Self> {
        Self::explicit((1..=horizon).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("schedule has no rounds".into()));
        }
        if let SchedulePolicy::Geometric { multiplier } = self.policy {
            if !multiplier.is_finite() || multiplier < 1.0 {
                return Err(Error::Config(format!(
                    "multiplier {multiplier} must be at least 1"
                )));
            }
        }
        check_increasing(&self.sizes, 0)
    }

    /// Cumulative target for zero-based round `j`, if the schedule defines one.
    pub fn size(&self, j: usize) -> Option<u64> {
        if let Some(&s) = self.sizes.get(j) {
            return Some(s);
        }
        match self.policy {
            SchedulePolicy::ExplicitList => None,
            SchedulePolicy::Geometric { multiplier } => {
                let mut s = *self.sizes.last()?;
                for _ in self.sizes.len()..=j {
                    s = next_geometric(s, multiplier);
                }
                Some(s)
            }
        }
    }

    /// Replace the sizes from round `from_round` on, bumping the version.
    pub fn amend(
        &mut self,
        from_round: usize,
        sizes: Vec<u64>,
        reason: impl Into<String>,
    ) -> Result<()> {
        if from_round > self.sizes.len() {
            return Err(Error::Config(format!(
                "amendment starts at round {} but only {} rounds are scheduled",
                from_round + 1,
                self.sizes.len()
            )));
        }
        let floor = if from_round == 0 {
            0
        } else {
            self.sizes[from_round - 1]
        };
        if sizes.is_empty() {
            return Err(Error::Config(
                "amendment must schedule at least one round".into(),
            ));
        }
        check_increasing(&sizes, floor)?;
        self.sizes.truncate(from_round);
        self.sizes.extend_from_slice(&sizes);
        self.version += 1;
        self.conforming = false;
        self.amendments.push(ScheduleAmendment {
            version: self.version,
            from_round,
            sizes,
            reason: reason.into(),
        });
        Ok(())
    }
}

fn next_geometric(prev: u64, multiplier: f64) -> u64 {
    ((prev as f64 * multiplier).ceil() as u64).max(prev + 1)
}

/// Ballots counted in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundObservation {
    pub draws: u64,
    pub winner_relevant: u64,
    pub loser_relevant: u64,
    #[serde(default)]
    pub irrelevant: u64,
    /// Relevant ballots in draw order; required by the selection-ordered rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<Vec<Mark>>,
}

impl RoundObservation {
    pub fn new(
        draws: u64,
        winner_relevant: u64,
        loser_relevant: u64,
        irrelevant: u64,
    ) -> Result<Self> {
        let o = RoundObservation {
            draws,
            winner_relevant,
            loser_relevant,
            irrelevant,
            sequence: None,
        };
        o.validate()?;
        Ok(o)
    }

    /// Observation built from an ordered sequence of relevant ballots.
    pub fn from_sequence(sequence: Vec<Mark>, irrelevant: u64) -> Self {
        let w = sequence.iter().filter(|m| **m == Mark::Winner).count() as u64;
        let l = sequence.len() as u64 - w;
        RoundObservation {
            draws: w + l + irrelevant,
            winner_relevant: w,
            loser_relevant: l,
            irrelevant,
            sequence: Some(sequence),
        }
    }

    pub fn relevant(&self) -> u64 {
        self.winner_relevant + self.loser_relevant
    }

    pub fn validate(&self) -> Result<()> {
        let sum =
            self.winner_relevant as u128 + self.loser_relevant as u128 + self.irrelevant as u128;
        if sum != self.draws as u128 {
            return Err(Error::Invariant(format!(
                "winner {} + loser {} + irrelevant {} = {sum} does not equal draws {}",
                self.winner_relevant, self.loser_relevant, self.irrelevant, self.draws
            )));
        }
        if let Some(seq) = &self.sequence {
            let w = seq.iter().filter(|m| **m == Mark::Winner).count() as u64;
            if seq.len() as u64 != self.relevant() || w != self.winner_relevant {
                return Err(Error::Invariant(format!(
                    "sequence has {} ballots ({w} winner) but counts give {} ({} winner)",
                    seq.len(),
                    self.relevant(),
                    self.winner_relevant
                )));
            }
        }
        Ok(())
    }
}

/// The pair of H0 / Ha distributions carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDistribution {
    pub h0: TallyPmf,
    pub ha: TallyPmf,
    pub method: ConvolutionMethod,
}

impl PairedDistribution {
    pub fn new(p: f64) -> Result<Self> {
        Ok(PairedDistribution {
            h0: TallyPmf::initial(Hypothesis::Null)?,
            ha: TallyPmf::initial(Hypothesis::Alt { p })?,
            method: ConvolutionMethod::Direct,
        })
    }

    pub fn with_method(mut self, method: ConvolutionMethod) -> Self {
        self.method = method;
        self
    }

    pub fn p(&self) -> f64 {
        self.ha.hypothesis().success_prob()
    }

    pub fn draws_total(&self) -> u64 {
        self.ha.draws_total()
    }

    /// Convolve both distributions up to `n` cumulative draws.
    pub fn advance(&self, n: u64) -> Result<Self> {
        let cur = self.draws_total();
        if n <= cur {
            return Err(Error::Domain(format!(
                "cannot advance from {cur} to {n} draws"
            )));
        }
        Ok(PairedDistribution {
            h0: self.h0.convolve_round_with(n - cur, self.method)?,
            ha: self.ha.convolve_round_with(n - cur, self.method)?,
            method: self.method,
        })
    }

    /// kmin for the current (untruncated) round distributions.
    ///
    /// The BRAVO variants return the end-of-round line value.
    pub fn kmin(&self, cfg: &AuditConfig) -> Result<u64> {
        let n = self.draws_total();
        match cfg.rule {
            Rule::B2Bravo | Rule::EoRBravo | Rule::SbBravo => Ok(cfg.line().kmin(n).max(1)),
            Rule::Minerva => minerva_kmin(&self.h0, &self.ha, cfg.alpha),
            Rule::Athena => athena_kmin(&self.h0, &self.ha, cfg),
        }
    }

    /// `(S(k), R(k))`: upper tails under Ha and H0.
    pub fn tails(&self, k: u64) -> (f64, f64) {
        (self.ha.upper_tail(k), self.h0.upper_tail(k))
    }

    /// Truncate both distributions at `kmin`, returning `(S, R)` removed.
    pub fn truncate(&self, kmin: u64) -> Result<(Self, f64, f64)> {
        let (ha, s) = self.ha.truncate_above(kmin)?;
        let (h0, r) = self.h0.truncate_above(kmin)?;
        Ok((
            PairedDistribution {
                h0,
                ha,
                method: self.method,
            },
            s,
            r,
        ))
    }

    /// Advance one ballot at a time to `n`, truncating at the BRAVO line after
    /// each ballot. Returns the removed `(S, R)` summed over the steps.
    pub fn advance_ballot_by_ballot(&self, n: u64, cfg: &AuditConfig) -> Result<(Self, f64, f64)> {
        if n <= self.draws_total() {
            return Err(Error::Domain(format!(
                "cannot advance from {} to {n} draws",
                self.draws_total()
            )));
        }
        let mut stepper = BallotStepper::new(self, cfg.line());
        let (mut s, mut r) = (0.0, 0.0);
        while stepper.draws() < n {
            let (ds, dr) = stepper.step();
            s += ds;
            r += dr;
        }
        Ok((stepper.into_distribution(), s, r))
    }

    /// Largest relative deviation of `ha[k] / h0[k]` from the likelihood ratio.
    pub fn likelihood_ratio_residual(&self) -> f64 {
        let n = self.draws_total();
        let p = self.p();
        let mut worst = 0.0f64;
        for (k, (&a, &z)) in self.ha.mass().iter().zip(self.h0.mass()).enumerate() {
            if a < LR_CHECK_FLOOR || z < LR_CHECK_FLOOR {
                continue;
            }
            let expect = ln_sigma(k as u64, p, n).expect("k within support");
            worst = worst.max(((a.ln() - z.ln()) - expect).exp_m1().abs());
        }
        worst
    }
}

/// In-place one-ballot updates of a paired distribution, truncating at a
/// BRAVO line after every ballot.
#[derive(Debug, Clone)]
pub struct BallotStepper {
    p: f64,
    line: BravoLine,
    n: u64,
    ha: Vec<f64>,
    h0: Vec<f64>,
    /// Every bin below `lo` is zero in both distributions.
    lo: usize,
    removed_a: f64,
    removed_0: f64,
    method: ConvolutionMethod,
}

impl BallotStepper {
    pub fn new(dist: &PairedDistribution, line: BravoLine) -> Self {
        BallotStepper {
            p: dist.p(),
            line,
            n: dist.draws_total(),
            ha: dist.ha.mass().to_vec(),
            h0: dist.h0.mass().to_vec(),
            lo: 0,
            removed_a: dist.ha.removed_total(),
            removed_0: dist.h0.removed_total(),
            method: dist.method,
        }
    }

    pub fn draws(&self) -> u64 {
        self.n
    }

    /// Draw one more ballot and truncate; returns the removed `(S, R)`.
    pub fn step(&mut self) -> (f64, f64) {
        fn shift(v: &mut Vec<f64>, lo: usize, q: f64) {
            v.push(0.0);
            for k in (lo + 1..v.len()).rev() {
                v[k] = v[k] * (1.0 - q) + v[k - 1] * q;
            }
            v[lo] *= 1.0 - q;
        }
        shift(&mut self.ha, self.lo, self.p);
        shift(&mut self.h0, self.lo, 0.5);
        self.n += 1;
        let kmin = self.line.kmin(self.n).max(1) as usize;
        let (mut s, mut r) = (0.0, 0.0);
        if kmin < self.ha.len() {
            let tail = |v: &[f64]| {
                let mut acc = CompensatedSum::default();
                for &x in v.iter().rev() {
                    acc.add(x);
                }
                acc.value()
            };
            s = tail(&self.ha[kmin..]);
            r = tail(&self.h0[kmin..]);
            self.ha.truncate(kmin);
            self.h0.truncate(kmin);
            self.removed_a += s;
            self.removed_0 += r;
        }
        while self.lo + 1 < self.ha.len() && self.ha[self.lo] == 0.0 && self.h0[self.lo] == 0.0 {
            self.lo += 1;
        }
        (s, r)
    }

    /// Mass still in play under the announced outcome.
    pub fn remaining_alt(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        for &x in self.ha[self.lo..].iter().rev() {
            acc.add(x);
        }
        acc.value()
    }

    pub fn into_distribution(self) -> PairedDistribution {
        PairedDistribution {
            ha: TallyPmf::from_parts(
                Hypothesis::Alt { p: self.p },
                self.n,
                self.ha,
                self.removed_a,
            ),
            h0: TallyPmf::from_parts(Hypothesis::Null, self.n, self.h0, self.removed_0),
            method: self.method,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Planned,
    InProgress,
    StoppedCorrect,
    EscalatedHandCount,
    ScheduleExhausted,
}

impl AuditStatus {
    pub fn accepts_rounds(&self) -> bool {
        matches!(self, AuditStatus::Planned | AuditStatus::InProgress)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub observation: RoundObservation,
    pub evaluation: StoppingEvaluation,
    /// Schedule version in force when the round was evaluated.
    pub schedule_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub round: usize,
    pub n: u64,
    pub kmin: u64,
    pub stop_prob: f64,
    pub risk: f64,
    pub risk_over_stop: Option<f64>,
    /// `risk <= alpha * stop_prob`.
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub alpha: f64,
    pub rounds: Vec<RiskRow>,
    pub cum_stop: f64,
    pub cum_risk: f64,
    /// Every round of a tail-ratio rule satisfies its per-round bound.
    pub per_round_bound_holds: bool,
}

/// One audit's configuration, distributions and round history.
#[derive(Debug, Clone, Serialize)]
pub struct AuditState {
    pub config: AuditConfig,
    pub schedule: RoundSchedule,
    pub status: AuditStatus,
    pub rounds: Vec<RoundRecord>,
    pub cum_risk: f64,
    pub cum_stop: f64,
    pub relevant_total: u64,
    pub winner_total: u64,
    #[serde(skip)]
    dist: PairedDistribution,
}

impl AuditState {
    pub fn new(config: AuditConfig, schedule: RoundSchedule) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        Ok(AuditState {
            dist: PairedDistribution::new(config.p)?,
            config,
            schedule,
            status: AuditStatus::Planned,
            rounds: Vec::new(),
            cum_risk: 0.0,
            cum_stop: 0.0,
            relevant_total: 0,
            winner_total: 0,
        })
    }

    pub fn with_method(mut self, method: ConvolutionMethod) -> Self {
        self.dist.method = method;
        self
    }

    /// Distributions after the most recent truncation.
    pub fn distribution(&self) -> &PairedDistribution {
        &self.dist
    }

    pub fn next_round_index(&self) -> usize {
        self.rounds.len()
    }

    /// Cumulative target of the next round, if scheduled.
    pub fn next_scheduled(&self) -> Option<u64> {
        self.schedule.size(self.rounds.len())
    }

    /// Execute a round whose cumulative relevant total must match the schedule.
    pub fn execute_round(&mut self, obs: RoundObservation) -> Result<StoppingEvaluation> {
        self.check_accepts()?;
        obs.validate()?;
        let j = self.rounds.len();
        let actual = self.relevant_total + obs.relevant();
        let expected = self.schedule.size(j).ok_or_else(|| {
            Error::State(format!(
                "round {} is not scheduled; amend the schedule to continue",
                j + 1
            ))
        })?;
        if actual != expected {
            return Err(Error::ScheduleViolation {
                round: j + 1,
                expected,
                actual,
            });
        }
        self.run_round(obs)
    }

    /// Execute a round, amending the schedule first if the observed total differs.
    ///
    /// Returns the evaluation and whether the schedule was amended.
    pub fn execute_round_amending(
        &mut self,
        obs: RoundObservation,
    ) -> Result<(StoppingEvaluation, bool)> {
        self.check_accepts()?;
        obs.validate()?;
        let j = self.rounds.len();
        let actual = self.relevant_total + obs.relevant();
        if self.schedule.size(j) == Some(actual) {
            return self.run_round(obs).map(|ev| (ev, false));
        }
        if obs.relevant() == 0 {
            return Err(Error::Invariant(
                "round contains no relevant ballots".into(),
            ));
        }
        let mut sizes = vec![actual];
        sizes.extend(
            self.schedule
                .sizes
                .iter()
                .skip(j + 1)
                .copied()
                .filter(|&s| s > actual),
        );
        let mut schedule = self.schedule.clone();
        schedule.amend(
            j,
            sizes,
            format!(
                "round {} observed {actual} cumulative relevant ballots",
                j + 1
            ),
        )?;
        log::warn!(
            "schedule amended to version {} at round {}",
            schedule.version,
            j + 1
        );
        let previous = std::mem::replace(&mut self.schedule, schedule);
        self.run_round(obs)
            .map(|ev| (ev, true))
            .inspect_err(|_| self.schedule = previous)
    }

    /// Replace the remaining rounds of the schedule.
    pub fn amend_schedule(&mut self, sizes: Vec<u64>, reason: impl Into<String>) -> Result<()> {
        if matches!(
            self.status,
            AuditStatus::StoppedCorrect | AuditStatus::EscalatedHandCount
        ) {
            return Err(Error::State(format!("audit is {:?}", self.status)));
        }
        let j = self.rounds.len();
        let mut schedule = self.schedule.clone();
        schedule.amend(j, sizes, reason)?;
        self.schedule = schedule;
        if self.status == AuditStatus::ScheduleExhausted {
            self.status = AuditStatus::InProgress;
        }
        Ok(())
    }

    /// Move to a full hand count.
    pub fn escalate(&mut self) -> Result<()> {
        match self.status {
            AuditStatus::StoppedCorrect | AuditStatus::EscalatedHandCount => Err(Error::State(
                format!("cannot escalate an audit that is {:?}", self.status),
            )),
            _ => {
                self.status = AuditStatus::EscalatedHandCount;
                Ok(())
            }
        }
    }

    pub fn risk_report(&self) -> RiskReport {
        let alpha = self.config.alpha;
        let rows: Vec<RiskRow> = self
            .rounds
            .iter()
            .map(|r| {
                let e = &r.evaluation;
                RiskRow {
                    round: e.round,
                    n: e.n,
                    kmin: e.kmin,
                    stop_prob: e.stop_prob,
                    risk: e.risk,
                    risk_over_stop: (e.stop_prob > 0.0).then(|| e.risk / e.stop_prob),
                    within_bound: e.risk <= alpha * e.stop_prob,
                }
            })
            .collect();
        let per_round_bound_holds =
            !self.config.rule.uses_tail_ratio() || rows.iter().all(|r| r.within_bound);
        RiskReport {
            alpha,
            rounds: rows,
            cum_stop: self.cum_stop,
            cum_risk: self.cum_risk,
            per_round_bound_holds,
        }
    }

    fn check_accepts(&self) -> Result<()> {
        if self.status.accepts_rounds() {
            Ok(())
        } else {
            Err(Error::State(format!(
                "audit is {:?} and accepts no further rounds",
                self.status
            )))
        }
    }

    fn run_round(&mut self, obs: RoundObservation) -> Result<StoppingEvaluation> {
        let cfg = self.config;
        let j = self.rounds.len();
        if obs.relevant() == 0 {
            return Err(Error::Invariant(
                "round contains no relevant ballots".into(),
            ));
        }
        let n = self.relevant_total + obs.relevant();
        let k = self.winner_total + obs.winner_relevant;
        let sigma_at_k = ln_sigma(k, cfg.p, n)?.exp();

        let (next, ev) = if matches!(cfg.rule, Rule::B2Bravo | Rule::SbBravo) {
            let seq = match (&obs.sequence, obs.relevant()) {
                (Some(s), _) => s.clone(),
                (None, 1) => vec![if obs.winner_relevant == 1 {
                    Mark::Winner
                } else {
                    Mark::Loser
                }],
                (None, _) => {
                    return Err(Error::Usage(format!(
                        "rule {} tests every ballot and needs the round's ordered sequence",
                        cfg.rule
                    )))
                }
            };
            let line = cfg.line();
            let (mut cn, mut ck) = (self.relevant_total, self.winner_total);
            let mut stopped_at_prefix = None;
            let mut best_ln_sigma = f64::NEG_INFINITY;
            for (i, m) in seq.iter().enumerate() {
                cn += 1;
                ck += u64::from(*m == Mark::Winner);
                best_ln_sigma = best_ln_sigma.max(ln_sigma(ck, cfg.p, cn)?);
                if ck >= line.kmin(cn).max(1) {
                    stopped_at_prefix = Some(i as u64 + 1);
                    break;
                }
            }
            let (next, s, r) = self.dist.advance_ballot_by_ballot(n, &cfg)?;
            let governing = best_ln_sigma.exp();
            let ev = StoppingEvaluation {
                round: j + 1,
                n,
                k,
                kmin: line.kmin(n).max(1),
                ratio_at_k: TailRatio::Value(governing),
                sigma_at_k,
                decision: if stopped_at_prefix.is_some() {
                    Decision::Correct
                } else {
                    Decision::Undetermined
                },
                p_value_analog: (1.0 / governing).clamp(0.0, 1.0),
                stop_prob: s,
                risk: r,
                stopped_at_prefix,
            };
            (next, ev)
        } else {
            let round = self.dist.advance(n)?;
            let kmin = round.kmin(&cfg)?;
            let ratio_at_k = if cfg.rule.uses_tail_ratio() {
                let (s, r) = round.tails(k);
                TailRatio::from_tails(s, r)
            } else {
                TailRatio::Value(sigma_at_k)
            };
            let (next, s, r) = round.truncate(kmin)?;
            let decision = if k >= kmin {
                Decision::Correct
            } else {
                Decision::Undetermined
            };
            let ev = StoppingEvaluation {
                round: j + 1,
                n,
                k,
                kmin,
                ratio_at_k,
                sigma_at_k,
                decision,
                p_value_analog: p_value_analog(&cfg, ratio_at_k, sigma_at_k),
                stop_prob: s,
                risk: r,
                stopped_at_prefix: None,
            };
            (next, ev)
        };

        if cfg.rule.uses_tail_ratio() && ev.risk > cfg.alpha * ev.stop_prob {
            log::warn!(
                "round {}: risk {} exceeds alpha * stop probability {}",
                ev.round,
                ev.risk,
                cfg.alpha * ev.stop_prob
            );
        }

        self.dist = next;
        self.relevant_total = n;
        self.winner_total = k;
        self.cum_stop += ev.stop_prob;
        self.cum_risk += ev.risk;
        self.status = if ev.decision == Decision::Correct {
            AuditStatus::StoppedCorrect
        } else if self.schedule.size(j + 1).is_none() {
            AuditStatus::ScheduleExhausted
        } else {
            AuditStatus::InProgress
        };
        self.rounds.push(RoundRecord {
            observation: obs,
            evaluation: ev.clone(),
            schedule_version: self.schedule.version,
        });
        Ok(ev)
    }
}
