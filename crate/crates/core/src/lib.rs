//! Round-by-round ballot-polling risk-limiting audits.
//!
//! The crate computes exact distributions of the winner count under the
//! announced outcome and under a tie, applies the BRAVO, Minerva and Athena
//! stopping rules round by round, plans round sizes, and simulates audits.
//!
//! ```
//! use r2audit_core::{AuditConfig, AuditState, RoundObservation, RoundSchedule, Rule, Decision};
//!
//! let cfg = AuditConfig::new(Rule::Minerva, 0.75, 0.1).unwrap();
//! let mut audit = AuditState::new(cfg, RoundSchedule::explicit(vec![50, 100]).unwrap()).unwrap();
//! let ev = audit.execute_round(RoundObservation::new(50, 32, 18, 0).unwrap()).unwrap();
//! assert_eq!(ev.kmin, 31);
//! assert_eq!(ev.decision, Decision::Correct);
//! ```

pub mod contest;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod planner;
pub mod prob;
pub mod simulator;
pub mod stopping;

pub use contest::ContestRecord;
pub use engine::{
    AuditState, AuditStatus, BallotStepper, PairedDistribution, RiskReport, RoundObservation,
    RoundRecord, RoundSchedule, SchedulePolicy,
};
pub use error::{Error, Result};
pub use planner::{PlanMethod, PlannerOptions, PlannerResult, WhatIf};
pub use prob::{binom_pmf, binom_tail, ConvolutionMethod, Hypothesis, TallyPmf};
pub use simulator::{SimHypothesis, SimReport, SimSpec};
pub use stopping::{AuditConfig, BravoLine, Decision, Mark, Rule, StoppingEvaluation, TailRatio};
