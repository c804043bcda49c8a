//! Command-line interface.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use r2audit_core::dataset::load_contests;
use r2audit_core::planner::{
    bravo_percentiles, next_round_size, plan_first_round, DEFAULT_QUANTILES,
};
use r2audit_core::simulator::{empirical_vs_analytic, simulate_batch};
use r2audit_core::stopping::{ln_sigma, p_value_analog, tail_ratio};
use r2audit_core::{
    AuditConfig, ContestRecord, Mark, PairedDistribution, PlannerOptions, RoundObservation,
    RoundSchedule, Rule, SimHypothesis, SimSpec, TailRatio,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::api::{round_plan, AppState};
use crate::error::{Result, ServiceError};
use crate::session::{round_evaluation, sig12, Session, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(
    name = "r2audit",
    version,
    about = "Round-by-round ballot-polling risk-limiting audits"
)]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    pub format: Format,
    /// Write output to this file instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smallest winner count that stops each round of a schedule.
    Kmin(KminArgs),
    /// Likelihood ratio and tail ratio at an observed winner count.
    Ratio(RatioArgs),
    /// Plan the next round for a target stopping probability.
    RoundSize(RoundSizeArgs),
    /// Reference tables.
    #[command(subcommand)]
    Table(TableCommand),
    /// Monte Carlo audits of a contest.
    Simulate(SimulateArgs),
    /// Journaled audit sessions.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Stat {
    #[arg(long, default_value = "minerva")]
    pub rule: Rule,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Permit an Athena delta below alpha.
    #[arg(long)]
    pub allow_small_delta: bool,
}

#[derive(Debug, Args)]
#[group(required = false, multiple = false)]
pub struct Share {
    /// Announced winner share of the relevant ballots.
    #[arg(long)]
    pub p: Option<f64>,
    /// Announced margin, (winner - loser) / (winner + loser).
    #[arg(long)]
    pub margin: Option<f64>,
}

impl Share {
    fn resolve(&self) -> Option<f64> {
        self.p.or(self.margin.map(|m| (1.0 + m) / 2.0))
    }

    fn require(&self) -> Result<f64> {
        self.resolve()
            .ok_or_else(|| ServiceError::Usage("give --p or --margin".into()))
    }
}

#[derive(Debug, Args)]
pub struct ContestArgs {
    /// Contest file: a tally CSV or a contest JSON document.
    #[arg(long)]
    pub contest: Option<PathBuf>,
    /// Row of the tally CSV to use.
    #[arg(long)]
    pub state: Option<String>,
}

#[derive(Debug, Args)]
pub struct KminArgs {
    #[command(flatten)]
    pub stat: Stat,
    #[command(flatten)]
    pub share: Share,
    /// Single round of this many relevant ballots.
    #[arg(long, conflicts_with = "rounds")]
    pub n: Option<u64>,
    /// Cumulative relevant-ballot round sizes; earlier rounds are assumed not to have stopped.
    #[arg(long, value_delimiter = ',')]
    pub rounds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct RatioArgs {
    #[command(flatten)]
    pub stat: Stat,
    #[command(flatten)]
    pub share: Share,
    #[arg(long, conflicts_with = "rounds")]
    pub n: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub rounds: Vec<u64>,
    /// Cumulative winner ballots at the end of the last round.
    #[arg(long)]
    pub k: u64,
}

#[derive(Debug, Args)]
pub struct RoundSizeArgs {
    #[command(flatten)]
    pub stat: Stat,
    #[command(flatten)]
    pub share: Share,
    #[command(flatten)]
    pub contest: ContestArgs,
    /// Target stopping probability.
    #[arg(long, default_value_t = 0.9)]
    pub target: f64,
    /// Earlier cumulative relevant-ballot round sizes, assumed not to have stopped.
    #[arg(long, value_delimiter = ',')]
    pub rounds: Vec<u64>,
}

#[derive(Debug, Subcommand)]
pub enum TableCommand {
    /// Stopping-time percentiles of ballot-by-ballot BRAVO.
    BravoPercentiles {
        #[arg(long, value_delimiter = ',')]
        margins: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Include the slow 0.02 and 0.01 margins in the default list.
        #[arg(long)]
        long_run: bool,
    },
    /// First-round sizes for every contest in a tally CSV.
    FirstRound {
        #[arg(long)]
        contest: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        target: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Skip selection-ordered BRAVO below this margin (it steps ballot by ballot).
        #[arg(long, default_value_t = 0.01)]
        sb_min_margin: f64,
    },
    /// Simulated first-round stopping rate and risk for every contest in a tally CSV.
    Simulation {
        #[arg(long)]
        contest: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Skip contests below this margin; their first rounds run to millions of ballots.
        #[arg(long, default_value_t = 0.005)]
        min_margin: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HypothesisArg {
    Announced,
    Tie,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub stat: Stat,
    #[command(flatten)]
    pub contest: ContestArgs,
    /// Cumulative total ballots drawn by the end of each round.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rounds: Vec<u64>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = HypothesisArg::Announced)]
    pub hypothesis: HypothesisArg,
    /// Simulate both hypotheses and compare with the exact per-round values.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Start a journaled audit; `--out` names the journal file.
    New {
        #[command(flatten)]
        stat: Stat,
        #[command(flatten)]
        share: Share,
        #[command(flatten)]
        contest: ContestArgs,
        /// Cumulative relevant-ballot round sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        rounds: Vec<u64>,
    },
    /// Record a round's counts.
    Round {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        draws: u64,
        #[arg(long)]
        winner: u64,
        #[arg(long)]
        loser: u64,
        #[arg(long, default_value_t = 0)]
        irrelevant: u64,
        /// Relevant ballots in draw order as W/L letters, for the selection-ordered rules.
        #[arg(long)]
        sequence: Option<String>,
        /// Amend the schedule if the observed total differs from it.
        #[arg(long)]
        amend: bool,
    },
    /// Verify a journal and print the audit document.
    Status {
        #[arg(long)]
        session: PathBuf,
    },
    /// Per-round risk accounting.
    Report {
        #[arg(long)]
        session: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory for audit journals; existing journals are reloaded.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

/// A command's result in every output format.
pub struct Output {
    pub json: Value,
    pub text: String,
    pub csv: Option<(Vec<String>, Vec<Vec<String>>)>,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Output {
            json,
            text: text.into(),
            csv: None,
        }
    }

    fn with_csv(mut self, header: &[&str], rows: Vec<Vec<String>>) -> Self {
        self.csv = Some((header.iter().map(|s| s.to_string()).collect(), rows));
        self
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Text => Ok(self.text.clone()),
            Format::Json => Ok(serde_json::to_string_pretty(&self.json)?),
            Format::Csv => {
                let (header, rows) = self
                    .csv
                    .as_ref()
                    .ok_or_else(|| ServiceError::Usage("this command has no csv output".into()))?;
                let mut lines = vec![header.join(",")];
                lines.extend(rows.iter().map(|r| r.join(",")));
                Ok(lines.join("\n"))
            }
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn with_schema(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    v
}

fn config(stat: &Stat, p: f64) -> Result<AuditConfig> {
    let mut cfg = AuditConfig::new(stat.rule, p, stat.alpha)?;
    cfg.allow_small_delta = stat.allow_small_delta;
    Ok(cfg.with_delta(stat.delta)?)
}

fn schedule(n: Option<u64>, rounds: &[u64]) -> Result<Vec<u64>> {
    match (n, rounds.is_empty()) {
        (Some(n), _) => Ok(vec![n]),
        (None, false) => Ok(rounds.to_vec()),
        (None, true) => Err(ServiceError::Usage("give --n or --rounds".into())),
    }
}

/// Per round: size, kmin, stop probability and risk.
type ScheduleRow = (u64, u64, f64, f64);

/// Distribution after `rounds`, each truncated at the rule's kmin; also returns each round's kmin and tails.
fn run_schedule(
    rounds: &[u64],
    cfg: &AuditConfig,
) -> Result<(PairedDistribution, Vec<ScheduleRow>)> {
    let mut dist = PairedDistribution::new(cfg.p)?;
    let mut rows = Vec::new();
    for &n in rounds {
        let (next, kmin, s, r) = if matches!(cfg.rule, Rule::B2Bravo | Rule::SbBravo) {
            let (next, s, r) = dist.advance_ballot_by_ballot(n, cfg)?;
            (next, cfg.line().kmin(n).max(1), s, r)
        } else {
            let round = dist.advance(n)?;
            let kmin = round.kmin(cfg)?;
            let (next, s, r) = round.truncate(kmin)?;
            (next, kmin, s, r)
        };
        rows.push((n, kmin, s, r));
        dist = next;
    }
    Ok((dist, rows))
}

pub fn load_contest(args: &ContestArgs) -> Result<Option<ContestRecord>> {
    let Some(path) = &args.contest else {
        return Ok(None);
    };
    if path.extension().is_some_and(|e| e == "json") {
        let contest: ContestRecord = serde_json::from_slice(&std::fs::read(path)?)?;
        contest.validate()?;
        return Ok(Some(contest));
    }
    let contests = load_contests(path)?;
    let contest = match &args.state {
        Some(name) => contests
            .into_iter()
            .find(|c| &c.name == name)
            .ok_or_else(|| {
                ServiceError::NotFound(format!("contest {name} in {}", path.display()))
            })?,
        None if contests.len() == 1 => contests.into_iter().next().expect("one contest"),
        None => {
            return Err(ServiceError::Usage(format!(
                "{} holds {} contests; pick one with --state",
                path.display(),
                contests.len()
            )))
        }
    };
    Ok(Some(contest))
}

/// A two-candidate stand-in with winner share `p` over a million ballots.
fn synthetic_contest(p: f64) -> Result<ContestRecord> {
    let total = 1_000_000u64;
    let w = (p * total as f64).round() as u64;
    let tallies = BTreeMap::from([("winner".to_string(), w), ("loser".to_string(), total - w)]);
    Ok(ContestRecord::from_tallies("contest", tallies, total)?)
}

fn kmin_cmd(a: &KminArgs) -> Result<Output> {
    let cfg = config(&a.stat, a.share.require()?)?;
    let rounds = schedule(a.n, &a.rounds)?;
    let (_, rows) = run_schedule(&rounds, &cfg)?;
    let json_rows: Vec<Value> = rows
        .iter()
        .enumerate()
        .map(|(j, &(n, kmin, s, r))| json!({"round": j + 1, "n": n, "kmin": kmin, "stop_prob": sig12(s), "risk": sig12(r)}))
        .collect();
    let text = rows
        .iter()
        .map(|r| r.1.to_string())
        .collect::<Vec<_>>()
        .join("\n");
    let csv = rows
        .iter()
        .enumerate()
        .map(|(j, &(n, kmin, s, r))| {
            vec![
                (j + 1).to_string(),
                n.to_string(),
                kmin.to_string(),
                sig12(s).to_string(),
                sig12(r).to_string(),
            ]
        })
        .collect();
    Ok(Output::new(
        json!({"schema_version": SCHEMA_VERSION, "config": cfg, "rounds": json_rows}),
        text,
    )
    .with_csv(&["round", "n", "kmin", "stop_prob", "risk"], csv))
}

fn ratio_cmd(a: &RatioArgs) -> Result<Output> {
    let cfg = config(&a.stat, a.share.require()?)?;
    let rounds = schedule(a.n, &a.rounds)?;
    let (last, earlier) = rounds.split_last().expect("nonempty schedule");
    if a.k > *last {
        return Err(ServiceError::Usage(format!("k {} exceeds n {last}", a.k)));
    }
    let (dist, _) = run_schedule(earlier, &cfg)?;
    let round = dist.advance(*last)?;
    let kmin = round.kmin(&cfg)?;
    let sigma = ln_sigma(a.k, cfg.p, *last)?.exp();
    let ratio = tail_ratio(&round.h0, &round.ha, a.k)?;
    let pv = p_value_analog(&cfg, ratio, sigma);
    let ratio_r = match ratio {
        TailRatio::Value(v) => TailRatio::Value(sig12(v)),
        other => other,
    };
    let (s, r) = round.tails(a.k);
    let text = format!(
        "sigma {}\ntail_ratio {}\nkmin {kmin}\np_value_analog {}",
        sig12(sigma),
        ratio_r
            .value()
            .map_or("undefined".to_string(), |v| v.to_string()),
        sig12(pv)
    );
    let row = vec![
        last.to_string(),
        a.k.to_string(),
        kmin.to_string(),
        sig12(sigma).to_string(),
        ratio_r.value().map_or(String::new(), |v| v.to_string()),
        sig12(pv).to_string(),
    ];
    Ok(Output::new(
        json!({
            "schema_version": SCHEMA_VERSION, "config": cfg, "n": last, "k": a.k, "kmin": kmin,
            "sigma": sig12(sigma), "tail_ratio": ratio_r, "alt_tail": sig12(s), "null_tail": sig12(r),
            "p_value_analog": sig12(pv),
        }),
        text,
    )
    .with_csv(&["n", "k", "kmin", "sigma", "tail_ratio", "p_value_analog"], vec![row]))
}

fn round_size_cmd(a: &RoundSizeArgs) -> Result<Output> {
    let contest = load_contest(&a.contest)?;
    let p = match (&contest, a.share.resolve()) {
        (_, Some(p)) => p,
        (Some(c), None) => c.p(),
        (None, None) => {
            return Err(ServiceError::Usage(
                "give --p, --margin or --contest".into(),
            ))
        }
    };
    let cfg = config(&a.stat, p)?;
    let (dist, _) = run_schedule(&a.rounds, &cfg)?;
    let opts = PlannerOptions::default();
    let plan = round_plan(next_round_size(
        a.target,
        Some(&dist),
        &cfg,
        contest.as_ref(),
        &opts,
    )?);
    let text = format!(
        "relevant_round_size {}\nnew_relevant_draws {}\nscaled_draws {}\nkmin {}\nstop_prob {}\nmethod {}",
        plan.relevant_round_size, plan.new_relevant_draws, plan.scaled_draws, plan.kmin, plan.achieved_stop_prob, to_json(&plan.method)?.as_str().unwrap_or_default()
    );
    let row = vec![
        plan.relevant_round_size.to_string(),
        plan.new_relevant_draws.to_string(),
        plan.scaled_draws.to_string(),
        plan.expected_distinct
            .map_or(String::new(), |d| d.to_string()),
        plan.kmin.to_string(),
        plan.achieved_stop_prob.to_string(),
    ];
    Ok(Output::new(with_schema(to_json(&plan)?), text).with_csv(
        &[
            "relevant_round_size",
            "new_relevant_draws",
            "scaled_draws",
            "expected_distinct",
            "kmin",
            "stop_prob",
        ],
        vec![row],
    ))
}

const TABLE_MARGINS: [f64; 8] = [0.4, 0.3, 0.2, 0.16, 0.1, 0.08, 0.06, 0.04];

fn table_cmd(t: &TableCommand) -> Result<Output> {
    match t {
        TableCommand::BravoPercentiles {
            margins,
            alpha,
            long_run,
        } => {
            let margins = if margins.is_empty() {
                let mut m = TABLE_MARGINS.to_vec();
                if *long_run {
                    m.extend([0.02, 0.01]);
                }
                m
            } else {
                margins.clone()
            };
            let mut rows = Vec::new();
            let mut json_rows = Vec::new();
            for m in margins {
                let t = bravo_percentiles((1.0 + m) / 2.0, *alpha, &DEFAULT_QUANTILES, None)?;
                let mut row = vec![m.to_string()];
                row.extend(
                    t.percentiles
                        .iter()
                        .map(|p| p.ballots.map_or(String::new(), |b| b.to_string())),
                );
                row.push(format!("{:.2}", t.expected_ballots));
                row.push(format!("{:.2}", t.asn));
                rows.push(row);
                json_rows.push(to_json(&t)?);
            }
            let text = rows
                .iter()
                .map(|r| r.join("\t"))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(
                json!({"schema_version": SCHEMA_VERSION, "rows": json_rows}),
                text,
            )
            .with_csv(
                &[
                    "margin",
                    "p25",
                    "p50",
                    "p75",
                    "p90",
                    "p99",
                    "expected_ballots",
                    "asn",
                ],
                rows,
            ))
        }
        TableCommand::FirstRound {
            contest,
            target,
            alpha,
            delta,
            sb_min_margin,
        } => {
            let opts = PlannerOptions::default();
            let mut rows = Vec::new();
            let mut json_rows = Vec::new();
            for c in load_contests(contest)? {
                let eor = plan_first_round(&c, Rule::EoRBravo, *alpha, *delta, *target, &opts)?;
                let ath = plan_first_round(&c, Rule::Athena, *alpha, *delta, *target, &opts)?;
                let sb = if c.margin() >= *sb_min_margin {
                    Some(plan_first_round(
                        &c,
                        Rule::SbBravo,
                        *alpha,
                        *delta,
                        *target,
                        &opts,
                    )?)
                } else {
                    None
                };
                let dist =
                    |r: &r2audit_core::PlannerResult| r.expected_distinct.unwrap_or(r.scaled_draws);
                let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
                rows.push(vec![
                    c.name.clone(),
                    format!("{:.4}", c.margin()),
                    eor.scaled_draws.to_string(),
                    dist(&eor).to_string(),
                    ath.scaled_draws.to_string(),
                    dist(&ath).to_string(),
                    format!("{:.4}", ath.scaled_draws as f64 / eor.scaled_draws as f64),
                    opt(sb.as_ref().map(|s| s.scaled_draws.to_string())),
                    opt(sb.as_ref().map(|s| dist(s).to_string())),
                    opt(sb.as_ref().map(|s| {
                        format!("{:.4}", ath.scaled_draws as f64 / s.scaled_draws as f64)
                    })),
                ]);
                json_rows.push(json!({
                    "contest": c.name, "margin": sig12(c.margin()),
                    "eor_bravo": round_plan(eor), "athena": round_plan(ath), "sb_bravo": sb.map(round_plan),
                }));
            }
            let text = rows
                .iter()
                .map(|r| r.join("\t"))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(
                json!({"schema_version": SCHEMA_VERSION, "rows": json_rows}),
                text,
            )
            .with_csv(
                &[
                    "contest",
                    "margin",
                    "eor_draws",
                    "eor_distinct",
                    "athena_draws",
                    "athena_distinct",
                    "athena_over_eor",
                    "sb_draws",
                    "sb_distinct",
                    "athena_over_sb",
                ],
                rows,
            ))
        }
        TableCommand::Simulation {
            contest,
            trials,
            seed,
            alpha,
            min_margin,
        } => {
            let opts = PlannerOptions::default();
            let mut rows = Vec::new();
            let mut json_rows = Vec::new();
            for (i, c) in load_contests(contest)?.into_iter().enumerate() {
                if c.margin() < *min_margin {
                    log::info!("skipping {} (margin {:.4})", c.name, c.margin());
                    continue;
                }
                let plan = plan_first_round(&c, Rule::Athena, *alpha, 1.0, 0.9, &opts)?;
                let cfg = AuditConfig::new(Rule::Minerva, c.p(), *alpha)?;
                let spec = |hypothesis, seed| SimSpec {
                    contest: c.clone(),
                    cfg,
                    schedule: RoundSchedule::explicit(vec![plan.scaled_draws])
                        .expect("positive round"),
                    trials: *trials,
                    seed,
                    hypothesis,
                };
                let base = seed.wrapping_add(2 * i as u64);
                let stop = simulate_batch(&spec(SimHypothesis::AsAnnounced, base))?.stop_rate;
                let risk = simulate_batch(&spec(SimHypothesis::Tie, base + 1))?.stop_rate;
                let ratio = if risk > 0.0 {
                    stop / risk
                } else {
                    f64::INFINITY
                };
                rows.push(vec![
                    c.name.clone(),
                    format!("{:.4}", c.margin()),
                    plan.scaled_draws.to_string(),
                    format!("{risk:.4}"),
                    format!("{stop:.4}"),
                    format!("{ratio:.2}"),
                ]);
                json_rows.push(json!({
                    "contest": c.name, "margin": sig12(c.margin()), "draws": plan.scaled_draws,
                    "round_risk": risk, "round_stop_prob": stop, "ratio": if ratio.is_finite() { json!(sig12(ratio)) } else { json!("inf") },
                }));
            }
            let text = rows
                .iter()
                .map(|r| r.join("\t"))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(
                json!({"schema_version": SCHEMA_VERSION, "trials": trials, "seed": seed, "rows": json_rows}),
                text,
            )
            .with_csv(&["contest", "margin", "draws", "round_risk", "round_stop_prob", "ratio"], rows))
        }
    }
}

fn simulate_cmd(a: &SimulateArgs) -> Result<Output> {
    let contest = load_contest(&a.contest)?
        .ok_or_else(|| ServiceError::Usage("simulate needs --contest".into()))?;
    let cfg = config(&a.stat, contest.p())?;
    let spec = SimSpec {
        contest,
        cfg,
        schedule: RoundSchedule::explicit(a.rounds.clone())?,
        trials: a.trials,
        seed: a.seed,
        hypothesis: match a.hypothesis {
            HypothesisArg::Announced => SimHypothesis::AsAnnounced,
            HypothesisArg::Tie => SimHypothesis::Tie,
        },
    };
    if a.compare {
        let cmp = empirical_vs_analytic(&spec)?;
        let rows: Vec<Vec<String>> = cmp
            .rounds
            .iter()
            .map(|r| {
                vec![
                    r.round.to_string(),
                    r.relevant_n.to_string(),
                    sig12(r.analytic_stop).to_string(),
                    r.simulated_stop.to_string(),
                    sig12(r.analytic_risk).to_string(),
                    r.simulated_risk.to_string(),
                    r.stop_flagged.to_string(),
                    r.risk_flagged.to_string(),
                ]
            })
            .collect();
        let text = rows
            .iter()
            .map(|r| r.join("\t"))
            .collect::<Vec<_>>()
            .join("\n");
        return Ok(Output::new(with_schema(to_json(&cmp)?), text).with_csv(
            &[
                "round",
                "relevant_n",
                "analytic_stop",
                "simulated_stop",
                "analytic_risk",
                "simulated_risk",
                "stop_flagged",
                "risk_flagged",
            ],
            rows,
        ));
    }
    let report = simulate_batch(&spec)?;
    let rows: Vec<Vec<String>> = report
        .rounds
        .iter()
        .map(|r| {
            vec![
                r.round.to_string(),
                r.total_draws.to_string(),
                r.stopped.to_string(),
                r.rate.to_string(),
                r.cumulative_rate.to_string(),
            ]
        })
        .collect();
    let text = format!(
        "stop_rate {}\nmean_relevant_draws {}\nmean_total_draws {}",
        report.stop_rate, report.mean_relevant_draws, report.mean_total_draws
    );
    Ok(Output::new(with_schema(to_json(&report)?), text).with_csv(
        &["round", "total_draws", "stopped", "rate", "cumulative_rate"],
        rows,
    ))
}

fn parse_sequence(s: &str) -> Result<Vec<Mark>> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c.to_ascii_uppercase() {
            'W' => Ok(Mark::Winner),
            'L' => Ok(Mark::Loser),
            other => Err(ServiceError::Usage(format!(
                "sequence letter {other:?} must be W or L"
            ))),
        })
        .collect()
}

fn document_output(session: &Session) -> Result<Output> {
    let doc = session.document();
    let rows: Vec<Vec<String>> = doc
        .decision
        .rounds
        .iter()
        .map(|r| {
            let e = &r.evaluation;
            vec![
                e.round.to_string(),
                e.n.to_string(),
                e.k.to_string(),
                e.kmin.to_string(),
                e.ratio_at_k
                    .value()
                    .map_or(String::new(), |v| v.to_string()),
                format!("{:?}", e.decision).to_lowercase(),
                e.stop_prob.to_string(),
                e.risk.to_string(),
            ]
        })
        .collect();
    let mut text = format!(
        "audit {} version {}\nstatus {:?}\ncum_risk {} of alpha {}\n",
        doc.id, doc.version, doc.decision.status, doc.decision.cum_risk, doc.decision.config.alpha
    );
    for r in &rows {
        text.push_str(&format!(
            "round {}: n {} k {} kmin {} ratio {} {}\n",
            r[0], r[1], r[2], r[3], r[4], r[5]
        ));
    }
    text.push_str(&format!("content_hash {}", doc.content_hash));
    Ok(Output::new(to_json(&doc)?, text).with_csv(
        &[
            "round",
            "n",
            "k",
            "kmin",
            "ratio",
            "decision",
            "stop_prob",
            "risk",
        ],
        rows,
    ))
}

fn audit_cmd(cmd: &AuditCommand, out: Option<&Path>) -> Result<Output> {
    match cmd {
        AuditCommand::New {
            stat,
            share,
            contest,
            rounds,
        } => {
            let path =
                out.ok_or_else(|| ServiceError::Usage("audit new needs --out JOURNAL".into()))?;
            let contest = match (load_contest(contest)?, share.resolve()) {
                (Some(c), _) => c,
                (None, Some(p)) => synthetic_contest(p)?,
                (None, None) => {
                    return Err(ServiceError::Usage(
                        "give --contest, --p or --margin".into(),
                    ))
                }
            };
            let p = share.resolve().unwrap_or(contest.p());
            let cfg = config(stat, p)?;
            let id = path
                .file_stem()
                .map_or_else(|| "audit".to_string(), |s| s.to_string_lossy().into_owned());
            let session = Session::create(
                id,
                contest,
                cfg,
                RoundSchedule::explicit(rounds.clone())?,
                Some(path.to_path_buf()),
            )?;
            document_output(&session)
        }
        AuditCommand::Round {
            session,
            draws,
            winner,
            loser,
            irrelevant,
            sequence,
            amend,
        } => {
            let mut s = Session::load(session)?;
            let obs = RoundObservation {
                draws: *draws,
                winner_relevant: *winner,
                loser_relevant: *loser,
                irrelevant: *irrelevant,
                sequence: sequence.as_deref().map(parse_sequence).transpose()?,
            };
            let outcome = s.record_round(obs, *amend)?;
            let ev = round_evaluation(&outcome.evaluation);
            let text = format!(
                "round {}: n {} k {} kmin {} -> {:?}{}",
                ev.round,
                ev.n,
                ev.k,
                ev.kmin,
                ev.decision,
                if outcome.amended {
                    " (schedule amended)"
                } else {
                    ""
                }
            );
            let row = vec![
                ev.round.to_string(),
                ev.n.to_string(),
                ev.k.to_string(),
                ev.kmin.to_string(),
                format!("{:?}", ev.decision).to_lowercase(),
                outcome.amended.to_string(),
            ];
            Ok(Output::new(
                json!({
                    "schema_version": SCHEMA_VERSION, "audit_id": s.id(), "version": s.version(),
                    "evaluation": ev, "amended": outcome.amended, "status": s.state().status,
                }),
                text,
            )
            .with_csv(
                &["round", "n", "k", "kmin", "decision", "amended"],
                vec![row],
            ))
        }
        AuditCommand::Status { session } => document_output(&Session::load(session)?),
        AuditCommand::Report { session } => {
            let doc = Session::load(session)?.document();
            let rep = &doc.risk_report;
            let rows: Vec<Vec<String>> = rep
                .rounds
                .iter()
                .map(|r| {
                    vec![
                        r.round.to_string(),
                        r.n.to_string(),
                        r.kmin.to_string(),
                        r.stop_prob.to_string(),
                        r.risk.to_string(),
                        r.risk_over_stop.map_or(String::new(), |v| v.to_string()),
                        r.within_bound.to_string(),
                    ]
                })
                .collect();
            let text = format!(
                "cum_stop {}\ncum_risk {} (alpha {})\nper-round bound {}",
                rep.cum_stop,
                rep.cum_risk,
                rep.alpha,
                if rep.per_round_bound_holds {
                    "holds"
                } else {
                    "violated"
                }
            );
            Ok(Output::new(with_schema(to_json(rep)?), text).with_csv(
                &[
                    "round",
                    "n",
                    "kmin",
                    "stop_prob",
                    "risk",
                    "risk_over_stop",
                    "within_bound",
                ],
                rows,
            ))
        }
    }
}

/// Run a parsed command and return its output; `serve` blocks until shutdown.
pub fn execute(cli: &Cli) -> Result<Option<Output>> {
    let out = match &cli.command {
        Command::Kmin(a) => kmin_cmd(a)?,
        Command::Ratio(a) => ratio_cmd(a)?,
        Command::RoundSize(a) => round_size_cmd(a)?,
        Command::Table(t) => table_cmd(t)?,
        Command::Simulate(a) => simulate_cmd(a)?,
        Command::Audit(cmd) => {
            let journal_out = matches!(cmd, AuditCommand::New { .. })
                .then_some(cli.out.as_deref())
                .flatten();
            audit_cmd(cmd, journal_out)?
        }
        Command::Serve(a) => {
            let state = match &a.data_dir {
                Some(d) => AppState::with_data_dir(d.clone())?,
                None => AppState::default(),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(&a.addr, state))?;
            return Ok(None);
        }
    };
    Ok(Some(out))
}

/// Parse `argv`, run, and write output; returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = execute(&cli).and_then(|out| {
        let Some(out) = out else { return Ok(()) };
        let rendered = out.render(cli.format)?;
        // `audit new` writes its journal to --out; everything else writes its output there.
        match (&cli.out, &cli.command) {
            (Some(path), cmd) if !matches!(cmd, Command::Audit(AuditCommand::New { .. })) => {
                std::fs::write(path, rendered + "\n")?;
            }
            _ => writeln!(stdout, "{rendered}")?,
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
