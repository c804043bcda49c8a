mod common;

use r2audit_core::dataset::load_contests;
use r2audit_core::planner::{asn, bravo_percentiles, plan_first_round, DEFAULT_QUANTILES};
use r2audit_core::{ContestRecord, PlanMethod, PlannerOptions, Rule};

const DATA: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../data/2016_presidential.csv"
);

/// States whose sizes come from the normal approximation or whose tallies differ slightly.
const APPROXIMATE: &[&str] = &["Michigan", "NewHampshire", "Pennsylvania"];

fn contests() -> Vec<ContestRecord> {
    load_contests(DATA).unwrap()
}

fn plan(c: &ContestRecord, rule: Rule) -> (u64, u64, PlanMethod) {
    let r = plan_first_round(c, rule, 0.1, 1.0, 0.9, &PlannerOptions::default()).unwrap();
    (r.scaled_draws, r.expected_distinct.unwrap(), r.method)
}

#[test]
fn exact_first_rounds_match_reference() {
    let cs = contests();
    for row in common::tables::FIRST_ROUNDS
        .iter()
        .filter(|r| !APPROXIMATE.contains(&r.0))
    {
        let c = cs.iter().find(|c| c.name == row.0).unwrap();
        assert_eq!(
            plan(c, Rule::EoRBravo),
            (row.2, row.3, PlanMethod::ExactConvolution),
            "{} eor",
            row.0
        );
        assert_eq!(
            plan(c, Rule::Athena),
            (row.4, row.5, PlanMethod::ExactConvolution),
            "{} athena",
            row.0
        );
        if let (Some(d), Some(u)) = (row.6, row.7) {
            assert_eq!(
                plan(c, Rule::SbBravo),
                (d, u, PlanMethod::ExactConvolution),
                "{} sb",
                row.0
            );
        }
    }
}

#[test]
fn large_rounds_use_normal_approximation_within_five_percent() {
    let cs = contests();
    let mi = cs.iter().find(|c| c.name == "Michigan").unwrap();
    let nh = cs.iter().find(|c| c.name == "NewHampshire").unwrap();
    for (c, rule, want) in [
        (mi, Rule::EoRBravo, 2_618_926u64),
        (mi, Rule::Athena, 1_259_688),
        (nh, Rule::EoRBravo, 1_007_590),
    ] {
        let (draws, _, method) = plan(c, rule);
        assert_eq!(method, PlanMethod::GaussianApprox);
        let rel = (draws as f64 / want as f64 - 1.0).abs();
        assert!(rel < 0.05, "{} {rule}: {draws} vs {want}", c.name);
    }
}

#[test]
fn small_margin_exact_rounds_within_one_percent() {
    let cs = contests();
    let pa = cs.iter().find(|c| c.name == "Pennsylvania").unwrap();
    for (rule, want) in [(Rule::EoRBravo, 265_245u64), (Rule::Athena, 127_792)] {
        let (draws, _, method) = plan(pa, rule);
        assert_eq!(method, PlanMethod::ExactConvolution);
        assert!(
            (draws as f64 / want as f64 - 1.0).abs() < 0.01,
            "{rule}: {draws} vs {want}"
        );
    }
}

#[test]
fn athena_roughly_halves_end_of_round_bravo() {
    let cs = contests();
    for row in common::tables::FIRST_ROUNDS
        .iter()
        .filter(|r| (0.05..=0.45).contains(&r.1))
    {
        let ratio = row.4 as f64 / row.2 as f64;
        assert!((0.46..=0.57).contains(&ratio), "{}: {ratio}", row.0);
        let c = cs.iter().find(|c| c.name == row.0).unwrap();
        let ours = plan(c, Rule::Athena).0 as f64 / plan(c, Rule::EoRBravo).0 as f64;
        assert!((0.46..=0.57).contains(&ours), "{}: {ours}", row.0);
    }
}

#[test]
fn ballot_by_ballot_table_rows() {
    // (margin, percentiles at 25/50/75/90/99, expected ballots)
    let rows: &[(f64, [u64; 5], f64)] = &[
        (0.4, [12, 22, 38, 60, 131], 29.47),
        (0.3, [23, 38, 66, 108, 236], 52.83),
        (0.2, [49, 84, 149, 244, 538], 118.00),
        (0.16, [77, 131, 231, 381, 842], 183.60),
        (0.1, [193, 332, 587, 974, 2155], 466.47),
        (0.06, [531, 914, 1621, 2698, 5976], 1287.60),
    ];
    for &(margin, want, expected) in rows {
        let t = bravo_percentiles((1.0 + margin) / 2.0, 0.1, &DEFAULT_QUANTILES, None).unwrap();
        let got: Vec<u64> = t.percentiles.iter().map(|p| p.ballots.unwrap()).collect();
        for (g, w) in got.iter().zip(want) {
            assert!(g.abs_diff(w) <= 2, "margin {margin}: {got:?} vs {want:?}");
        }
        assert!(
            (t.expected_ballots / expected - 1.0).abs() < 0.005,
            "margin {margin}: {}",
            t.expected_ballots
        );
    }
}

#[test]
fn average_sample_numbers() {
    let want = [
        (0.4, 30.03),
        (0.3, 53.25),
        (0.2, 118.88),
        (0.16, 184.89),
        (0.1, 469.26),
    ];
    for (margin, asn_want) in want {
        let got = asn((1.0 + margin) / 2.0, 0.1).unwrap();
        assert!((got - asn_want).abs() <= 0.05, "margin {margin}: {got}");
    }
}
