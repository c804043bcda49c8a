mod common;

use r2audit_core::dataset::{load_contests, read_contests};
use r2audit_core::Error;

const DATA: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../data/2016_presidential.csv"
);

#[test]
fn bundled_dataset_loads_every_state() {
    let contests = load_contests(DATA).unwrap();
    assert_eq!(contests.len(), 51);
    for c in &contests {
        c.validate().unwrap();
        assert_eq!(
            c.winner,
            if c.winner_votes() == c.tallies["trump"] {
                "trump"
            } else {
                "clinton"
            }
        );
    }
}

#[test]
fn margins_match_reference_to_four_places() {
    let contests = load_contests(DATA).unwrap();
    for row in common::tables::FIRST_ROUNDS {
        let c = contests
            .iter()
            .find(|c| c.name == row.0)
            .unwrap_or_else(|| panic!("{} missing", row.0));
        assert!(
            (c.margin() - row.1).abs() < 5e-5,
            "{}: {} vs {}",
            row.0,
            c.margin(),
            row.1
        );
    }
    let alaska = contests.iter().find(|c| c.name == "Alaska").unwrap();
    assert_eq!(alaska.scale_draws(259), 295);
}

#[test]
fn missing_file_is_a_data_error() {
    assert!(matches!(
        load_contests("/nonexistent/contests.csv"),
        Err(Error::Data { .. })
    ));
}

#[test]
fn rows_with_impossible_totals_are_rejected() {
    let csv = "state,a,b,total_ballots\nOk,60,40,110\nShort,60,40,90\nTie,50,50,100\n";
    match read_contests(csv.as_bytes()) {
        Err(Error::Data { lines, .. }) => assert_eq!(lines, vec![3, 4]),
        other => panic!("{other:?}"),
    }
}
