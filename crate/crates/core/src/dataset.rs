//! Ingestion of per-contest tally tables.
//!
//! Expected layout: a header `name,<candidate>...,total_ballots`, then one row
//! per contest. The two largest tallies in a row become winner and loser.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::contest::ContestRecord;
use crate::error::{Error, Result};

pub fn read_contests<R: Read>(reader: R) -> Result<Vec<ContestRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| data_err(format!("unreadable header: {e}"), vec![1]))?
        .clone();
    if header.len() < 4 || header.get(header.len() - 1) != Some("total_ballots") {
        return Err(data_err(
            "header must be name, two or more candidate columns, total_ballots",
            vec![1],
        ));
    }
    let candidates: Vec<String> = header
        .iter()
        .skip(1)
        .take(header.len() - 2)
        .map(str::to_string)
        .collect();

    let mut out = Vec::new();
    let mut bad = Vec::new();
    let mut reasons = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let parsed = rec
            .map_err(|e| e.to_string())
            .and_then(|rec| parse_row(&rec, &candidates).map_err(|e| e.to_string()));
        match parsed {
            Ok(c) => out.push(c),
            Err(e) => {
                bad.push(line);
                reasons.push(format!("line {line}: {e}"));
            }
        }
    }
    if !bad.is_empty() {
        return Err(data_err(reasons.join("; "), bad));
    }
    if out.is_empty() {
        return Err(data_err("no contest rows", Vec::new()));
    }
    Ok(out)
}

pub fn load_contests(path: impl AsRef<Path>) -> Result<Vec<ContestRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(|e| data_err(format!("{}: {e}", path.display()), Vec::new()))?;
    read_contests(f)
}

fn parse_row(rec: &csv::StringRecord, candidates: &[String]) -> Result<ContestRecord> {
    let name = rec
        .get(0)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Invariant("missing name".into()))?;
    let num = |idx: usize, what: &str| -> Result<u64> {
        let raw = rec
            .get(idx)
            .ok_or_else(|| Error::Invariant(format!("missing {what}")))?;
        raw.parse::<u64>()
            .map_err(|_| Error::Invariant(format!("{what} {raw:?} is not a count")))
    };
    if rec.len() != candidates.len() + 2 {
        return Err(Error::Invariant(format!(
            "expected {} fields, found {}",
            candidates.len() + 2,
            rec.len()
        )));
    }
    let mut tallies = BTreeMap::new();
    for (j, c) in candidates.iter().enumerate() {
        tallies.insert(c.clone(), num(j + 1, c)?);
    }
    let total = num(candidates.len() + 1, "total_ballots")?;
    ContestRecord::from_tallies(name, tallies, total)
}

fn data_err(message: impl Into<String>, lines: Vec<usize>) -> Error {
    Error::Data {
        message: message.into(),
        lines,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows() {
        let csv = "state,a,b,total_ballots\nX,60,40,110\nY,10,30,45\n";
        let cs = read_contests(csv.as_bytes()).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[1].winner, "b");
        assert!((cs[0].margin() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(
            read_contests("".as_bytes()),
            Err(Error::Data { .. })
        ));
        assert!(matches!(
            read_contests("state,a,b,total_ballots\n".as_bytes()),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn malformed_lines_are_listed() {
        let csv = "state,a,b,total_ballots\nX,60,40,110\nY,ten,30,45\nZ,5,5,10\nW,6,5\n";
        match read_contests(csv.as_bytes()) {
            Err(Error::Data { lines, .. }) => assert_eq!(lines, vec![3, 4, 5]),
            other => panic!("{other:?}"),
        }
    }
}
