//! Announced contest results and the quantities derived from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContestRecord {
    pub name: String,
    pub tallies: BTreeMap<String, u64>,
    pub total_ballots: u64,
    pub winner: String,
    pub loser: String,
}

impl ContestRecord {
    /// Record with the top two candidates as winner and loser.
    pub fn from_tallies(
        name: impl Into<String>,
        tallies: BTreeMap<String, u64>,
        total_ballots: u64,
    ) -> Result<Self> {
        let mut ranked: Vec<(&String, &u64)> = tallies.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        if ranked.len() < 2 {
            return Err(Error::Invariant(
                "a contest needs at least two candidates".into(),
            ));
        }
        let (winner, loser) = (ranked[0].0.clone(), ranked[1].0.clone());
        let c = ContestRecord {
            name: name.into(),
            tallies,
            total_ballots,
            winner,
            loser,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let get = |who: &str| {
            self.tallies
                .get(who)
                .copied()
                .ok_or_else(|| Error::Invariant(format!("{}: no tally for {who:?}", self.name)))
        };
        let (w, l) = (get(&self.winner)?, get(&self.loser)?);
        if self.winner == self.loser {
            return Err(Error::Invariant(format!(
                "{}: winner and loser are the same candidate",
                self.name
            )));
        }
        if w <= l {
            return Err(Error::Invariant(format!(
                "{}: announced winner {} ({w}) does not lead loser {} ({l})",
                self.name, self.winner, self.loser
            )));
        }
        if l == 0 {
            return Err(Error::Invariant(format!(
                "{}: loser has no votes, so p = 1",
                self.name
            )));
        }
        let counted: u64 = self.tallies.values().sum();
        if self.total_ballots < counted {
            return Err(Error::Invariant(format!(
                "{}: total ballots {} below the {counted} votes tallied",
                self.name, self.total_ballots
            )));
        }
        Ok(())
    }

    pub fn winner_votes(&self) -> u64 {
        self.tallies[&self.winner]
    }

    pub fn loser_votes(&self) -> u64 {
        self.tallies[&self.loser]
    }

    /// Winner plus loser votes.
    pub fn relevant(&self) -> u64 {
        self.winner_votes() + self.loser_votes()
    }

    /// Winner fraction among relevant ballots.
    pub fn p(&self) -> f64 {
        self.winner_votes() as f64 / self.relevant() as f64
    }

    pub fn margin(&self) -> f64 {
        (self.winner_votes() - self.loser_votes()) as f64 / self.relevant() as f64
    }

    /// Total ballots per relevant ballot.
    pub fn scale(&self) -> f64 {
        self.total_ballots as f64 / self.relevant() as f64
    }

    /// Total draws expected to yield `relevant` relevant ballots, rounded up.
    pub fn scale_draws(&self, relevant: u64) -> u64 {
        let num = relevant as u128 * self.total_ballots as u128;
        num.div_ceil(self.relevant() as u128) as u64
    }
}
