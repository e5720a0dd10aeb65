//! Bookmaker odds ingestion (football-data.co.uk column convention).

use std::cmp::Ordering;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::aggregation::GameRound;
use crate::simplex::Distribution;
use crate::{Error, Result};

/// Converts decimal odds to probabilities by inverse-odds normalization.
pub fn odds_to_probabilities(odds: &[f64]) -> Result<Distribution> {
    if odds.is_empty() {
        return Err(Error::Dimension("no odds given".into()));
    }
    if let Some(o) = odds.iter().find(|o| !(**o > 1.0 && o.is_finite())) {
        return Err(Error::Domain(format!(
            "decimal odds must exceed 1, got {o}"
        )));
    }
    Distribution::from_masses(odds.iter().map(|o| 1.0 / o).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchOutcome {
    Home,
    Draw,
    Away,
}

impl MatchOutcome {
    pub fn index(self) -> usize {
        match self {
            MatchOutcome::Home => 0,
            MatchOutcome::Draw => 1,
            MatchOutcome::Away => 2,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "H" | "h" => Some(MatchOutcome::Home),
            "D" | "d" => Some(MatchOutcome::Draw),
            "A" | "a" => Some(MatchOutcome::Away),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRecord {
    pub date: NaiveDate,
    pub league: String,
    pub home_team: String,
    pub away_team: String,
    pub outcome: MatchOutcome,
    /// Home/draw/away decimal odds, one triple per bookmaker.
    pub odds: Vec<[f64; 3]>,
}

/// Column names; each bookmaker prefix `P` reads columns `PH`, `PD`, `PA`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub league: String,
    pub home_team: String,
    pub away_team: String,
    pub result: String,
    pub bookmakers: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "Date".into(),
            league: "Div".into(),
            home_team: "HomeTeam".into(),
            away_team: "AwayTeam".into(),
            result: "FTR".into(),
            bookmakers: vec!["B365".into(), "BW".into()],
        }
    }
}

impl ColumnMap {
    pub fn with_bookmakers<S: Into<String>>(bookmakers: impl IntoIterator<Item = S>) -> Self {
        Self {
            bookmakers: bookmakers.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    /// Reads a JSON column map; missing keys take the defaults.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: Self = serde_json::from_str(&text)?;
        if map.bookmakers.is_empty() {
            return Err(Error::Config("column map lists no bookmakers".into()));
        }
        Ok(map)
    }

    fn required(&self) -> Vec<String> {
        let mut cols = vec![
            self.date.clone(),
            self.league.clone(),
            self.home_team.clone(),
            self.away_team.clone(),
            self.result.clone(),
        ];
        for b in &self.bookmakers {
            for s in ["H", "D", "A"] {
                cols.push(format!("{b}{s}"));
            }
        }
        cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedOdds {
    /// Sorted by date, league, then home team.
    pub records: Vec<OddsRecord>,
    /// Rows skipped because a selected bookmaker had no odds.
    pub dropped: usize,
}

impl IngestedOdds {
    pub fn parsed(&self) -> usize {
        self.records.len()
    }

    /// Each bookmaker becomes an expert over (home, draw, away).
    pub fn games(&self) -> Result<Vec<GameRound>> {
        self.records
            .iter()
            .map(|r| {
                Ok(GameRound {
                    experts: r
                        .odds
                        .iter()
                        .map(|t| odds_to_probabilities(t))
                        .collect::<Result<_>>()?,
                    outcome: r.outcome.index(),
                })
            })
            .collect()
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    ["%d/%m/%Y", "%d/%m/%y", "%Y-%m-%d"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

/// Reads an odds CSV. Row numbers in errors are file line numbers (the header
/// is line 1).
pub fn ingest_odds_csv(path: &Path, columns: &ColumnMap) -> Result<IngestedOdds> {
    let file = std::fs::File::open(path)?;
    ingest_odds_reader(file, columns)
}

pub fn ingest_odds_reader<R: std::io::Read>(
    reader: R,
    columns: &ColumnMap,
) -> Result<IngestedOdds> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing: Vec<String> = columns
        .required()
        .into_iter()
        .filter(|c| position(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(missing));
    }
    let col = |name: &str| position(name).expect("checked above");
    let (i_date, i_league, i_home, i_away, i_result) = (
        col(&columns.date),
        col(&columns.league),
        col(&columns.home_team),
        col(&columns.away_team),
        col(&columns.result),
    );
    let odds_cols: Vec<[usize; 3]> = columns
        .bookmakers
        .iter()
        .map(|b| {
            [
                col(&format!("{b}H")),
                col(&format!("{b}D")),
                col(&format!("{b}A")),
            ]
        })
        .collect();

    let mut records = Vec::new();
    let mut dropped = 0;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i as u64 + 2, |p| p.line()) as usize;
        let field = |j: usize| row.get(j).unwrap_or("").trim();
        let parse_err = |msg: String| Error::Parse { row: line, msg };

        if odds_cols.iter().flatten().any(|&j| field(j).is_empty()) {
            dropped += 1;
            continue;
        }
        let mut odds = Vec::with_capacity(odds_cols.len());
        for (b, cols) in columns.bookmakers.iter().zip(&odds_cols) {
            let mut triple = [0.0; 3];
            for (slot, &j) in triple.iter_mut().zip(cols) {
                let raw = field(j);
                let v: f64 = raw.parse().map_err(|_| {
                    parse_err(format!("bookmaker {b}: odds `{raw}` are not a number"))
                })?;
                if !(v > 1.0 && v.is_finite()) {
                    return Err(parse_err(format!(
                        "bookmaker {b}: odds {raw} must exceed 1"
                    )));
                }
                *slot = v;
            }
            odds.push(triple);
        }
        let date = parse_date(field(i_date))
            .ok_or_else(|| parse_err(format!("unrecognised date `{}`", field(i_date))))?;
        let outcome = MatchOutcome::parse(field(i_result))
            .ok_or_else(|| parse_err(format!("result `{}` is not H, D or A", field(i_result))))?;
        records.push(OddsRecord {
            date,
            league: field(i_league).to_string(),
            home_team: field(i_home).to_string(),
            away_team: field(i_away).to_string(),
            outcome,
            odds,
        });
    }
    records.sort_by(|a, b| {
        a.date
            .cmp(&b.date)
            .then_with(|| a.league.cmp(&b.league))
            .then_with(|| a.home_team.cmp(&b.home_team))
            .then(Ordering::Equal)
    });
    Ok(IngestedOdds { records, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols() -> ColumnMap {
        ColumnMap::with_bookmakers(["B365", "BW"])
    }

    const HEADER: &str = "Div,Date,HomeTeam,AwayTeam,FTR,B365H,B365D,B365A,BWH,BWD,BWA\n";

    #[test]
    fn odds_examples() {
        let p = odds_to_probabilities(&[2.0, 3.0, 6.0]).unwrap();
        assert!(
            p.max_abs_diff(&Distribution::new(vec![0.5, 1.0 / 3.0, 1.0 / 6.0]).unwrap()) < 1e-15
        );
        assert_eq!(
            odds_to_probabilities(&[2.0, 2.0]).unwrap().weights(),
            &[0.5, 0.5]
        );
        assert_eq!(
            odds_to_probabilities(&[1.5, 3.0, 3.0]).unwrap().weights(),
            &[0.5, 0.25, 0.25]
        );
        assert!(matches!(
            odds_to_probabilities(&[0.9, 2.0]),
            Err(Error::Domain(_))
        ));
        assert!(odds_to_probabilities(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_rows_sorted_by_date() {
        let data = format!(
            "{HEADER}E0,14/08/05,Man United,Everton,H,2,4,4,2,4,4\nE0,13/08/05,Arsenal,Chelsea,A,4,4,2,4,2,4\n"
        );
        let got = ingest_odds_reader(data.as_bytes(), &cols()).unwrap();
        assert_eq!(got.dropped, 0);
        let games = got.games().unwrap();
        assert_eq!(games.len(), 2);
        assert_eq!(got.records[0].home_team, "Arsenal");
        assert_eq!(games[0].outcome, 2);
        assert_eq!(games[0].experts[0].weights(), &[0.25, 0.25, 0.5]);
        assert_eq!(games[0].experts[1].weights(), &[0.25, 0.5, 0.25]);
        assert_eq!(games[1].experts[0].weights(), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn empty_file_with_header() {
        let got = ingest_odds_reader(HEADER.as_bytes(), &cols()).unwrap();
        assert!(got.records.is_empty());
        assert_eq!(got.dropped, 0);
    }

    #[test]
    fn bad_odds_name_the_row() {
        let data =
            format!("{HEADER}E0,13/08/05,A,B,H,2,4,4,2,4,4\nE0,13/08/05,C,D,H,0.9,4,4,2,4,4\n");
        match ingest_odds_reader(data.as_bytes(), &cols()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_columns_are_listed() {
        let data = "Div,Date,HomeTeam,AwayTeam,B365H,B365D\n";
        match ingest_odds_reader(data.as_bytes(), &ColumnMap::with_bookmakers(["B365"])) {
            Err(Error::Schema(cols)) => {
                assert_eq!(cols, vec!["FTR".to_string(), "B365A".to_string()])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rows_with_missing_odds_are_dropped() {
        let data =
            format!("{HEADER}E0,13/08/2005,A,B,H,2,4,4,,,\nE0,2005-08-13,C,D,D,2,4,4,2,4,4\n");
        let got = ingest_odds_reader(data.as_bytes(), &cols()).unwrap();
        assert_eq!((got.parsed(), got.dropped), (1, 1));
        assert_eq!(got.records[0].outcome, MatchOutcome::Draw);
    }
}
