//! Roster CSV ingestion with the population-based cap rule.
//!
//! Columns: `id,name,state,population`, plus an optional `cap` column whose
//! non-empty values override the rule.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::apportion::SizeThresholds;
use crate::model::{City, GroupKey};

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: duplicate city id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("invalid cap rule: {0}")]
    InvalidRule(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Letter caps as a function of population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapRule {
    pub small_threshold: f64,
    pub large_threshold: f64,
    pub small_frac: f64,
    pub large_frac: f64,
    pub mid_cap: f64,
}

impl Default for CapRule {
    fn default() -> Self {
        CapRule {
            small_threshold: 500.0,
            large_threshold: 2500.0,
            small_frac: 0.5,
            large_frac: 0.1,
            mid_cap: 250.0,
        }
    }
}

impl CapRule {
    pub fn validate(&self) -> Result<(), RosterError> {
        if !(self.small_threshold > 0.0 && self.large_threshold > self.small_threshold) {
            return Err(RosterError::InvalidRule(
                "thresholds must be positive and increasing".into(),
            ));
        }
        for (name, f) in [
            ("small_frac", self.small_frac),
            ("large_frac", self.large_frac),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(RosterError::InvalidRule(format!(
                    "{name} must lie in (0, 1]"
                )));
            }
        }
        if !(self.mid_cap > 0.0 && self.mid_cap.is_finite()) {
            return Err(RosterError::InvalidRule("mid_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn cap(&self, population: f64) -> f64 {
        if population < self.small_threshold {
            self.small_frac * population
        } else if population > self.large_threshold {
            self.large_frac * population
        } else {
            self.mid_cap
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roster {
    pub cities: Vec<City>,
    /// SHA-256 of the raw file bytes.
    pub source_digest: String,
}

#[derive(Debug, Deserialize)]
struct Record {
    id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    state: String,
    population: String,
    #[serde(default)]
    cap: Option<String>,
}

pub fn read_roster<R: Read>(
    mut reader: R,
    rule: &CapRule,
    thresholds: &SizeThresholds,
) -> Result<Roster, RosterError> {
    rule.validate()?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let source_digest = hex::encode(Sha256::digest(&bytes));

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| RosterError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for col in ["id", "population"] {
        if !headers.iter().any(|h| h == col) {
            return Err(RosterError::MissingColumn(col));
        }
    }

    let mut seen = HashSet::new();
    let mut cities = Vec::new();
    for rec in rdr.deserialize::<Record>() {
        let rec = rec.map_err(|e| RosterError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = cities.len() as u64 + 2;
        let population = parse_positive(&rec.population, "population", line)?;
        let cap = match rec.cap.as_deref() {
            Some(s) if !s.is_empty() => parse_positive(s, "cap", line)?,
            _ => rule.cap(population),
        };
        if !seen.insert(rec.id.clone()) {
            return Err(RosterError::DuplicateId { line, id: rec.id });
        }
        let name = if rec.name.is_empty() {
            rec.id.clone()
        } else {
            rec.name
        };
        cities.push(City {
            group_key: Some(GroupKey {
                size_class: thresholds.classify(population),
                state: rec.state,
            }),
            id: rec.id,
            name,
            population,
            cap,
        });
    }
    Ok(Roster {
        cities,
        source_digest,
    })
}

pub fn load_roster(
    path: &Path,
    rule: &CapRule,
    thresholds: &SizeThresholds,
) -> Result<Roster, RosterError> {
    read_roster(std::fs::File::open(path)?, rule, thresholds)
}

fn parse_positive(s: &str, what: &str, line: u64) -> Result<f64, RosterError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(RosterError::Parse {
            line,
            message: format!("{what} must be a positive number, got `{s}`"),
        }),
    }
}

/// Writes cities back out, caps included, in the ingestion format.
pub fn write_roster_csv(cities: &[City]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "name", "state", "population", "cap"])
        .expect("in-memory write");
    for c in cities {
        let state = c.group_key.as_ref().map_or("", |k| k.state.as_str());
        w.write_record([
            c.id.as_str(),
            c.name.as_str(),
            state,
            &c.population.to_string(),
            &c.cap.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SizeClass;

    fn read(s: &str) -> Result<Roster, RosterError> {
        read_roster(
            s.as_bytes(),
            &CapRule::default(),
            &SizeThresholds::default(),
        )
    }

    #[test]
    fn cap_rule_bands() {
        let r = CapRule::default();
        assert_eq!(r.cap(400.0), 200.0);
        assert_eq!(r.cap(1000.0), 250.0);
        assert_eq!(r.cap(10_000.0), 1000.0);
        assert_eq!(r.cap(500.0), 250.0);
        assert_eq!(r.cap(2500.0), 250.0);
    }

    #[test]
    fn parses_and_classifies() {
        let r = read("id,name,state,population\n1,A,X,400\n2,B,X,30000\n3,C,Y,150000\n").unwrap();
        assert_eq!(r.cities.len(), 3);
        assert_eq!(r.cities[0].cap, 200.0);
        let classes: Vec<_> = r
            .cities
            .iter()
            .map(|c| c.group_key.as_ref().unwrap().size_class)
            .collect();
        assert_eq!(
            classes,
            [SizeClass::Small, SizeClass::Medium, SizeClass::Large]
        );
        assert_eq!(r.source_digest.len(), 64);
    }

    #[test]
    fn explicit_cap_column_overrides_rule() {
        let r = read("id,name,state,population,cap\na,A,X,400,7\nb,B,X,400,\n").unwrap();
        assert_eq!(r.cities[0].cap, 7.0);
        assert_eq!(r.cities[1].cap, 200.0);
    }

    #[test]
    fn reports_line_numbers() {
        match read("id,name,state,population\n1,A,X,400\n2,B,X,-5\n") {
            Err(RosterError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match read("id,name,state,population\n1,A,X,400\n1,B,X,5\n") {
            Err(RosterError::DuplicateId { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read("id,name\n1,A\n"),
            Err(RosterError::MissingColumn("population"))
        ));
    }

    #[test]
    fn round_trip() {
        let r = read("id,name,state,population\n1,A,X,400\n2,B,Y,3000\n").unwrap();
        let again = read(&write_roster_csv(&r.cities)).unwrap();
        assert_eq!(again.cities, r.cities);
    }

    #[test]
    fn rejects_bad_rule() {
        let rule = CapRule {
            small_frac: 1.5,
            ..CapRule::default()
        };
        assert!(rule.validate().is_err());
    }
}
