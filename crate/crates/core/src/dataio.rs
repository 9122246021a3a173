//! Loading, validating and summarizing `(player, target, outcome, count)` data.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{BoardSpec, Outcome, TargetRegion};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: {msg}")]
    Validation { line: u64, msg: String },
    #[error("no tables to summarize")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThrowRecord {
    pub player: String,
    pub target: TargetRegion,
    pub outcome: Outcome,
    pub count: u64,
}

/// Counts for one (player, target), dense in `outcome_set(target)` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub player: String,
    pub target: TargetRegion,
    pub counts: Vec<u64>,
}

impl CountTable {
    pub fn new(player: impl Into<String>, target: TargetRegion, counts: Vec<u64>) -> Self {
        CountTable {
            player: player.into(),
            target,
            counts,
        }
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// Raw fractions, or `None` when there are no throws.
    pub fn fractions(&self) -> Option<Vec<f64>> {
        let n = self.n();
        (n > 0).then(|| self.counts.iter().map(|&c| c as f64 / n as f64).collect())
    }
}

/// Number of strictly positive entries.
pub fn coverage(table: &CountTable) -> usize {
    table.counts.iter().filter(|&&c| c > 0).count()
}

#[derive(Debug, Deserialize)]
struct Row {
    player: String,
    target: String,
    outcome: String,
    count: String,
}

/// Read a CSV with header `player,target,outcome,count` into dense tables, one
/// per (player, target) in order of first appearance.
pub fn load_dataset<R: Read>(board: &BoardSpec, source: R) -> Result<Vec<CountTable>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers()?.clone();
    let expected = ["player", "target", "outcome", "count"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(DataError::Parse {
            line: 1,
            msg: format!(
                "expected header {:?}, got {:?}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut tables: Vec<CountTable> = Vec::new();
    let mut index: HashMap<(String, TargetRegion), usize> = HashMap::new();
    let mut seen: Vec<Vec<bool>> = Vec::new();

    for result in rdr.records() {
        let record = result.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| DataError::Parse { line, msg: e.to_string() })?;
        let rec = parse_row(&row).map_err(|msg| DataError::Parse { line, msg })?;

        let set = board.outcome_set(rec.target);
        let Some(k) = set.iter().position(|&o| o == rec.outcome) else {
            return Err(DataError::Validation {
                line,
                msg: format!("outcome {} is not possible when aiming at {}", rec.outcome, rec.target),
            });
        };
        let slot = *index.entry((rec.player.clone(), rec.target)).or_insert_with(|| {
            tables.push(CountTable::new(rec.player.clone(), rec.target, vec![0; set.len()]));
            seen.push(vec![false; set.len()]);
            tables.len() - 1
        });
        if seen[slot][k] {
            return Err(DataError::Validation {
                line,
                msg: format!("duplicate row for ({}, {}, {})", rec.player, rec.target, rec.outcome),
            });
        }
        seen[slot][k] = true;
        tables[slot].counts[k] = rec.count;
    }
    Ok(tables)
}

fn parse_row(row: &Row) -> Result<ThrowRecord, String> {
    let player = row.player.trim().to_string();
    if player.is_empty() {
        return Err("empty player name".into());
    }
    let target: TargetRegion = row.target.parse().map_err(|e| format!("target: {e}"))?;
    let outcome: Outcome = row.outcome.parse().map_err(|e| format!("outcome: {e}"))?;
    let count: u64 = row
        .count
        .trim()
        .parse()
        .map_err(|_| format!("count {:?} is not a non-negative integer", row.count))?;
    Ok(ThrowRecord {
        player,
        target,
        outcome,
        count,
    })
}

pub fn load_dataset_file(board: &BoardSpec, path: &std::path::Path) -> Result<Vec<CountTable>, DataError> {
    load_dataset(board, std::fs::File::open(path)?)
}

/// Write tables back out in the same CSV format, one row per outcome.
pub fn write_dataset<W: Write>(board: &BoardSpec, tables: &[CountTable], sink: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["player", "target", "outcome", "count"])?;
    for t in tables {
        for (o, c) in board.outcome_set(t.target).iter().zip(&t.counts) {
            w.write_record([t.player.as_str(), &t.target.to_string(), &o.to_string(), &c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Componentwise sum of tables that share a target.
pub fn aggregate(target: TargetRegion, tables: &[&CountTable], label: &str) -> CountTable {
    let k = tables.first().map_or(0, |t| t.k());
    let mut counts = vec![0; k];
    for t in tables {
        assert_eq!(t.target, target, "aggregating tables for different targets");
        for (a, c) in counts.iter_mut().zip(&t.counts) {
            *a += c;
        }
    }
    CountTable::new(label, target, counts)
}

/// Group tables by target, preserving first-appearance order.
pub fn by_target(tables: &[CountTable]) -> Vec<(TargetRegion, Vec<&CountTable>)> {
    let mut out: Vec<(TargetRegion, Vec<&CountTable>)> = Vec::new();
    for t in tables {
        match out.iter_mut().find(|(tr, _)| *tr == t.target) {
            Some((_, v)) => v.push(t),
            None => out.push((t.target, vec![t])),
        }
    }
    out
}

pub const TOTAL_LABEL: &str = "Total";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    /// `None` for the aggregate row.
    pub player: Option<String>,
    pub target: TargetRegion,
    pub attempts: u64,
    pub success_rate: Option<f64>,
    pub expected_score: Option<f64>,
    pub coverage: usize,
}

fn summarize_one(board: &BoardSpec, t: &CountTable, player: Option<String>) -> SummaryStats {
    let set = board.outcome_set(t.target);
    let n = t.n();
    let hit = set
        .iter()
        .position(|&o| o == t.target.outcome())
        .expect("target in its own outcome set");
    let (success_rate, expected_score) = if n == 0 {
        (None, None)
    } else {
        let points: u64 = set.iter().zip(&t.counts).map(|(o, &c)| o.numeric_score() as u64 * c).sum();
        (Some(t.counts[hit] as f64 / n as f64), Some(points as f64 / n as f64))
    };
    SummaryStats {
        player,
        target: t.target,
        attempts: n,
        success_rate,
        expected_score,
        coverage: coverage(t),
    }
}

/// Per-table statistics, followed for each target by an aggregate row.
pub fn summarize(board: &BoardSpec, tables: &[CountTable]) -> Result<Vec<SummaryStats>, DataError> {
    if tables.is_empty() {
        return Err(DataError::Empty);
    }
    let mut out = Vec::with_capacity(tables.len() + 4);
    for (target, group) in by_target(tables) {
        out.extend(group.iter().map(|t| summarize_one(board, t, Some(t.player.clone()))));
        out.push(summarize_one(board, &aggregate(target, &group, TOTAL_LABEL), None));
    }
    Ok(out)
}
