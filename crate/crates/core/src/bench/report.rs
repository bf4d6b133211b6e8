use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::runner::{CellKey, EpisodeRow};
use super::BenchError;

/// Five-number summary plus mean. Quartiles interpolate linearly between
/// order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted `v` at `p` in `[0, 1]`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self, BenchError> {
        if values.is_empty() {
            return Err(BenchError::Empty);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub key: CellKey,
    pub episodes: usize,
    pub fraction: Summary,
    pub collisions: Summary,
    pub distance: Summary,
    pub terminations: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub episodes: usize,
    pub cells: Vec<CellReport>,
}

impl SuiteReport {
    pub fn cell(&self, key: &CellKey) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.key == *key)
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Per-cell statistics, cells in key order.
pub fn aggregate(rows: &[EpisodeRow]) -> Result<SuiteReport, BenchError> {
    let first = rows.first().ok_or(BenchError::Empty)?;
    let mut groups: BTreeMap<CellKey, Vec<&EpisodeRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.cell()).or_default().push(r);
    }
    let cells = groups
        .into_iter()
        .map(|(key, rs)| {
            let col = |f: fn(&EpisodeRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let mut terminations = BTreeMap::new();
            for r in &rs {
                *terminations.entry(r.termination.as_str().to_string()).or_insert(0) += 1;
            }
            Ok(CellReport {
                key,
                episodes: rs.len(),
                fraction: Summary::of(&col(|r| r.fraction))?,
                collisions: Summary::of(&col(|r| r.collisions as f64))?,
                distance: Summary::of(&col(|r| r.distance))?,
                terminations,
            })
        })
        .collect::<Result<_, BenchError>>()?;
    Ok(SuiteReport {
        suite: first.suite.clone(),
        episodes: rows.len(),
        cells,
    })
}
