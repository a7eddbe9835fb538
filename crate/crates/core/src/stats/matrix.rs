use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::spearman::{spearman, CorrelationCell, MaskReason, ALPHA};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::gaze::{read_table, Rating, RecordKey, SubjectiveReport, Task};
use crate::par;

/// Rounds reported individually.
pub const REPORTED_ROUNDS: [u32; 3] = [2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pooling {
    AllRounds,
    Round(u32),
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pooling::AllRounds => f.write_str("all-rounds"),
            Pooling::Round(r) => write!(f, "round-{r}"),
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all-rounds" {
            return Ok(Pooling::AllRounds);
        }
        s.strip_prefix("round-")
            .and_then(|r| r.parse().ok())
            .map(Pooling::Round)
            .ok_or_else(|| Error::Config(format!("unknown pooling {s:?}")))
    }
}

impl Serialize for Pooling {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Pooling {
    fn includes(self, round: u32) -> bool {
        match self {
            Pooling::AllRounds => true,
            Pooling::Round(r) => r == round,
        }
    }
}

/// How repeated sessions of the same (subject, round, task) enter a scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionPooling {
    /// Every session is its own observation.
    #[default]
    Separate,
    /// Sessions are averaged into one observation.
    Mean,
}

impl FromStr for SessionPooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(SessionPooling::Separate),
            "mean" => Ok(SessionPooling::Mean),
            other => Err(Error::Config(format!("unknown session pooling {other:?}"))),
        }
    }
}

/// The twelve reported scopes in output order.
pub fn scopes() -> Vec<(Task, Pooling)> {
    let mut out = Vec::new();
    for task in Task::ALL {
        out.push((task, Pooling::AllRounds));
        out.extend(REPORTED_ROUNDS.map(|r| (task, Pooling::Round(r))));
    }
    out
}

/// Feature rows × rating columns for one scope.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub task: Task,
    pub pooling: Pooling,
    pub features: Vec<String>,
    /// One row per feature, columns in [`Rating::ALL`] order.
    pub cells: Vec<[CorrelationCell; 3]>,
    /// Joined observations in the scope.
    pub observations: usize,
}

impl CorrelationMatrix {
    pub fn cell(&self, feature: &str, rating: Rating) -> Option<&CorrelationCell> {
        let i = self.features.iter().position(|f| f == feature)?;
        Some(&self.cells[i][rating as usize])
    }

    pub fn significant_cells(&self) -> impl Iterator<Item = (&str, Rating, &CorrelationCell)> {
        self.features.iter().zip(&self.cells).flat_map(|(f, row)| {
            Rating::ALL
                .into_iter()
                .zip(row.iter())
                .filter(|(_, c)| c.significant)
                .map(move |(r, c)| (f.as_str(), r, c))
        })
    }
}

struct Observation {
    features: Vec<f64>,
    ratings: [f64; 3],
}

fn observations(
    table: &FeatureTable,
    reports: &BTreeMap<RecordKey, SubjectiveReport>,
    task: Task,
    pooling: Pooling,
    sessions: SessionPooling,
) -> Vec<Observation> {
    let joined = table
        .rows
        .iter()
        .filter(|r| r.key.task == task && pooling.includes(r.key.round))
        .filter_map(|r| reports.get(&r.key).map(|rep| (r, rep)));
    let single = |r: &crate::features::FeatureVector, rep: &SubjectiveReport| Observation {
        features: r
            .values
            .iter()
            .zip(&r.missing)
            .map(|(v, m)| if *m { f64::NAN } else { *v })
            .collect(),
        ratings: Rating::ALL.map(|k| f64::from(rep.get(k))),
    };
    match sessions {
        SessionPooling::Separate => joined.map(|(r, rep)| single(r, rep)).collect(),
        SessionPooling::Mean => {
            let mut groups: BTreeMap<(u32, u32), Vec<Observation>> = BTreeMap::new();
            for (r, rep) in joined {
                groups
                    .entry((r.key.subject_id, r.key.round))
                    .or_default()
                    .push(single(r, rep));
            }
            groups
                .into_values()
                .map(|g| {
                    let nf = g[0].features.len();
                    let features = (0..nf)
                        .map(|i| {
                            let present: Vec<f64> =
                                g.iter().map(|o| o.features[i]).filter(|v| v.is_finite()).collect();
                            if present.is_empty() {
                                f64::NAN
                            } else {
                                present.iter().sum::<f64>() / present.len() as f64
                            }
                        })
                        .collect();
                    let ratings = [0, 1, 2]
                        .map(|k| g.iter().map(|o| o.ratings[k]).sum::<f64>() / g.len() as f64);
                    Observation { features, ratings }
                })
                .collect()
        }
    }
}

fn index_reports(reports: &[SubjectiveReport]) -> Result<BTreeMap<RecordKey, SubjectiveReport>> {
    let mut map = BTreeMap::new();
    for r in reports {
        if map.insert(r.key, *r).is_some() {
            return Err(Error::Integrity(format!("duplicate report for {}", r.key)));
        }
    }
    Ok(map)
}

fn matrix_for(
    table: &FeatureTable,
    reports: &BTreeMap<RecordKey, SubjectiveReport>,
    task: Task,
    pooling: Pooling,
    sessions: SessionPooling,
) -> CorrelationMatrix {
    let obs = observations(table, reports, task, pooling, sessions);
    if obs.is_empty() {
        log::warn!("scope {task}/{pooling}: no joined rows, matrix fully masked");
    }
    let features: Vec<String> = table.catalog.names().map(str::to_string).collect();
    let idx: Vec<usize> = (0..features.len()).collect();
    let ratings: [Vec<f64>; 3] = [0, 1, 2].map(|k| obs.iter().map(|o| o.ratings[k]).collect());
    let cells = par::map(&idx, |&i| {
        let x: Vec<f64> = obs.iter().map(|o| o.features[i]).collect();
        [0, 1, 2].map(|k| spearman(&x, &ratings[k]))
    });
    CorrelationMatrix {
        task,
        pooling,
        features,
        cells,
        observations: obs.len(),
    }
}

/// One matrix for a single scope.
pub fn build_matrix(
    table: &FeatureTable,
    reports: &[SubjectiveReport],
    task: Task,
    pooling: Pooling,
    sessions: SessionPooling,
) -> Result<CorrelationMatrix> {
    Ok(matrix_for(table, &index_reports(reports)?, task, pooling, sessions))
}

/// All [`scopes`], joined on (subject, session, round, task) with pairwise
/// deletion of missing feature values.
pub fn build_matrices(
    table: &FeatureTable,
    reports: &[SubjectiveReport],
    sessions: SessionPooling,
) -> Result<Vec<CorrelationMatrix>> {
    let index = index_reports(reports)?;
    Ok(scopes()
        .into_iter()
        .map(|(task, pooling)| matrix_for(table, &index, task, pooling, sessions))
        .collect())
}

fn fmt_opt(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// `task,pooling,feature,rating,rho,p,n,significant`; masked cells leave rho
/// and p empty.
pub fn write_matrices_csv<W: Write>(mut out: W, matrices: &[CorrelationMatrix]) -> Result<()> {
    let io = |e| Error::io("correlation CSV", e);
    writeln!(out, "task,pooling,feature,rating,rho,p,n,significant").map_err(io)?;
    for m in matrices {
        for (f, row) in m.features.iter().zip(&m.cells) {
            for (rating, c) in Rating::ALL.iter().zip(row) {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    m.task,
                    m.pooling,
                    f,
                    rating,
                    fmt_opt(c.rho),
                    fmt_opt(c.p),
                    c.n,
                    u8::from(c.significant)
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Reads matrices written by [`write_matrices_csv`], preserving row order.
pub fn read_matrices_csv(path: &Path) -> Result<Vec<CorrelationMatrix>> {
    let cols = ["task", "pooling", "feature", "rating", "rho", "p", "n", "significant"];
    let table = read_table(path, &cols)?;
    let mut out: Vec<CorrelationMatrix> = Vec::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let bad = |message: String| Error::Parse {
            file: table.path.clone(),
            line,
            message,
        };
        let task: Task = table.parse(line, rec, 0, "task")?;
        let pooling: Pooling = table.field(rec, 1).parse().map_err(|e: Error| bad(e.to_string()))?;
        let feature = table.field(rec, 2).to_string();
        let rating = Rating::ALL
            .into_iter()
            .find(|r| r.as_str() == table.field(rec, 3))
            .ok_or_else(|| bad(format!("unknown rating {:?}", table.field(rec, 3))))?;
        let n: usize = table.parse(line, rec, 6, "n")?;
        let significant = match table.field(rec, 7) {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("column significant: expected 0 or 1, got {other:?}"))),
        };
        let cell = if table.field(rec, 4).is_empty() {
            let reason = if n < super::spearman::MIN_PAIRS {
                MaskReason::InsufficientData
            } else {
                MaskReason::ZeroVariance
            };
            CorrelationCell::masked(n, reason)
        } else {
            let rho: f64 = table.parse(line, rec, 4, "rho")?;
            let p: f64 = table.parse(line, rec, 5, "p")?;
            CorrelationCell {
                rho,
                p,
                n,
                significant,
                mask: None,
            }
        };

        let m = match out.last_mut() {
            Some(m) if m.task == task && m.pooling == pooling => m,
            _ => {
                out.push(CorrelationMatrix {
                    task,
                    pooling,
                    features: Vec::new(),
                    cells: Vec::new(),
                    observations: 0,
                });
                out.last_mut().expect("just pushed")
            }
        };
        if m.features.last() != Some(&feature) {
            m.features.push(feature);
            m.cells.push([CorrelationCell::masked(0, MaskReason::InsufficientData); 3]);
        }
        m.cells.last_mut().expect("row exists")[rating as usize] = cell;
    }
    for m in &mut out {
        m.observations = m.cells.iter().flatten().map(|c| c.n).max().unwrap_or(0);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SignificantCell<'a> {
    feature: &'a str,
    rating: &'static str,
    rho: f64,
    p: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct ScopeSummary<'a> {
    task: &'static str,
    pooling: String,
    observations: usize,
    masked_cells: usize,
    significant: Vec<SignificantCell<'a>>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    alpha: f64,
    correction: &'static str,
    missing_values: &'static str,
    scopes: Vec<ScopeSummary<'a>>,
}

/// JSON listing the significant cells of every scope.
pub fn summary_json(matrices: &[CorrelationMatrix]) -> Result<String> {
    let scopes = matrices
        .iter()
        .map(|m| ScopeSummary {
            task: m.task.as_str(),
            pooling: m.pooling.to_string(),
            observations: m.observations,
            masked_cells: m.cells.iter().flatten().filter(|c| c.is_masked()).count(),
            significant: m
                .significant_cells()
                .map(|(f, r, c)| SignificantCell {
                    feature: f,
                    rating: r.as_str(),
                    rho: c.rho,
                    p: c.p,
                    n: c.n,
                })
                .collect(),
        })
        .collect();
    let s = Summary {
        alpha: ALPHA,
        correction: "none",
        missing_values: "pairwise deletion",
        scopes,
    };
    Ok(serde_json::to_string_pretty(&s)?)
}
