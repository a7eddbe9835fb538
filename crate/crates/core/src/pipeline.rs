//! End-to-end stages shared by the command-line front end.
//!
//! Every stage is a pure function of its inputs; parallel loops go through
//! [`par`] and results are assembled in key order, so outputs are
//! reproducible byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diffusion::{Conditioning, DiffusionModel};
use crate::embedding::{Encoder, StatisticalEncoder};
use crate::error::{Error, Result};
use crate::events::{segment, EventParams, Segmentation};
use crate::features::{extract_by_key, feature_table, FeatureCatalog, FeatureTable};
use crate::gaze::{
    load_recordings, position_to_velocity, read_ratings, read_targets, velocity_to_position, GazeWindow, LoadReport,
    RecordKey, SubjectiveReport, Task, TargetRow,
};
use crate::metrics::{fixation_positions, rms_precision, similarity_report, spatial_accuracy, Target, TaskQuality};
use crate::par;
use crate::stats::{build_matrices, CorrelationMatrix, SessionPooling, ALPHA};
use crate::util::{derive_seed, median};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const RATINGS_FILE: &str = "ratings.csv";
pub const TARGETS_FILE: &str = "targets.csv";

/// A loaded corpus directory.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub windows: Vec<GazeWindow>,
    pub reports: Vec<SubjectiveReport>,
    /// Stimulus targets per record, sorted by onset.
    pub targets: BTreeMap<RecordKey, Vec<Target>>,
    pub load: LoadReport,
}

impl Corpus {
    pub fn filter_task(&mut self, task: Task) {
        self.windows.retain(|w| w.key().record.task == task);
        self.reports.retain(|r| r.key.task == task);
        self.targets.retain(|k, _| k.task == task);
    }
}

/// Loads `manifest.csv` and the recordings it lists; `ratings.csv` and
/// `targets.csv` are optional.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::Config(format!("{} not found", manifest.display())));
    }
    let outcome = load_recordings(dir, &manifest)?;
    let ratings = dir.join(RATINGS_FILE);
    let reports = if ratings.is_file() {
        read_ratings(&ratings)?
    } else {
        Vec::new()
    };
    let targets_path = dir.join(TARGETS_FILE);
    let targets = if targets_path.is_file() {
        let files: BTreeMap<PathBuf, RecordKey> = crate::gaze::read_manifest(&manifest)?
            .into_iter()
            .map(|e| (e.file, e.key))
            .collect();
        group_targets(&files, read_targets(&targets_path)?)?
    } else {
        BTreeMap::new()
    };
    Ok(Corpus {
        windows: outcome.windows,
        reports,
        targets,
        load: outcome.report,
    })
}

fn group_targets(files: &BTreeMap<PathBuf, RecordKey>, rows: Vec<TargetRow>) -> Result<BTreeMap<RecordKey, Vec<Target>>> {
    let mut out: BTreeMap<RecordKey, Vec<Target>> = BTreeMap::new();
    for row in rows {
        let key = files
            .get(&row.file)
            .ok_or_else(|| Error::Integrity(format!("target row for unknown file {}", row.file.display())))?;
        out.entry(*key).or_default().push(Target {
            onset_ms: row.onset_ms,
            x: row.x,
            y: row.y,
        });
    }
    for ts in out.values_mut() {
        ts.sort_by(|a, b| a.onset_ms.total_cmp(&b.onset_ms));
    }
    Ok(out)
}

pub fn segment_windows(windows: &[GazeWindow], params: &EventParams) -> Vec<Segmentation> {
    par::map(windows, |w| segment(w, params))
}

/// Segments every window and extracts one feature vector per record.
pub fn features_for(catalog: &FeatureCatalog, windows: &[GazeWindow], params: &EventParams) -> Result<FeatureTable> {
    let segs = segment_windows(windows, params);
    feature_table(catalog, extract_by_key(catalog, &segs)?)
}

/// Samples one synthetic window per input window, conditioned on that
/// window's identity-removed velocity and embedding. The synthetic position
/// trace starts at the real window's first sample and keeps its timestamps.
pub fn synthesize(model: &DiffusionModel, windows: &[GazeWindow], seed: u64) -> Result<Vec<GazeWindow>> {
    let encoder = StatisticalEncoder;
    par::map(windows, |w| -> Result<GazeWindow> {
        let k = w.key();
        let cond = Conditioning::from_velocity(&position_to_velocity(w), &encoder);
        let s = derive_seed(
            seed,
            &[
                k.record.subject_id.into(),
                k.record.session.into(),
                k.record.round.into(),
                k.record.task as u64,
                k.window_index.into(),
            ],
        );
        let v = model.synthesize(&cond, s)?;
        let first = w.samples()[0];
        let p = velocity_to_position(&v, (first.x, first.y));
        GazeWindow::from_positions(*k, w.start_ms(), &p)
    })
    .into_iter()
    .collect()
}

pub fn correlate(table: &FeatureTable, reports: &[SubjectiveReport], sessions: SessionPooling) -> Result<Vec<CorrelationMatrix>> {
    build_matrices(table, reports, sessions)
}

/// Per-task quality of `windows`: spatial accuracy against `targets`, RMS
/// precision over detected fixations and, when `paired` is given, cosine
/// similarity against those windows.
pub fn quality_report(
    windows: &[GazeWindow],
    targets: &BTreeMap<RecordKey, Vec<Target>>,
    paired: Option<&[GazeWindow]>,
    params: &EventParams,
) -> Result<BTreeMap<Task, TaskQuality>> {
    let encoder: &dyn Encoder = &StatisticalEncoder;
    let similarity = match paired {
        Some(real) => similarity_report(real, windows, encoder)?,
        None => BTreeMap::new(),
    };
    let per_window = par::map(windows, |w| {
        let acc = targets
            .get(&w.key().record)
            .and_then(|t| spatial_accuracy(w, t));
        let seg = segment(w, params);
        let fix = fixation_positions(w, &seg);
        let n = fix.iter().filter(|f| f.len() >= 2).map(|f| f.len()).sum::<usize>();
        (acc, rms_precision(&fix).map(|r| (r, n)))
    });
    let mut tasks: BTreeMap<Task, (Vec<f64>, f64, usize)> = BTreeMap::new();
    for (w, (acc, prec)) in windows.iter().zip(per_window) {
        let e = tasks.entry(w.key().record.task).or_default();
        if let Some(a) = acc {
            e.0.push(a);
        }
        if let Some((r, n)) = prec {
            e.1 += r * n as f64;
            e.2 += n;
        }
    }
    Ok(tasks
        .into_iter()
        .map(|(task, (acc, prec, n))| {
            let sim = similarity.get(&task);
            (
                task,
                TaskQuality {
                    accuracy_deg: (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64),
                    rms_precision_deg: (n > 0).then(|| prec / n as f64),
                    cosine_mean: sim.map(|s| s.cosine_mean),
                    cosine_per_subject: sim.map(|s| s.cosine_per_subject.clone()).unwrap_or_default(),
                },
            )
        })
        .collect())
}

/// Summary of one matrix used in the real/synthetic comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixSummary {
    pub observations: usize,
    pub computed_cells: usize,
    pub significant_cells: usize,
    pub median_abs_rho: Option<f64>,
}

impl MatrixSummary {
    pub fn of(m: &CorrelationMatrix) -> Self {
        let rhos: Vec<f64> = m
            .cells
            .iter()
            .flatten()
            .filter(|c| !c.is_masked())
            .map(|c| c.rho.abs())
            .collect();
        Self {
            observations: m.observations,
            computed_cells: rhos.len(),
            significant_cells: m.cells.iter().flatten().filter(|c| c.significant).count(),
            median_abs_rho: median(&rhos),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopeComparison {
    pub task: Task,
    pub pooling: String,
    pub real: MatrixSummary,
    pub synthetic: MatrixSummary,
    /// Cells significant on the real path but not on the synthetic one.
    pub attenuated: Vec<String>,
    /// Cells significant on both paths.
    pub retained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditComparison {
    pub alpha: f64,
    pub correction: &'static str,
    pub scopes: Vec<ScopeComparison>,
}

#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub real: Vec<CorrelationMatrix>,
    pub synthetic: Vec<CorrelationMatrix>,
    pub comparison: AuditComparison,
}

/// Correlates real and synthetic windows against the same reports and
/// compares the two matrix sets scope by scope.
pub fn audit(
    catalog: &FeatureCatalog,
    real: &[GazeWindow],
    synthetic: &[GazeWindow],
    reports: &[SubjectiveReport],
    params: &EventParams,
    sessions: SessionPooling,
) -> Result<AuditOutcome> {
    let matrices = |ws: &[GazeWindow]| -> Result<Vec<CorrelationMatrix>> {
        let table = if ws.is_empty() {
            feature_table(catalog, Vec::new())?
        } else {
            features_for(catalog, ws, params)?
        };
        correlate(&table, reports, sessions)
    };
    let real_m = matrices(real)?;
    let synth_m = matrices(synthetic)?;
    let scopes = real_m
        .iter()
        .zip(&synth_m)
        .map(|(r, s)| {
            let sig = |m: &CorrelationMatrix| -> Vec<String> {
                m.significant_cells().map(|(f, rating, _)| format!("{f}/{}", rating.as_str())).collect()
            };
            let s_sig = sig(s);
            let (retained, attenuated) = sig(r).into_iter().partition(|c| s_sig.contains(c));
            ScopeComparison {
                task: r.task,
                pooling: r.pooling.to_string(),
                real: MatrixSummary::of(r),
                synthetic: MatrixSummary::of(s),
                attenuated,
                retained,
            }
        })
        .collect();
    Ok(AuditOutcome {
        real: real_m,
        synthetic: synth_m,
        comparison: AuditComparison {
            alpha: ALPHA,
            correction: "none",
            scopes,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{corpus_files, simulate_cohort, write_corpus, CohortConfig, SimConfig};
    use crate::stats::scopes;

    fn cohort(coupling: f64, stream: u64) -> CohortConfig {
        CohortConfig {
            subjects: 10,
            seed: 11,
            stream,
            rating_noise: 0.3,
            sim: SimConfig { coupling, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn corpus_round_trip() {
        let c = simulate_cohort(&CohortConfig { windows_per_record: 2, ..cohort(0.0, 0) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        let original: Vec<&GazeWindow> = c.windows().map(|w| &w.window).collect();
        assert_eq!(loaded.windows.len(), original.len());
        for (a, b) in loaded.windows.iter().zip(original) {
            assert_eq!(a.key(), b.key());
            for (s, t) in a.samples().iter().zip(b.samples()) {
                assert_eq!(s.t_ms, t.t_ms);
                assert!((s.x - t.x).abs() < 1e-12 && (s.y - t.y).abs() < 1e-12);
            }
        }
        assert_eq!(loaded.reports, c.reports());
        assert_eq!(loaded.targets.len(), c.records.len());
        assert_eq!(corpus_files(&c).unwrap(), corpus_files(&c).unwrap());
    }

    #[test]
    fn audit_shape_and_attenuation() {
        let catalog = FeatureCatalog::v1();
        let real = simulate_cohort(&cohort(1.0, 0)).unwrap();
        let synth = simulate_cohort(&cohort(0.0, 1)).unwrap();
        let rw: Vec<GazeWindow> = real.windows().map(|w| w.window.clone()).collect();
        let sw: Vec<GazeWindow> = synth.windows().map(|w| w.window.clone()).collect();
        let out = audit(&catalog, &rw, &sw, &real.reports(), &EventParams::default(), SessionPooling::Separate).unwrap();
        assert_eq!(out.real.len(), scopes().len());
        assert_eq!(out.comparison.scopes.len(), 12);
        let real_sig: usize = out.comparison.scopes.iter().map(|s| s.real.significant_cells).sum();
        assert!(real_sig > 0);
        let rate = out.real.iter().find(|m| m.task == Task::Ran && m.pooling.to_string() == "all-rounds").unwrap();
        let cell = rate.cell("Sac_Rate", crate::gaze::Rating::OverDiff).unwrap();
        assert!(cell.rho > 0.5 && cell.significant, "{cell:?}");
    }

    #[test]
    fn quality_of_simulated_windows() {
        let c = simulate_cohort(&cohort(0.0, 0)).unwrap();
        let ws: Vec<GazeWindow> = c.windows().map(|w| w.window.clone()).collect();
        let targets = c
            .records
            .iter()
            .map(|r| (r.key, r.windows.iter().flat_map(|w| w.targets.clone()).collect()))
            .collect();
        let q = quality_report(&ws, &targets, Some(&ws), &EventParams::default()).unwrap();
        assert_eq!(q.len(), 3);
        for tq in q.values() {
            assert!((tq.cosine_mean.unwrap() - 1.0).abs() < 1e-12);
            let p = tq.rms_precision_deg.unwrap();
            assert!(p > 0.0 && p < 0.05, "{p}");
            assert!(tq.accuracy_deg.unwrap() < 2.0);
        }
    }
}
