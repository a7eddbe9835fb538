//! CSV ingestion and emission for recordings, manifests, ratings and targets.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim};
use serde::Serialize;

use super::{
    interpolate_invalid, GazeSample, GazeWindow, RecordKey, SubjectiveReport, Task, WindowKey,
    MAX_INVALID_FRACTION, WINDOW_LEN,
};
use crate::error::{Error, Result};
use crate::par;

const GAZE_HEADER: [&str; 4] = ["t_ms", "x_deg", "y_deg", "valid"];
const MANIFEST_HEADER: [&str; 5] = ["file", "subject_id", "session", "round", "task"];
const RATINGS_HEADER: [&str; 7] = [
    "subject_id",
    "session",
    "round",
    "task",
    "over_diff",
    "mentally",
    "tired_eyes",
];
const TARGETS_HEADER: [&str; 4] = ["file", "onset_ms", "x_deg", "y_deg"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ManifestEntry {
    /// Path relative to the corpus directory.
    pub file: PathBuf,
    pub key: RecordKey,
}

/// One stimulus target onset inside a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub file: PathBuf,
    pub onset_ms: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub files: usize,
    pub windows: usize,
    /// Candidate windows dropped for exceeding the invalid-sample fraction.
    pub dropped_invalid: usize,
    /// Candidate windows rejected because an invalid run was too long.
    pub rejected_gaps: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub windows: Vec<GazeWindow>,
    pub report: LoadReport,
}

pub(crate) struct CsvTable {
    pub(crate) path: PathBuf,
    columns: Vec<usize>,
    pub(crate) rows: Vec<(u64, StringRecord)>,
}

impl CsvTable {
    pub(crate) fn field<'a>(&self, rec: &'a StringRecord, col: usize) -> &'a str {
        rec.get(self.columns[col]).unwrap_or("")
    }

    pub(crate) fn parse<T: std::str::FromStr>(&self, line: u64, rec: &StringRecord, col: usize, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.field(rec, col);
        raw.parse().map_err(|e| Error::Parse {
            file: self.path.clone(),
            line,
            message: format!("column {name}: cannot parse {raw:?}: {e}"),
        })
    }
}

pub(crate) fn read_table(path: &Path, required: &[&str]) -> Result<CsvTable> {
    let mut reader = ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut columns = Vec::with_capacity(required.len());
    let mut missing = Vec::new();
    for name in required {
        match headers.iter().position(|h| h == *name) {
            Some(i) => columns.push(i),
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema {
            file: path.to_path_buf(),
            message: format!("missing columns: {}", missing.join(", ")),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok(CsvTable {
        path: path.to_path_buf(),
        columns,
        rows,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(format!("reading {}", path.display()), source),
        kind => Error::Parse {
            file: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_optional_f64(raw: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    if raw.is_empty() {
        Ok(f64::NAN)
    } else {
        raw.parse()
    }
}

/// Reads one gaze recording (`t_ms,x_deg,y_deg,valid`).
pub fn read_recording(path: &Path) -> Result<Vec<GazeSample>> {
    let table = read_table(path, &GAZE_HEADER)?;
    let mut samples = Vec::with_capacity(table.rows.len());
    let mut prev_t = f64::NEG_INFINITY;
    for (line, rec) in &table.rows {
        let line = *line;
        let t_ms: f64 = table.parse(line, rec, 0, "t_ms")?;
        let bad = |message: String| Error::Parse {
            file: path.to_path_buf(),
            line,
            message,
        };
        let x = parse_optional_f64(table.field(rec, 1))
            .map_err(|e| bad(format!("column x_deg: {e}")))?;
        let y = parse_optional_f64(table.field(rec, 2))
            .map_err(|e| bad(format!("column y_deg: {e}")))?;
        let valid = match table.field(rec, 3) {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("column valid: expected 0 or 1, got {other:?}"))),
        };
        if !t_ms.is_finite() || t_ms <= prev_t {
            return Err(bad(format!("timestamp {t_ms} is not strictly increasing")));
        }
        if valid && !(x.is_finite() && y.is_finite()) {
            return Err(bad("valid sample with non-finite position".into()));
        }
        prev_t = t_ms;
        samples.push(GazeSample { t_ms, x, y, valid });
    }
    Ok(samples)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let table = read_table(path, &MANIFEST_HEADER)?;
    let mut entries = Vec::with_capacity(table.rows.len());
    let mut seen = BTreeSet::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let task: Task = table.field(rec, 4).parse().map_err(|e: Error| Error::Parse {
            file: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let key = RecordKey {
            subject_id: table.parse(line, rec, 1, "subject_id")?,
            session: table.parse(line, rec, 2, "session")?,
            round: table.parse(line, rec, 3, "round")?,
            task,
        };
        if !seen.insert(key) {
            return Err(Error::Integrity(format!(
                "{}:{line}: recording {key} listed twice",
                path.display()
            )));
        }
        entries.push(ManifestEntry {
            file: PathBuf::from(table.field(rec, 0)),
            key,
        });
    }
    Ok(entries)
}

pub fn read_ratings(path: &Path) -> Result<Vec<SubjectiveReport>> {
    let table = read_table(path, &RATINGS_HEADER)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let as_parse = |e: Error| Error::Parse {
            file: path.to_path_buf(),
            line,
            message: e.to_string(),
        };
        let key = RecordKey {
            subject_id: table.parse(line, rec, 0, "subject_id")?,
            session: table.parse(line, rec, 1, "session")?,
            round: table.parse(line, rec, 2, "round")?,
            task: table.field(rec, 3).parse().map_err(as_parse)?,
        };
        let report = SubjectiveReport::new(
            key,
            table.parse(line, rec, 4, "over_diff")?,
            table.parse(line, rec, 5, "mentally")?,
            table.parse(line, rec, 6, "tired_eyes")?,
        )
        .map_err(as_parse)?;
        out.push(report);
    }
    Ok(out)
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetRow>> {
    let table = read_table(path, &TARGETS_HEADER)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        out.push(TargetRow {
            file: PathBuf::from(table.field(rec, 0)),
            onset_ms: table.parse(line, rec, 1, "onset_ms")?,
            x: table.parse(line, rec, 2, "x_deg")?,
            y: table.parse(line, rec, 3, "y_deg")?,
        });
    }
    Ok(out)
}

fn write_err(e: std::io::Error) -> Error {
    Error::io("writing CSV", e)
}

pub fn write_recording<W: Write>(mut out: W, samples: &[GazeSample]) -> Result<()> {
    writeln!(out, "{}", GAZE_HEADER.join(",")).map_err(write_err)?;
    for s in samples {
        if s.valid {
            writeln!(out, "{},{},{},1", s.t_ms, s.x, s.y).map_err(write_err)?;
        } else {
            writeln!(out, "{},,,0", s.t_ms).map_err(write_err)?;
        }
    }
    Ok(())
}

pub fn write_manifest<W: Write>(mut out: W, entries: &[ManifestEntry]) -> Result<()> {
    writeln!(out, "{}", MANIFEST_HEADER.join(",")).map_err(write_err)?;
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.file.display(),
            e.key.subject_id,
            e.key.session,
            e.key.round,
            e.key.task
        )
        .map_err(write_err)?;
    }
    Ok(())
}

pub fn write_ratings<W: Write>(mut out: W, reports: &[SubjectiveReport]) -> Result<()> {
    writeln!(out, "{}", RATINGS_HEADER.join(",")).map_err(write_err)?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.key.subject_id, r.key.session, r.key.round, r.key.task, r.over_diff, r.mentally, r.tired_eyes
        )
        .map_err(write_err)?;
    }
    Ok(())
}

pub fn write_targets<W: Write>(mut out: W, rows: &[TargetRow]) -> Result<()> {
    writeln!(out, "{}", TARGETS_HEADER.join(",")).map_err(write_err)?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.file.display(), r.onset_ms, r.x, r.y).map_err(write_err)?;
    }
    Ok(())
}

/// Relative path of a record's gaze file inside a corpus directory.
pub fn recording_path(key: &RecordKey) -> PathBuf {
    PathBuf::from("gaze").join(format!(
        "S{:03}_s{}_r{}_{}.csv",
        key.subject_id, key.session, key.round, key.task
    ))
}

/// Serializes windows as one gaze CSV per record (windows concatenated in key
/// order, timestamps kept) and the matching manifest entries.
///
/// Windows of a record must have increasing, non-overlapping timestamps.
/// A record whose windows leave a gap between them reloads with renumbered
/// window indices.
pub fn recording_files(windows: &[GazeWindow]) -> Result<(Vec<(PathBuf, Vec<u8>)>, Vec<ManifestEntry>)> {
    let mut sorted: Vec<&GazeWindow> = windows.iter().collect();
    sorted.sort_by_key(|w| *w.key());
    let mut files = Vec::new();
    let mut manifest = Vec::new();
    for group in sorted.chunk_by(|a, b| a.key().record == b.key().record) {
        let key = group[0].key().record;
        for pair in group.windows(2) {
            let prev_end = pair[0].samples()[WINDOW_LEN - 1].t_ms;
            if pair[1].start_ms() <= prev_end {
                return Err(Error::Integrity(format!(
                    "windows {} and {} overlap in time",
                    pair[0].key(),
                    pair[1].key()
                )));
            }
        }
        let samples: Vec<GazeSample> = group.iter().flat_map(|w| w.samples().iter().copied()).collect();
        let mut buf = Vec::new();
        write_recording(&mut buf, &samples)?;
        let file = recording_path(&key);
        files.push((file.clone(), buf));
        manifest.push(ManifestEntry { file, key });
    }
    Ok((files, manifest))
}

/// Cuts one recording into non-overlapping, left-aligned windows.
///
/// Windows never straddle a timestamp discontinuity. Candidate windows are
/// numbered in recording order, including those that end up dropped.
pub fn window_recording(key: RecordKey, samples: &[GazeSample]) -> (Vec<GazeWindow>, LoadReport) {
    let mut report = LoadReport::default();
    let mut windows = Vec::new();
    let mut index = 0u32;
    let mut seg_start = 0;
    while seg_start < samples.len() {
        let mut seg_end = seg_start + 1;
        while seg_end < samples.len()
            && (samples[seg_end].t_ms - samples[seg_end - 1].t_ms - 1.0).abs() <= 1e-6
        {
            seg_end += 1;
        }
        let mut start = seg_start;
        while start + WINDOW_LEN <= seg_end {
            let chunk = &samples[start..start + WINDOW_LEN];
            let wkey = WindowKey {
                record: key,
                window_index: index,
            };
            index += 1;
            start += WINDOW_LEN;
            let invalid = chunk.iter().filter(|s| !s.valid).count();
            if invalid as f64 > MAX_INVALID_FRACTION * WINDOW_LEN as f64 {
                report.dropped_invalid += 1;
                continue;
            }
            let raw = GazeWindow::new(wkey, chunk.to_vec())
                .expect("contiguous 1 ms chunk of WINDOW_LEN samples");
            match interpolate_invalid(&raw) {
                Ok(w) => windows.push(w),
                Err(_) => report.rejected_gaps += 1,
            }
        }
        seg_start = seg_end;
    }
    report.windows = windows.len();
    (windows, report)
}

/// Loads every recording listed in `manifest` (paths relative to `dir`).
///
/// Output is sorted by window key, so the same directory always yields the
/// same window sequence.
pub fn load_recordings(dir: &Path, manifest: &Path) -> Result<LoadOutcome> {
    let entries = read_manifest(manifest)?;
    let per_file = par::map(&entries, |e| -> Result<(Vec<GazeWindow>, LoadReport)> {
        let samples = read_recording(&dir.join(&e.file))?;
        Ok(window_recording(e.key, &samples))
    });
    let mut outcome = LoadOutcome::default();
    for result in per_file {
        let (windows, report) = result?;
        outcome.report.files += 1;
        outcome.report.dropped_invalid += report.dropped_invalid;
        outcome.report.rejected_gaps += report.rejected_gaps;
        outcome.windows.extend(windows);
    }
    outcome.windows.sort_by_key(|w| *w.key());
    outcome.report.windows = outcome.windows.len();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn key() -> RecordKey {
        RecordKey {
            subject_id: 7,
            session: 1,
            round: 2,
            task: Task::Tex,
        }
    }

    fn recording(n: usize) -> Vec<GazeSample> {
        (0..n)
            .map(|i| GazeSample {
                t_ms: 100.0 + i as f64,
                x: (i as f64 * 0.001).sin(),
                y: 0.5,
                valid: true,
            })
            .collect()
    }

    fn write_corpus(dir: &Path, samples: &[GazeSample]) -> PathBuf {
        let mut buf = Vec::new();
        write_recording(&mut buf, samples).unwrap();
        fs::write(dir.join("rec.csv"), buf).unwrap();
        let manifest = dir.join("manifest.csv");
        let mut buf = Vec::new();
        write_manifest(
            &mut buf,
            &[ManifestEntry {
                file: "rec.csv".into(),
                key: key(),
            }],
        )
        .unwrap();
        fs::write(&manifest, buf).unwrap();
        manifest
    }

    #[test]
    fn empty_manifest_yields_no_windows() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.csv");
        fs::write(&manifest, "file,subject_id,session,round,task\n").unwrap();
        let out = load_recordings(dir.path(), &manifest).unwrap();
        assert!(out.windows.is_empty());
        assert_eq!(out.report, LoadReport::default());
    }

    #[test]
    fn ten_second_recording_gives_two_windows() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &recording(10_000));
        let out = load_recordings(dir.path(), &manifest).unwrap();
        assert_eq!(out.windows.len(), 2);
        assert_eq!(out.windows[1].key().window_index, 1);
        assert_eq!(out.windows[1].start_ms(), 5100.0);
    }

    /// Independent window scan: left-aligned 5000-sample chunks, drop on
    /// >10 % invalid, reject on any invalid run above 75 samples.
    fn reference_count(valid: &[bool]) -> usize {
        valid
            .chunks_exact(5000)
            .filter(|c| {
                let invalid = c.iter().filter(|v| !**v).count();
                let mut longest = 0;
                let mut run = 0;
                for v in c.iter() {
                    run = if *v { 0 } else { run + 1 };
                    longest = longest.max(run);
                }
                invalid <= 500 && longest <= 75
            })
            .count()
    }

    #[test]
    fn invalid_run_at_five_seconds_matches_reference_scan() {
        let mut samples = recording(10_000);
        for s in &mut samples[4500..5500] {
            s.valid = false;
        }
        let valid: Vec<bool> = samples.iter().map(|s| s.valid).collect();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &samples);
        let out = load_recordings(dir.path(), &manifest).unwrap();
        assert_eq!(out.windows.len(), reference_count(&valid));
        assert_eq!(out.report.rejected_gaps + out.report.dropped_invalid, 2);
    }

    #[test]
    fn scattered_short_gaps_are_interpolated() {
        let mut samples = recording(10_000);
        for start in (200..9800).step_by(400) {
            for s in &mut samples[start..start + 30] {
                s.valid = false;
            }
        }
        let valid: Vec<bool> = samples.iter().map(|s| s.valid).collect();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &samples);
        let out = load_recordings(dir.path(), &manifest).unwrap();
        assert_eq!(out.windows.len(), reference_count(&valid));
        assert_eq!(out.windows.len(), 2);
    }

    #[test]
    fn timestamp_discontinuity_splits_windows() {
        let mut samples = recording(12_000);
        for s in &mut samples[3000..] {
            s.t_ms += 50.0;
        }
        let (windows, _) = window_recording(key(), &samples);
        // 3000 + 9000 contiguous samples: only the second segment fits one.
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].start_ms(), 3150.0);
    }

    #[test]
    fn malformed_row_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "t_ms,x_deg,y_deg,valid\n0,1,2,1\n1,abc,2,1\n").unwrap();
        match read_recording(&path) {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, path);
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        fs::write(&path, "file,subject_id,session,task\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn ratings_round_trip_and_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.csv");
        let reports = vec![SubjectiveReport::new(key(), 2, 5, 7).unwrap()];
        let mut buf = Vec::new();
        write_ratings(&mut buf, &reports).unwrap();
        fs::write(&path, &buf).unwrap();
        assert_eq!(read_ratings(&path).unwrap(), reports);

        fs::write(
            &path,
            "subject_id,session,round,task,over_diff,mentally,tired_eyes\n1,1,1,HSS,9,1,1\n",
        )
        .unwrap();
        assert!(matches!(read_ratings(&path), Err(Error::Parse { line: 2, .. })));
    }
}
