//! Per-key feature vectors over the 58-entry catalog.

mod catalog;

pub use catalog::{Binding, FeatureCatalog, FeatureSpec, CATALOG_LEN};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::Segmentation;
use crate::gaze::{read_table, RecordKey, Task, DT};
use crate::par;
use crate::util::median;

/// Feature values in catalog order. Missing entries hold NaN and have
/// `missing[i] == true`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub key: RecordKey,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl FeatureVector {
    pub fn get(&self, i: usize) -> Option<f64> {
        (!self.missing[i]).then_some(self.values[i])
    }
}

/// Computes one feature vector from all segmentations of a key.
pub fn extract(catalog: &FeatureCatalog, segs: &[Segmentation]) -> Result<FeatureVector> {
    let first = segs
        .first()
        .ok_or_else(|| Error::Config("feature extraction needs at least one segmentation".into()))?;
    let key = first.key.record;
    if let Some(other) = segs.iter().find(|s| s.key.record != key) {
        return Err(Error::Integrity(format!(
            "segmentation {} does not belong to {key}",
            other.key
        )));
    }
    let seconds: f64 = segs.iter().map(|s| s.len as f64 * DT).sum();

    let mut values = Vec::with_capacity(catalog.len());
    let mut missing = Vec::with_capacity(catalog.len());
    for spec in catalog.entries() {
        let events = segs.iter().flat_map(|s| s.of_kind(spec.event));
        let value = match spec.binding {
            Binding::Rate => {
                let n = events.count();
                (seconds > 0.0).then(|| n as f64 / seconds)
            }
            Binding::Median(m, c) => {
                let xs: Vec<f64> = events.map(|e| e.measures.get(m, c)).collect();
                median(&xs)
            }
        };
        values.push(value.unwrap_or(f64::NAN));
        missing.push(value.is_none());
    }
    Ok(FeatureVector {
        key,
        values,
        missing,
    })
}

/// Groups segmentations by record key and extracts one vector per key, in
/// key order.
pub fn extract_by_key(catalog: &FeatureCatalog, segs: &[Segmentation]) -> Result<Vec<FeatureVector>> {
    let mut groups: BTreeMap<RecordKey, Vec<Segmentation>> = BTreeMap::new();
    for s in segs {
        groups.entry(s.key.record).or_default().push(s.clone());
    }
    let groups: Vec<Vec<Segmentation>> = groups.into_values().collect();
    par::map(&groups, |g| extract(catalog, g)).into_iter().collect()
}

/// Rectangular feature table, one row per key in canonical key order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub catalog: FeatureCatalog,
    pub rows: Vec<FeatureVector>,
}

impl FeatureTable {
    pub fn filter_task(&self, task: Task) -> FeatureTable {
        FeatureTable {
            catalog: self.catalog.clone(),
            rows: self.rows.iter().filter(|r| r.key.task == task).cloned().collect(),
        }
    }

    pub fn row(&self, key: &RecordKey) -> Option<&FeatureVector> {
        self.rows
            .binary_search_by(|r| r.key.cmp(key))
            .ok()
            .map(|i| &self.rows[i])
    }
}

/// Sorts vectors by key; a repeated key is an integrity error.
pub fn feature_table(catalog: &FeatureCatalog, mut rows: Vec<FeatureVector>) -> Result<FeatureTable> {
    if let Some(bad) = rows.iter().find(|r| r.values.len() != catalog.len() || r.missing.len() != catalog.len()) {
        return Err(Error::Shape(format!(
            "feature vector for {} has {} values, catalog has {}",
            bad.key,
            bad.values.len(),
            catalog.len()
        )));
    }
    rows.sort_by_key(|a| a.key);
    if let Some(w) = rows.windows(2).find(|w| w[0].key == w[1].key) {
        return Err(Error::Integrity(format!("duplicate feature row for {}", w[0].key)));
    }
    Ok(FeatureTable {
        catalog: catalog.clone(),
        rows,
    })
}

const KEY_COLUMNS: [&str; 4] = ["subject_id", "session", "round", "task"];

fn missing_column(name: &str) -> String {
    format!("missing_{name}")
}

/// Writes key columns, the catalog's feature columns, then one 0/1
/// `missing_<name>` column per feature. Missing values are empty fields.
pub fn write_feature_table<W: Write>(mut out: W, table: &FeatureTable) -> Result<()> {
    let io = |e| Error::io("feature table CSV", e);
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(table.catalog.names().map(str::to_string));
    header.extend(table.catalog.names().map(missing_column));
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for r in &table.rows {
        let k = &r.key;
        let mut line = format!("{},{},{},{}", k.subject_id, k.session, k.round, k.task);
        for (v, m) in r.values.iter().zip(&r.missing) {
            line.push(',');
            if !m {
                line.push_str(&v.to_string());
            }
        }
        for m in &r.missing {
            line.push_str(if *m { ",1" } else { ",0" });
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

pub fn read_feature_table(path: &Path, catalog: &FeatureCatalog) -> Result<FeatureTable> {
    let mut cols: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend(catalog.names().map(str::to_string));
    cols.extend(catalog.names().map(missing_column));
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let table = read_table(path, &refs)?;
    let n = catalog.len();
    let mut rows = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let key = RecordKey {
            subject_id: table.parse(line, rec, 0, "subject_id")?,
            session: table.parse(line, rec, 1, "session")?,
            round: table.parse(line, rec, 2, "round")?,
            task: table.parse(line, rec, 3, "task")?,
        };
        let mut values = Vec::with_capacity(n);
        let mut missing = Vec::with_capacity(n);
        for i in 0..n {
            let flag = match table.field(rec, 4 + n + i) {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        file: table.path.clone(),
                        line,
                        message: format!("column {}: expected 0 or 1, got {other:?}", cols[4 + n + i]),
                    })
                }
            };
            let v = if flag {
                f64::NAN
            } else {
                let v: f64 = table.parse(line, rec, 4 + i, &cols[4 + i])?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        file: table.path.clone(),
                        line,
                        message: format!("column {}: non-finite value", cols[4 + i]),
                    });
                }
                v
            };
            values.push(v);
            missing.push(flag);
        }
        rows.push(FeatureVector { key, values, missing });
    }
    feature_table(catalog, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{event_measures, Event, EventKind, Span};
    use crate::gaze::{integrate, Signal2, WindowKey};

    fn key(subject: u32, task: Task) -> RecordKey {
        RecordKey {
            subject_id: subject,
            session: 1,
            round: 2,
            task,
        }
    }

    /// Segmentation with one saccade per entry of `amplitudes` (constant
    /// 100 deg/s horizontal velocity), spaced 400 ms apart.
    fn seg_with_saccades(record: RecordKey, window: u32, amplitudes: &[f64]) -> Segmentation {
        let n = 5000;
        let mut vh = vec![0.0; n];
        let mut spans = Vec::new();
        for (i, a) in amplitudes.iter().enumerate() {
            let start = 100 + 400 * i;
            let len = (a * 10.0).round() as usize;
            vh[start..start + len].fill(100.0);
            spans.push(Span { start, end: start + len });
        }
        let v = Signal2 { h: vh, v: vec![0.0; n] };
        let p = Signal2 {
            h: integrate(&v.h, 0.0),
            v: vec![0.0; n],
        };
        let events = spans
            .into_iter()
            .map(|s| Event {
                kind: EventKind::Saccade,
                start_ms: s.start,
                end_ms: s.end,
                measures: event_measures(s, &v, &p),
            })
            .collect();
        Segmentation {
            key: WindowKey { record, window_index: window },
            events,
            unclassified: vec![],
            len: n,
        }
    }

    #[test]
    fn ten_saccades_in_five_seconds() {
        let c = FeatureCatalog::v1();
        let seg = seg_with_saccades(key(1, Task::Hss), 0, &[1.0; 10]);
        let f = extract(&c, &[seg]).unwrap();
        assert_eq!(f.get(c.index_of("Sac_Rate").unwrap()), Some(2.0));
    }

    #[test]
    fn no_saccades_masks_medians() {
        let c = FeatureCatalog::v1();
        let f = extract(&c, &[seg_with_saccades(key(1, Task::Hss), 0, &[])]).unwrap();
        assert_eq!(f.get(c.index_of("Sac_Rate").unwrap()), Some(0.0));
        for (i, e) in c.entries().iter().enumerate() {
            if matches!(e.binding, Binding::Median(..)) {
                assert!(f.missing[i], "{}", e.name);
                assert!(f.values[i].is_nan());
            }
        }
    }

    #[test]
    fn median_amplitude_by_hand() {
        let c = FeatureCatalog::v1();
        let seg = seg_with_saccades(key(1, Task::Hss), 0, &[9.0, 1.0, 2.0]);
        let f = extract(&c, &[seg]).unwrap();
        let a = f.get(c.index_of("Sac_Ampl_R_Md").unwrap()).unwrap();
        assert!((a - 2.0).abs() < 1e-12, "{a}");
    }

    #[test]
    fn pooled_over_windows_and_order_invariant() {
        let c = FeatureCatalog::v1();
        let k = key(3, Task::Ran);
        let a = seg_with_saccades(k, 0, &[1.0, 4.0]);
        let b = seg_with_saccades(k, 1, &[2.0, 3.0]);
        let f1 = extract(&c, &[a.clone(), b.clone()]).unwrap();
        let f2 = extract(&c, &[b, a]).unwrap();
        assert_eq!(f1.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   f2.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let amp = f1.get(c.index_of("Sac_Ampl_R_Md").unwrap()).unwrap();
        assert!((amp - 2.5).abs() < 1e-12);
        assert_eq!(f1.get(c.index_of("Sac_Rate").unwrap()), Some(0.4));
    }

    #[test]
    fn mixed_keys_are_rejected() {
        let c = FeatureCatalog::v1();
        let a = seg_with_saccades(key(1, Task::Hss), 0, &[1.0]);
        let b = seg_with_saccades(key(2, Task::Hss), 0, &[1.0]);
        assert!(matches!(extract(&c, &[a, b]), Err(Error::Integrity(_))));
        assert!(extract(&c, &[]).is_err());
    }

    #[test]
    fn table_sorting_duplicates_and_filter() {
        let c = FeatureCatalog::v1();
        let segs: Vec<_> = [key(2, Task::Tex), key(1, Task::Hss), key(1, Task::Tex)]
            .into_iter()
            .map(|k| seg_with_saccades(k, 0, &[2.0]))
            .collect();
        let vectors = extract_by_key(&c, &segs).unwrap();
        let mut shuffled = vectors.clone();
        shuffled.reverse();
        let t1 = feature_table(&c, vectors.clone()).unwrap();
        let t2 = feature_table(&c, shuffled).unwrap();
        let bits = |t: &FeatureTable| -> Vec<(RecordKey, Vec<u64>)> {
            t.rows.iter().map(|r| (r.key, r.values.iter().map(|x| x.to_bits()).collect())).collect()
        };
        assert_eq!(bits(&t1), bits(&t2));
        assert_eq!(t1.filter_task(Task::Tex).rows.len(), 2);
        assert_eq!(t1.filter_task(Task::Ran).rows.len(), 0);
        let mut dup = vectors.clone();
        dup.push(vectors[0].clone());
        assert!(matches!(feature_table(&c, dup), Err(Error::Integrity(_))));
    }

    #[test]
    fn csv_round_trip() {
        let c = FeatureCatalog::v1();
        let segs = vec![
            seg_with_saccades(key(1, Task::Hss), 0, &[1.0, 3.5]),
            seg_with_saccades(key(2, Task::Hss), 0, &[]),
        ];
        let table = feature_table(&c, extract_by_key(&c, &segs).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let mut buf = b"# seed=1\n".to_vec();
        write_feature_table(&mut buf, &table).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let back = read_feature_table(&path, &c).unwrap();
        assert_eq!(back.rows.len(), 2);
        for (a, b) in back.rows.iter().zip(&table.rows) {
            assert_eq!(a.key, b.key);
            assert_eq!(a.missing, b.missing);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
