//! Spearman analysis of feature tables against subjective ratings.

mod heatmap;
mod matrix;
mod spearman;

pub use heatmap::{render_heatmap, rho_color};
pub use matrix::{
    build_matrices, build_matrix, read_matrices_csv, scopes, summary_json, write_matrices_csv,
    CorrelationMatrix, Pooling, SessionPooling, REPORTED_ROUNDS,
};
pub use spearman::{
    rank, spearman, t_approx_p, CorrelationCell, MaskReason, ALPHA, EXACT_MAX_N, MIN_PAIRS,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{feature_table, FeatureCatalog, FeatureVector};
    use crate::gaze::{Rating, RecordKey, SubjectiveReport, Task};

    fn row(c: &FeatureCatalog, key: RecordKey, first: f64) -> FeatureVector {
        let mut values = vec![f64::NAN; c.len()];
        let mut missing = vec![true; c.len()];
        values[0] = first;
        missing[0] = false;
        FeatureVector { key, values, missing }
    }

    fn key(s: u32, session: u32, round: u32, task: Task) -> RecordKey {
        RecordKey { subject_id: s, session, round, task }
    }

    #[test]
    fn scope_set_is_fixed() {
        let s = scopes();
        assert_eq!(s.len(), 12);
        assert_eq!(s[0], (Task::Hss, Pooling::AllRounds));
        assert_eq!(s[3], (Task::Hss, Pooling::Round(4)));
        assert_eq!("round-3".parse::<Pooling>().unwrap(), Pooling::Round(3));
        assert!("round-x".parse::<Pooling>().is_err());
    }

    #[test]
    fn one_computed_cell_rest_masked() {
        let c = FeatureCatalog::v1();
        let mut rows = Vec::new();
        let mut reports = Vec::new();
        for s in 0..12 {
            let k = key(s, 1, 2, Task::Ran);
            rows.push(row(&c, k, f64::from(s)));
            let r = (s % 7 + 1) as u8;
            reports.push(SubjectiveReport::new(k, r, 4, 1 + (s as u8 % 3)).unwrap());
        }
        let t = feature_table(&c, rows).unwrap();
        let ms = build_matrices(&t, &reports, SessionPooling::Separate).unwrap();
        assert_eq!(ms.len(), 12);
        let m = ms.iter().find(|m| m.task == Task::Ran && m.pooling == Pooling::Round(2)).unwrap();
        assert_eq!(m.cells.len(), 58);
        assert_eq!(m.observations, 12);
        let first = &m.cells[0];
        assert!(!first[0].is_masked());
        assert_eq!(first[1].mask, Some(MaskReason::ZeroVariance));
        assert!(m.cells[1..].iter().flatten().all(|c| c.mask == Some(MaskReason::InsufficientData)));
        let empty = ms.iter().find(|m| m.task == Task::Hss).unwrap();
        assert_eq!(empty.observations, 0);
        assert!(empty.cells.iter().flatten().all(|c| c.is_masked()));
    }

    #[test]
    fn session_mean_pooling_halves_observations() {
        let c = FeatureCatalog::v1();
        let mut rows = Vec::new();
        let mut reports = Vec::new();
        for s in 0..10 {
            for session in [1, 2] {
                let k = key(s, session, 3, Task::Tex);
                rows.push(row(&c, k, f64::from(s) + 0.1 * f64::from(session)));
                reports.push(SubjectiveReport::new(k, 1 + (s % 7) as u8, 2, 3).unwrap());
            }
        }
        let t = feature_table(&c, rows).unwrap();
        let sep = build_matrix(&t, &reports, Task::Tex, Pooling::Round(3), SessionPooling::Separate).unwrap();
        let mean = build_matrix(&t, &reports, Task::Tex, Pooling::Round(3), SessionPooling::Mean).unwrap();
        assert_eq!(sep.observations, 20);
        assert_eq!(mean.observations, 10);
        assert_eq!(mean.cells[0][0].n, 10);
        let all = build_matrix(&t, &reports, Task::Tex, Pooling::AllRounds, SessionPooling::Separate).unwrap();
        assert_eq!(all.observations, 20);
        assert!(build_matrix(&t, &[reports[0], reports[0]], Task::Tex, Pooling::AllRounds, SessionPooling::Separate).is_err());
    }

    #[test]
    fn csv_round_trip_and_summary() {
        let c = FeatureCatalog::v1();
        let mut rows = Vec::new();
        let mut reports = Vec::new();
        for s in 0..15 {
            let k = key(s, 1, 4, Task::Hss);
            rows.push(row(&c, k, f64::from(s)));
            reports.push(SubjectiveReport::new(k, 1 + (s / 3) as u8, 1 + (s % 7) as u8, 3).unwrap());
        }
        let t = feature_table(&c, rows).unwrap();
        let ms = build_matrices(&t, &reports, SessionPooling::Separate).unwrap();
        let mut buf = Vec::new();
        write_matrices_csv(&mut buf, &ms).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 12 * 58 * 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, &buf).unwrap();
        let back = read_matrices_csv(&path).unwrap();
        assert_eq!(back.len(), 12);
        for (a, b) in back.iter().zip(&ms) {
            assert_eq!(a.features, b.features);
            for (ra, rb) in a.cells.iter().zip(&b.cells) {
                for (x, y) in ra.iter().zip(rb) {
                    assert_eq!(x.is_masked(), y.is_masked());
                    if !x.is_masked() {
                        assert_eq!(x.rho.to_bits(), y.rho.to_bits());
                        assert_eq!(x.p.to_bits(), y.p.to_bits());
                    }
                }
            }
        }
        let json = summary_json(&ms).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["scopes"].as_array().unwrap().len(), 12);
        let sig = &v["scopes"][0]["significant"];
        assert_eq!(sig[0]["feature"], "Sac_Rate");
        assert_eq!(sig[0]["rating"], Rating::OverDiff.as_str());
    }
}
