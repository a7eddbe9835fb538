use std::path::PathBuf;

use gaze_audit::features::{feature_table, FeatureCatalog, FeatureVector};
use gaze_audit::gaze::{RecordKey, SubjectiveReport, Task};
use gaze_audit::stats::{build_matrix, render_heatmap, Pooling, SessionPooling};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Ten subjects; Sac_Rate is the rating itself, Fix_Rate its reverse, a third
/// feature is missing for two subjects and everything else is constant.
fn fixture() -> gaze_audit::stats::CorrelationMatrix {
    let catalog = FeatureCatalog::v1();
    let sac = catalog.index_of("Sac_Rate").unwrap();
    let fix = catalog.index_of("Fix_Rate").unwrap();
    let amp = catalog.index_of("Sac_Ampl_R_Md").unwrap();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for s in 1..=10u32 {
        let key = RecordKey { subject_id: s, session: 1, round: 2, task: Task::Hss };
        let r = (s % 7 + 1) as u8;
        let mut values = vec![1.0; catalog.len()];
        let mut missing = vec![false; catalog.len()];
        values[sac] = f64::from(r);
        values[fix] = -f64::from(s);
        values[amp] = f64::from((s * 37) % 11);
        if s <= 2 {
            values[amp] = f64::NAN;
            missing[amp] = true;
        }
        rows.push(FeatureVector { key, values, missing });
        reports.push(SubjectiveReport::new(key, r, (8 - r).max(1), ((s * 3) % 7 + 1) as u8).unwrap());
    }
    let table = feature_table(&catalog, rows).unwrap();
    build_matrix(&table, &reports, Task::Hss, Pooling::AllRounds, SessionPooling::Separate).unwrap()
}

#[test]
fn heatmap_matches_reviewed_golden_file() {
    let svg = render_heatmap(&fixture());
    assert_eq!(svg, render_heatmap(&fixture()));
    let path = golden("heatmap_hss_all_rounds.svg");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &svg).unwrap();
    }
    let expected = std::fs::read_to_string(&path).expect("golden file; regenerate with UPDATE_GOLDEN=1");
    assert_eq!(svg, expected);
}

#[test]
fn masked_matrix_renders_hatched_grid() {
    let catalog = FeatureCatalog::v1();
    let table = feature_table(&catalog, Vec::new()).unwrap();
    let m = build_matrix(&table, &[], Task::Tex, Pooling::Round(3), SessionPooling::Separate).unwrap();
    let svg = render_heatmap(&m);
    assert_eq!(svg.matches("url(#hatch)").count(), 58 * 3);
    assert!(!svg.contains("stroke=\"#000000\""));
}
