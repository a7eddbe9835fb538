use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gaze_audit::events::{segment, EventParams};
use gaze_audit::gaze::{GazeWindow, Task};
use gaze_audit::par;
use gaze_audit::sim::{simulate_cohort, CohortConfig};

fn windows() -> Vec<GazeWindow> {
    let cfg = CohortConfig { subjects: 16, tasks: vec![Task::Ran], ..Default::default() };
    simulate_cohort(&cfg).unwrap().windows().map(|w| w.window.clone()).collect()
}

fn segmentation(c: &mut Criterion) {
    let ws = windows();
    let params = EventParams::default();
    let mut g = c.benchmark_group("segment");
    g.bench_with_input(BenchmarkId::new("sequential", ws.len()), &ws, |b, ws| {
        b.iter(|| par::map_sequential(ws, |w| segment(w, &params)))
    });
    g.bench_with_input(BenchmarkId::new("parallel", ws.len()), &ws, |b, ws| {
        b.iter(|| par::map_parallel(ws, |w| segment(w, &params)))
    });
    g.finish();
}

criterion_group!(benches, segmentation);
criterion_main!(benches);
