//! Labelled oculomotor simulator used as a ground-truth oracle.
//!
//! Windows alternate fixations and saccades. A saccade of amplitude `A`
//! follows the main sequence `Vp = η·(1 − e^(−A/c))` with a raised-cosine
//! velocity profile of duration `D = 2A/Vp`, so both its amplitude and its
//! peak velocity are exact:
//!
//! ```text
//! p(τ) = start + Δ·F(τ/D),   F(u) = u − sin(2πu)/(2π),   |ṗ|max = 2A/D = Vp
//! ```
//!
//! A latent fatigue level `f ∈ [0, 1]` per (subject, session, round) drives
//! the three ratings and, through the coupling gain `g`, shortens fixations:
//! the mean fixation duration is `μ_task·m_subject/(1 + g·f)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{event_measures, Event, EventKind, Segmentation, Span};
use crate::gaze::{
    position_to_velocity, recording_files, recording_path, write_manifest, write_ratings, write_targets,
    GazeWindow, RecordKey, Signal2, SubjectiveReport, TargetRow, Task, WindowKey,
    DT, LIKERT_MAX, LIKERT_MIN, WINDOW_LEN,
};
use crate::metrics::Target;
use crate::par;
use crate::util::derive_seed;

const TAG_LATENTS: u64 = 1;
const TAG_FATIGUE: u64 = 2;
const TAG_RATINGS: u64 = 3;
const TAG_WINDOW: u64 = 4;

/// Horizontal target positions of the HSS task.
pub const HSS_TARGET_X: f64 = 15.0;
/// Half-extent of the RAN target field.
pub const RAN_FIELD: (f64, f64) = (15.0, 9.0);
pub const RAN_MIN_STEP_DEG: f64 = 2.0;
/// TEX text block: lines span x ∈ [−10, 10], y from 6 down to −6.
pub const TEX_LINE_X: (f64, f64) = (-10.0, 10.0);
pub const TEX_LINE_Y: (f64, f64) = (6.0, -6.0);
pub const TEX_LINE_SPACING: f64 = 1.5;
pub const TEX_STEP_DEG: (f64, f64) = (1.5, 3.5);
/// A saccade must be followed by at least this much fixation inside the window.
const MIN_TRAILING_FIXATION_MS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainSequence {
    /// Saturation peak velocity (deg/s).
    pub eta: f64,
    /// Amplitude constant (deg).
    pub c: f64,
}

impl Default for MainSequence {
    fn default() -> Self {
        Self { eta: 500.0, c: 6.0 }
    }
}

impl MainSequence {
    pub fn peak_velocity(&self, amplitude: f64) -> f64 {
        self.eta * (1.0 - (-amplitude / self.c).exp())
    }

    /// Raised-cosine duration in seconds.
    pub fn duration_s(&self, amplitude: f64) -> f64 {
        2.0 * amplitude / self.peak_velocity(amplitude)
    }
}

/// Raised-cosine displacement fraction at normalized time `u ∈ [0, 1]`.
pub fn raised_cosine_fraction(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u - (2.0 * PI * u).sin() / (2.0 * PI)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Positional jitter σ per axis (deg), before the subject multiplier.
    pub jitter_deg: f64,
    /// Fixation drift speed (deg/s), before the subject multiplier.
    pub drift_deg_s: f64,
    pub main_sequence: MainSequence,
    pub min_amplitude_deg: f64,
    /// State-coupling gain g ∈ [0, 1].
    pub coupling: f64,
    /// Gamma shape of fixation durations.
    pub fixation_shape: f64,
    pub min_fixation_ms: usize,
    /// Overrides the per-task mean fixation duration.
    pub fixation_mean_ms: Option<f64>,
    /// Caps the number of saccades per window.
    pub max_saccades: Option<usize>,
    /// Disables the subject-level variation of every latent.
    pub homogeneous_subjects: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            jitter_deg: 0.005,
            drift_deg_s: 0.2,
            main_sequence: MainSequence::default(),
            min_amplitude_deg: 1.5,
            coupling: 0.0,
            fixation_shape: 6.0,
            min_fixation_ms: 100,
            fixation_mean_ms: None,
            max_saccades: None,
            homogeneous_subjects: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.jitter_deg >= 0.0
            && self.drift_deg_s >= 0.0
            && (0.0..=1.0).contains(&self.coupling)
            && self.min_amplitude_deg > 0.0
            && self.main_sequence.eta > 0.0
            && self.main_sequence.c > 0.0
            && self.fixation_shape > 0.0
            && self.fixation_mean_ms.is_none_or(|m| m > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid simulator config: {self:?}")))
        }
    }

    pub fn task_fixation_mean_ms(&self, task: Task) -> f64 {
        self.fixation_mean_ms.unwrap_or(match task {
            Task::Hss => 350.0,
            Task::Ran => 300.0,
            Task::Tex => 220.0,
        })
    }
}

/// Per-subject idiosyncrasies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubjectLatents {
    pub subject_id: u32,
    pub jitter_mult: f64,
    pub drift_mult: f64,
    pub fixation_mult: f64,
    pub eta_mult: f64,
    /// Constant landing offset from every target (deg).
    pub offset: (f64, f64),
}

impl SubjectLatents {
    pub fn neutral(subject_id: u32) -> Self {
        Self {
            subject_id,
            jitter_mult: 1.0,
            drift_mult: 1.0,
            fixation_mult: 1.0,
            eta_mult: 1.0,
            offset: (0.0, 0.0),
        }
    }

    pub fn draw(subject_id: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_LATENTS, subject_id.into()]));
        let offset = Normal::new(0.0, 0.5).expect("valid normal");
        Self {
            subject_id,
            jitter_mult: rng.random_range(0.6..1.4),
            drift_mult: rng.random_range(0.5..1.5),
            fixation_mult: (0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp(),
            eta_mult: rng.random_range(0.9..1.1),
            offset: (offset.sample(&mut rng), offset.sample(&mut rng)),
        }
    }
}

/// One generated saccade with its analytic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSaccade {
    pub span: Span,
    pub amplitude: f64,
    pub peak_velocity: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone)]
pub struct SimWindow {
    pub window: GazeWindow,
    pub truth: Segmentation,
    pub saccades: Vec<SimSaccade>,
    /// Target onsets on the window's time axis.
    pub targets: Vec<Target>,
}

struct Scanner {
    task: Task,
    current: (f64, f64),
}

impl Scanner {
    fn new(task: Task, rng: &mut impl Rng) -> Self {
        let current = match task {
            Task::Hss => (-HSS_TARGET_X, 0.0),
            Task::Ran => (
                rng.random_range(-RAN_FIELD.0..RAN_FIELD.0),
                rng.random_range(-RAN_FIELD.1..RAN_FIELD.1),
            ),
            Task::Tex => (TEX_LINE_X.0, TEX_LINE_Y.0),
        };
        Self { task, current }
    }

    fn next(&mut self, rng: &mut impl Rng, min_step: f64) -> (f64, f64) {
        let (x, y) = self.current;
        let next = match self.task {
            Task::Hss => (-x, 0.0),
            Task::Ran => {
                let min = min_step.max(RAN_MIN_STEP_DEG);
                let mut t = (x, y);
                for _ in 0..1000 {
                    t = (
                        rng.random_range(-RAN_FIELD.0..RAN_FIELD.0),
                        rng.random_range(-RAN_FIELD.1..RAN_FIELD.1),
                    );
                    if (t.0 - x).hypot(t.1 - y) >= min {
                        break;
                    }
                }
                t
            }
            Task::Tex => {
                let step = rng.random_range(TEX_STEP_DEG.0..TEX_STEP_DEG.1).max(min_step);
                if x + step <= TEX_LINE_X.1 {
                    (x + step, y)
                } else {
                    let ny = if y - TEX_LINE_SPACING < TEX_LINE_Y.1 {
                        TEX_LINE_Y.0
                    } else {
                        y - TEX_LINE_SPACING
                    };
                    (TEX_LINE_X.0 + rng.random_range(0.0..1.0), ny)
                }
            }
        };
        self.current = next;
        next
    }
}

/// Generates one labelled window starting at `window_index · 5000` ms.
/// `fatigue` only matters when `cfg.coupling > 0`.
pub fn simulate_window(
    cfg: &SimConfig,
    task: Task,
    latents: &SubjectLatents,
    fatigue: f64,
    key: WindowKey,
    seed: u64,
) -> Result<SimWindow> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = WINDOW_LEN;
    let mean_fix = cfg.task_fixation_mean_ms(task) * latents.fixation_mult
        / (1.0 + cfg.coupling * fatigue.clamp(0.0, 1.0));
    let gamma = Gamma::new(cfg.fixation_shape, mean_fix / cfg.fixation_shape)
        .map_err(|e| Error::Config(format!("fixation distribution: {e}")))?;
    let ms = MainSequence {
        eta: cfg.main_sequence.eta * latents.eta_mult,
        c: cfg.main_sequence.c,
    };
    let drift = cfg.drift_deg_s * latents.drift_mult;

    let mut ideal_h = vec![0.0; n];
    let mut ideal_v = vec![0.0; n];
    let mut scanner = Scanner::new(task, &mut rng);
    let mut target = scanner.current;
    let land = |t: (f64, f64)| (t.0 + latents.offset.0, t.1 + latents.offset.1);
    let mut pos = land(target);
    let mut t = 0usize;
    let mut saccades = Vec::new();
    let mut spans: Vec<(EventKind, Span)> = Vec::new();
    let mut targets = vec![Target { onset_ms: 0.0, x: target.0, y: target.1 }];

    loop {
        let fix_ms = (gamma.sample(&mut rng).round() as usize).max(cfg.min_fixation_ms);
        let can_saccade = cfg.max_saccades.is_none_or(|m| saccades.len() < m);
        let next_target = scanner.next(&mut rng, cfg.min_amplitude_deg);
        let dest = land(next_target);
        let dir = rng.random_range(0.0..2.0 * PI);
        let fix_end = (t + fix_ms).min(n);
        // Fixation with constant-velocity drift.
        for (k, i) in (t..fix_end).enumerate() {
            let d = drift * k as f64 * DT;
            ideal_h[i] = pos.0 + d * dir.cos();
            ideal_v[i] = pos.1 + d * dir.sin();
        }
        let drifted = if fix_end > t {
            (ideal_h[fix_end - 1], ideal_v[fix_end - 1])
        } else {
            pos
        };

        let delta = (dest.0 - drifted.0, dest.1 - drifted.1);
        let amplitude = delta.0.hypot(delta.1);
        let duration_s = ms.duration_s(amplitude);
        let sac_samples = (duration_s / DT).ceil() as usize;
        if !can_saccade || fix_end + sac_samples + MIN_TRAILING_FIXATION_MS > n {
            // Hold the fixation to the end of the window.
            for (k, i) in (t..n).enumerate() {
                let d = drift * k as f64 * DT;
                ideal_h[i] = pos.0 + d * dir.cos();
                ideal_v[i] = pos.1 + d * dir.sin();
            }
            spans.push((EventKind::Fixation, Span { start: t, end: n }));
            break;
        }
        spans.push((EventKind::Fixation, Span { start: t, end: fix_end }));

        // Saccade samples at τ = 1..=sac_samples ms after the last fixation sample.
        for k in 0..sac_samples {
            let u = ((k + 1) as f64 * DT) / duration_s;
            let f = raised_cosine_fraction(u);
            ideal_h[fix_end + k] = drifted.0 + delta.0 * f;
            ideal_v[fix_end + k] = drifted.1 + delta.1 * f;
        }
        let span = Span { start: fix_end, end: fix_end + sac_samples };
        spans.push((EventKind::Saccade, span));
        saccades.push(SimSaccade {
            span,
            amplitude,
            peak_velocity: ms.peak_velocity(amplitude),
            duration_s,
        });
        targets.push(Target {
            onset_ms: fix_end as f64,
            x: next_target.0,
            y: next_target.1,
        });
        target = next_target;
        pos = dest;
        t = span.end;
    }
    let _ = target;

    let sigma = cfg.jitter_deg * latents.jitter_mult;
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut h = ideal_h;
    let mut v = ideal_v;
    if sigma > 0.0 {
        for i in 0..n {
            h[i] += noise.sample(&mut rng);
            v[i] += noise.sample(&mut rng);
        }
    }
    let positions = Signal2 { h, v };
    let t0 = f64::from(key.window_index) * WINDOW_LEN as f64;
    let window = GazeWindow::from_positions(key, t0, &positions)?;
    for tg in &mut targets {
        tg.onset_ms += t0;
    }
    let vel = position_to_velocity(&window);
    let events = spans
        .into_iter()
        .map(|(kind, s)| Event {
            kind,
            start_ms: s.start,
            end_ms: s.end,
            measures: event_measures(s, &vel, &positions),
        })
        .collect();
    let truth = Segmentation {
        key,
        events,
        unclassified: Vec::new(),
        len: n,
    };
    Ok(SimWindow {
        window,
        truth,
        saccades,
        targets,
    })
}

/// Likert rating `clamp(round(1 + 6f + noise))`.
pub fn rating_from_fatigue(fatigue: f64, noise: f64) -> u8 {
    let raw = (1.0 + 6.0 * fatigue + noise).round();
    raw.clamp(f64::from(LIKERT_MIN), f64::from(LIKERT_MAX)) as u8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub subjects: u32,
    pub sessions: u32,
    pub rounds: Vec<u32>,
    pub tasks: Vec<Task>,
    pub windows_per_record: u32,
    /// Standard deviation of the Gaussian noise added to each rating.
    pub rating_noise: f64,
    /// Seeds latents, fatigue and ratings.
    pub seed: u64,
    /// Selects an independent stream for the gaze windows only, so two
    /// corpora can share subjects and ratings but not samples.
    pub stream: u64,
    pub sim: SimConfig,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            subjects: 10,
            sessions: 1,
            rounds: vec![2, 3, 4],
            tasks: Task::ALL.to_vec(),
            windows_per_record: 1,
            rating_noise: 0.5,
            seed: 0,
            stream: 0,
            sim: SimConfig::default(),
        }
    }
}

/// Minimum cohort size.
pub const MIN_SUBJECTS: u32 = 10;

#[derive(Debug, Clone)]
pub struct SimRecord {
    pub key: RecordKey,
    pub fatigue: f64,
    pub report: SubjectiveReport,
    pub windows: Vec<SimWindow>,
}

#[derive(Debug, Clone)]
pub struct SimCohort {
    pub config: CohortConfig,
    pub latents: Vec<SubjectLatents>,
    pub records: Vec<SimRecord>,
}

impl SimCohort {
    pub fn windows(&self) -> impl Iterator<Item = &SimWindow> {
        self.records.iter().flat_map(|r| &r.windows)
    }

    pub fn reports(&self) -> Vec<SubjectiveReport> {
        self.records.iter().map(|r| r.report).collect()
    }
}

/// Latent fatigue of one (subject, session, round).
pub fn fatigue_level(seed: u64, subject: u32, session: u32, round: u32) -> f64 {
    let s = derive_seed(seed, &[TAG_FATIGUE, subject.into(), session.into(), round.into()]);
    ChaCha8Rng::seed_from_u64(s).random_range(0.0..1.0)
}

pub fn simulate_cohort(cfg: &CohortConfig) -> Result<SimCohort> {
    if cfg.subjects < MIN_SUBJECTS {
        return Err(Error::Config(format!(
            "a cohort needs at least {MIN_SUBJECTS} subjects, got {}",
            cfg.subjects
        )));
    }
    if cfg.sessions == 0 || cfg.rounds.is_empty() || cfg.tasks.is_empty() || cfg.windows_per_record == 0 {
        return Err(Error::Config("cohort needs sessions, rounds, tasks and windows".into()));
    }
    if !(cfg.rating_noise >= 0.0) {
        return Err(Error::Config("rating_noise must be >= 0".into()));
    }
    cfg.sim.validate()?;
    let latents: Vec<SubjectLatents> = (1..=cfg.subjects)
        .map(|s| {
            if cfg.sim.homogeneous_subjects {
                SubjectLatents::neutral(s)
            } else {
                SubjectLatents::draw(s, cfg.seed)
            }
        })
        .collect();

    let mut keys = Vec::new();
    for lat in &latents {
        for session in 1..=cfg.sessions {
            for &round in &cfg.rounds {
                for &task in &cfg.tasks {
                    keys.push(RecordKey {
                        subject_id: lat.subject_id,
                        session,
                        round,
                        task,
                    });
                }
            }
        }
    }
    keys.sort();
    keys.dedup();

    let records = par::map(&keys, |key| -> Result<SimRecord> {
        let lat = &latents[(key.subject_id - 1) as usize];
        let fatigue = fatigue_level(cfg.seed, key.subject_id, key.session, key.round);
        let mut rrng = ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[TAG_RATINGS, key.subject_id.into(), key.session.into(), key.round.into(), key.task as u64],
        ));
        let noise = Normal::new(0.0, cfg.rating_noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut rating = || rating_from_fatigue(fatigue, noise.sample(&mut rrng));
        let report = SubjectiveReport::new(*key, rating(), rating(), rating())?;
        let windows = (0..cfg.windows_per_record)
            .map(|w| {
                let seed = derive_seed(
                    cfg.seed,
                    &[
                        TAG_WINDOW,
                        cfg.stream,
                        key.subject_id.into(),
                        key.session.into(),
                        key.round.into(),
                        key.task as u64,
                        w.into(),
                    ],
                );
                let wkey = WindowKey { record: *key, window_index: w };
                simulate_window(&cfg.sim, key.task, lat, fatigue, wkey, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimRecord {
            key: *key,
            fatigue,
            report,
            windows,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(SimCohort {
        config: cfg.clone(),
        latents,
        records,
    })
}

/// Serializes a cohort as corpus files (relative path, bytes): one gaze CSV
/// per record plus `manifest.csv`, `ratings.csv`, `targets.csv` and
/// `truth_events.csv`.
pub fn corpus_files(cohort: &SimCohort) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let windows: Vec<GazeWindow> = cohort.windows().map(|w| w.window.clone()).collect();
    let (mut files, manifest) = recording_files(&windows)?;
    let targets: Vec<TargetRow> = cohort
        .records
        .iter()
        .flat_map(|rec| {
            let file = recording_path(&rec.key);
            rec.windows.iter().flat_map(move |sw| {
                let file = file.clone();
                sw.targets.iter().map(move |t| TargetRow {
                    file: file.clone(),
                    onset_ms: t.onset_ms,
                    x: t.x,
                    y: t.y,
                })
            })
        })
        .collect();
    let mut buf = Vec::new();
    write_manifest(&mut buf, &manifest)?;
    files.push((PathBuf::from("manifest.csv"), buf));
    let mut buf = Vec::new();
    write_ratings(&mut buf, &cohort.reports())?;
    files.push((PathBuf::from("ratings.csv"), buf));
    let mut buf = Vec::new();
    write_targets(&mut buf, &targets)?;
    files.push((PathBuf::from("targets.csv"), buf));
    let truths: Vec<Segmentation> = cohort.windows().map(|w| w.truth.clone()).collect();
    let mut buf = Vec::new();
    crate::events::write_segmentations(&mut buf, &truths)?;
    files.push((PathBuf::from("truth_events.csv"), buf));
    Ok(files)
}

/// Writes [`corpus_files`] under `dir` (non-atomically; the CLI has its own
/// writer).
pub fn write_corpus(cohort: &SimCohort, dir: &std::path::Path) -> Result<()> {
    for (rel, bytes) in corpus_files(cohort)? {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{segment, EventParams};

    fn key(task: Task) -> WindowKey {
        WindowKey {
            record: RecordKey { subject_id: 1, session: 1, round: 2, task },
            window_index: 0,
        }
    }

    #[test]
    fn raised_cosine_hits_amplitude_and_peak() {
        assert_eq!(raised_cosine_fraction(0.0), 0.0);
        assert!((raised_cosine_fraction(1.0) - 1.0).abs() < 1e-15);
        let ms = MainSequence::default();
        let a = 10.0;
        let d = ms.duration_s(a);
        let h = 1e-7;
        let u = 0.5;
        let slope = a * (raised_cosine_fraction(u + h) - raised_cosine_fraction(u - h)) / (2.0 * h) / d;
        assert!((slope - ms.peak_velocity(a)).abs() / ms.peak_velocity(a) < 1e-6);
    }

    #[test]
    fn still_window_without_saccades() {
        let cfg = SimConfig {
            jitter_deg: 0.0,
            drift_deg_s: 0.0,
            max_saccades: Some(0),
            ..Default::default()
        };
        let w = simulate_window(&cfg, Task::Ran, &SubjectLatents::neutral(1), 0.0, key(Task::Ran), 3).unwrap();
        let p = w.window.positions();
        assert!(p.h.iter().all(|&x| x == p.h[0]) && p.v.iter().all(|&y| y == p.v[0]));
        assert_eq!(w.truth.events.len(), 1);
        assert_eq!(w.truth.events[0].kind, EventKind::Fixation);
        assert!(w.saccades.is_empty());
    }

    #[test]
    fn deterministic_and_tiled() {
        for task in Task::ALL {
            let lat = SubjectLatents::draw(4, 9);
            let a = simulate_window(&SimConfig::default(), task, &lat, 0.3, key(task), 77).unwrap();
            let b = simulate_window(&SimConfig::default(), task, &lat, 0.3, key(task), 77).unwrap();
            assert_eq!(a.window, b.window);
            a.truth.check_tiling().unwrap();
            assert!(!a.saccades.is_empty());
            let last = a.saccades.last().unwrap();
            assert!(last.span.end + MIN_TRAILING_FIXATION_MS <= WINDOW_LEN);
            assert!(a.saccades.iter().all(|s| s.amplitude >= 1.0));
        }
    }

    #[test]
    fn peak_velocity_matches_main_sequence() {
        let cfg = SimConfig { jitter_deg: 0.0, drift_deg_s: 0.0, ..Default::default() };
        for (task, seed) in [(Task::Hss, 1), (Task::Ran, 2), (Task::Tex, 3)] {
            let w = simulate_window(&cfg, task, &SubjectLatents::neutral(1), 0.0, key(task), seed).unwrap();
            let sacs: Vec<_> = w.truth.of_kind(EventKind::Saccade).collect();
            assert_eq!(sacs.len(), w.saccades.len());
            for (e, s) in sacs.iter().zip(&w.saccades) {
                let pk = e.measures.get(crate::events::Measure::PkVel, crate::events::Channel::R);
                assert!((pk - s.peak_velocity).abs() / s.peak_velocity < 0.02, "{pk} vs {}", s.peak_velocity);
            }
        }
    }

    #[test]
    fn detector_recovers_saccade_counts() {
        let lat = SubjectLatents::draw(2, 5);
        for (i, task) in Task::ALL.into_iter().enumerate() {
            let w = simulate_window(&SimConfig::default(), task, &lat, 0.5, key(task), 100 + i as u64).unwrap();
            let seg = segment(&w.window, &EventParams::default());
            let found = seg.count(EventKind::Saccade) as i64;
            assert!((found - w.saccades.len() as i64).abs() <= 1, "{task}: {found} vs {}", w.saccades.len());
        }
    }

    #[test]
    fn cohort_counts_and_ratings() {
        let cfg = CohortConfig { subjects: 10, ..Default::default() };
        let c = simulate_cohort(&cfg).unwrap();
        for task in Task::ALL {
            assert_eq!(c.records.iter().filter(|r| r.key.task == task).count(), 30);
        }
        for r in &c.records {
            assert!((1..=7).contains(&r.report.over_diff));
        }
        assert!(simulate_cohort(&CohortConfig { subjects: 9, ..Default::default() }).is_err());
        let files = corpus_files(&c).unwrap();
        assert_eq!(files.len(), 90 + 4);
    }

    #[test]
    fn coupling_raises_saccade_rate() {
        let lat = SubjectLatents::neutral(1);
        let count = |g: f64, f: f64| -> usize {
            let cfg = SimConfig { coupling: g, ..Default::default() };
            (0..20)
                .map(|s| simulate_window(&cfg, Task::Ran, &lat, f, key(Task::Ran), s).unwrap().saccades.len())
                .sum()
        };
        assert!(count(1.0, 1.0) as f64 > 1.5 * count(1.0, 0.0) as f64);
        assert_eq!(count(0.0, 1.0), count(0.0, 0.0));
    }
}
