//! Gaze data model: samples, fixed-length windows, velocity signals and
//! subjective reports.

mod io;
mod preprocess;

pub use io::{
    load_recordings, read_manifest, read_ratings, read_recording, read_targets, recording_files, recording_path,
    window_recording, write_manifest,
    write_ratings, write_recording, write_targets, LoadOutcome, LoadReport, ManifestEntry,
    TargetRow,
};
pub(crate) use io::read_table;
pub use preprocess::{
    differentiate, identity_removal, integrate, interpolate_invalid, moving_average_gain,
    moving_average_zero_phase, position_to_velocity, velocity_to_position, IDENTITY_LOWPASS_HALF_WIDTH,
    MAX_GAP_MS, MAX_INVALID_FRACTION, SPEED_FLOOR_DEG_S,
};

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: f64 = 1000.0;
/// Sample spacing in seconds.
pub const DT: f64 = 1.0 / SAMPLE_RATE_HZ;
/// Samples per analysis window (5 s at 1 kHz).
pub const WINDOW_LEN: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "HSS")]
    Hss,
    #[serde(rename = "RAN")]
    Ran,
    #[serde(rename = "TEX")]
    Tex,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Hss, Task::Ran, Task::Tex];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Hss => "HSS",
            Task::Ran => "RAN",
            Task::Tex => "TEX",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "HSS" => Ok(Task::Hss),
            "RAN" => Ok(Task::Ran),
            "TEX" => Ok(Task::Tex),
            other => Err(Error::Config(format!("unknown task {other:?} (expected HSS, RAN or TEX)"))),
        }
    }
}

/// One eye-tracker sample. Positions are in degrees of visual angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub t_ms: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

/// Identifies one recording: the unit subjective ratings are attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub subject_id: u32,
    pub session: u32,
    pub round: u32,
    pub task: Task,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S{}-s{}-r{}-{}",
            self.subject_id, self.session, self.round, self.task
        )
    }
}

/// A [`RecordKey`] plus the window's position inside its recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowKey {
    pub record: RecordKey,
    pub window_index: u32,
}

impl fmt::Display for WindowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-w{}", self.record, self.window_index)
    }
}

/// Exactly [`WINDOW_LEN`] samples at 1 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeWindow {
    key: WindowKey,
    samples: Vec<GazeSample>,
}

impl GazeWindow {
    pub fn new(key: WindowKey, samples: Vec<GazeSample>) -> Result<Self> {
        if samples.len() != WINDOW_LEN {
            return Err(Error::Shape(format!(
                "window {key} has {} samples, expected {WINDOW_LEN}",
                samples.len()
            )));
        }
        for pair in samples.windows(2) {
            let step = pair[1].t_ms - pair[0].t_ms;
            if (step - 1.0).abs() > 1e-6 {
                return Err(Error::Shape(format!(
                    "window {key} has a {step} ms sample step at t={}",
                    pair[0].t_ms
                )));
            }
        }
        Ok(Self { key, samples })
    }

    /// Builds a fully valid window starting at `t0_ms` from position channels.
    pub fn from_positions(key: WindowKey, t0_ms: f64, positions: &Signal2) -> Result<Self> {
        let samples = positions
            .h
            .iter()
            .zip(&positions.v)
            .enumerate()
            .map(|(i, (&x, &y))| GazeSample {
                t_ms: t0_ms + i as f64,
                x,
                y,
                valid: true,
            })
            .collect();
        Self::new(key, samples)
    }

    pub fn key(&self) -> &WindowKey {
        &self.key
    }

    pub fn samples(&self) -> &[GazeSample] {
        &self.samples
    }

    pub fn start_ms(&self) -> f64 {
        self.samples[0].t_ms
    }

    pub fn positions(&self) -> Signal2 {
        Signal2 {
            h: self.samples.iter().map(|s| s.x).collect(),
            v: self.samples.iter().map(|s| s.y).collect(),
        }
    }

    pub fn invalid_count(&self) -> usize {
        self.samples.iter().filter(|s| !s.valid).count()
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [GazeSample] {
        &mut self.samples
    }
}

/// Two equally long channels: horizontal (`h`) and vertical (`v`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Signal2 {
    pub h: Vec<f64>,
    pub v: Vec<f64>,
}

impl Signal2 {
    pub fn new(h: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if h.len() != v.len() {
            return Err(Error::Shape(format!(
                "channel lengths differ: {} vs {}",
                h.len(),
                v.len()
            )));
        }
        Ok(Self { h, v })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            h: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn channels(&self) -> [&[f64]; 2] {
        [&self.h, &self.v]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            h: self.h.iter().map(|&a| f(a)).collect(),
            v: self.v.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self {
            h: self.h.iter().zip(&other.h).map(|(&a, &b)| f(a, b)).collect(),
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|a| a * k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.h.iter().copied().zip(self.v.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.v).all(|a| a.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.h
            .iter()
            .zip(&other.h)
            .chain(self.v.iter().zip(&other.v))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Per-sample resultant magnitude.
    pub fn magnitude(&self) -> Vec<f64> {
        self.iter().map(|(a, b)| a.hypot(b)).collect()
    }

    pub fn reversed(&self) -> Self {
        Self {
            h: self.h.iter().rev().copied().collect(),
            v: self.v.iter().rev().copied().collect(),
        }
    }
}

/// Angular velocity in deg/s, one value per sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VelocitySignal(pub Signal2);

impl Deref for VelocitySignal {
    type Target = Signal2;

    fn deref(&self) -> &Signal2 {
        &self.0
    }
}

impl From<Signal2> for VelocitySignal {
    fn from(s: Signal2) -> Self {
        Self(s)
    }
}

/// Low-passed, magnitude-normalized velocity used as diffusion conditioning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdentityRemovedSignal(pub(crate) Signal2);

impl IdentityRemovedSignal {
    /// Wraps an already processed signal, e.g. one read back from disk.
    pub fn from_processed(s: Signal2) -> Self {
        Self(s)
    }
}

impl Deref for IdentityRemovedSignal {
    type Target = Signal2;

    fn deref(&self) -> &Signal2 {
        &self.0
    }
}

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 7;

/// The three rated scales, in the fixed column order used by every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rating {
    OverDiff,
    Mentally,
    TiredEyes,
}

impl Rating {
    pub const ALL: [Rating; 3] = [Rating::OverDiff, Rating::Mentally, Rating::TiredEyes];

    pub fn as_str(self) -> &'static str {
        match self {
            Rating::OverDiff => "OverDiff",
            Rating::Mentally => "Mentally",
            Rating::TiredEyes => "TiredEyes",
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectiveReport {
    pub key: RecordKey,
    pub over_diff: u8,
    pub mentally: u8,
    pub tired_eyes: u8,
}

impl SubjectiveReport {
    pub fn new(key: RecordKey, over_diff: u8, mentally: u8, tired_eyes: u8) -> Result<Self> {
        for (name, value) in [
            ("over_diff", over_diff),
            ("mentally", mentally),
            ("tired_eyes", tired_eyes),
        ] {
            if !(LIKERT_MIN..=LIKERT_MAX).contains(&value) {
                return Err(Error::Config(format!(
                    "{name}={value} outside Likert range {LIKERT_MIN}..={LIKERT_MAX} for {key}"
                )));
            }
        }
        Ok(Self {
            key,
            over_diff,
            mentally,
            tired_eyes,
        })
    }

    pub fn get(&self, rating: Rating) -> u8 {
        match rating {
            Rating::OverDiff => self.over_diff,
            Rating::Mentally => self.mentally,
            Rating::TiredEyes => self.tired_eyes,
        }
    }
}
