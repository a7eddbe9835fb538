//! Signal-quality metrics: spatial accuracy, RMS precision and embedding
//! similarity between paired real and synthetic windows.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::embedding::{cosine_similarity, Encoder};
use crate::error::{Error, Result};
use crate::events::{EventKind, Segmentation};
use crate::gaze::{position_to_velocity, GazeWindow, Signal2, Task, WindowKey};
use crate::par;

/// Stimulus target shown from `onset_ms` until the next onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Target {
    pub onset_ms: f64,
    pub x: f64,
    pub y: f64,
}

/// Fraction of each target epoch, counted from its end, used as the
/// steady-state part.
pub const STEADY_STATE_FRACTION: f64 = 0.5;

/// Mean distance between per-epoch steady-state gaze centroids and targets.
///
/// `targets` must be sorted by onset. Epochs are clipped to the window;
/// epochs without samples are skipped, and `None` means no epoch had any.
pub fn spatial_accuracy(w: &GazeWindow, targets: &[Target]) -> Option<f64> {
    let samples = w.samples();
    let end_ms = samples.last()?.t_ms + 1.0;
    let mut total = 0.0;
    let mut epochs = 0usize;
    for (i, tg) in targets.iter().enumerate() {
        let next = targets.get(i + 1).map_or(end_ms, |n| n.onset_ms.min(end_ms));
        let idx: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.t_ms >= tg.onset_ms && s.t_ms < next && s.valid)
            .map(|(k, _)| k)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let keep = ((idx.len() as f64 * STEADY_STATE_FRACTION).ceil() as usize).max(1);
        let steady = &idx[idx.len() - keep..];
        let n = steady.len() as f64;
        let cx = steady.iter().map(|&k| samples[k].x).sum::<f64>() / n;
        let cy = steady.iter().map(|&k| samples[k].y).sum::<f64>() / n;
        total += (cx - tg.x).hypot(cy - tg.y);
        epochs += 1;
    }
    (epochs > 0).then(|| total / epochs as f64)
}

/// RMS of sample-to-sample displacement per fixation, averaged with
/// sample-count weights. Fixations with fewer than two samples are skipped.
pub fn rms_precision(fixations: &[Signal2]) -> Option<f64> {
    let mut weighted = 0.0;
    let mut weight = 0usize;
    for f in fixations.iter().filter(|f| f.len() >= 2) {
        let msd = (1..f.len())
            .map(|i| {
                let dx = f.h[i] - f.h[i - 1];
                let dy = f.v[i] - f.v[i - 1];
                dx * dx + dy * dy
            })
            .sum::<f64>()
            / (f.len() - 1) as f64;
        weighted += msd.sqrt() * f.len() as f64;
        weight += f.len();
    }
    (weight > 0).then(|| weighted / weight as f64)
}

/// Position samples of every fixation in a segmentation.
pub fn fixation_positions(w: &GazeWindow, seg: &Segmentation) -> Vec<Signal2> {
    let p = w.positions();
    seg.of_kind(EventKind::Fixation)
        .map(|e| Signal2 {
            h: p.h[e.start_ms..e.end_ms].to_vec(),
            v: p.v[e.start_ms..e.end_ms].to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSimilarity {
    pub pairs: usize,
    pub cosine_mean: f64,
    /// Mean cosine per subject id.
    pub cosine_per_subject: BTreeMap<u32, f64>,
}

/// Cosine similarity of paired real/synthetic windows, per task.
///
/// Every window must have exactly one partner with the same key.
pub fn similarity_report(
    real: &[GazeWindow],
    synth: &[GazeWindow],
    encoder: &dyn Encoder,
) -> Result<BTreeMap<Task, TaskSimilarity>> {
    let index = |ws: &[GazeWindow], what: &str| -> Result<BTreeMap<WindowKey, usize>> {
        let mut m = BTreeMap::new();
        for (i, w) in ws.iter().enumerate() {
            if m.insert(*w.key(), i).is_some() {
                return Err(Error::Pairing(format!("duplicate {what} window {}", w.key())));
            }
        }
        Ok(m)
    };
    let ri = index(real, "real")?;
    let si = index(synth, "synthetic")?;
    if let Some(k) = ri.keys().find(|k| !si.contains_key(k)) {
        return Err(Error::Pairing(format!("real window {k} has no synthetic partner")));
    }
    if let Some(k) = si.keys().find(|k| !ri.contains_key(k)) {
        return Err(Error::Pairing(format!("synthetic window {k} has no real partner")));
    }
    let pairs: Vec<(WindowKey, usize, usize)> = ri.iter().map(|(k, &i)| (*k, i, si[k])).collect();
    let cosines = par::map(&pairs, |&(_, i, j)| {
        let a = encoder.encode(&position_to_velocity(&real[i]));
        let b = encoder.encode(&position_to_velocity(&synth[j]));
        cosine_similarity(&a, &b)
    });

    let mut by_task: BTreeMap<Task, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for ((k, _, _), c) in pairs.iter().zip(cosines) {
        by_task
            .entry(k.record.task)
            .or_default()
            .entry(k.record.subject_id)
            .or_default()
            .push(c);
    }
    Ok(by_task
        .into_iter()
        .map(|(task, subjects)| {
            let all: Vec<f64> = subjects.values().flatten().copied().collect();
            let per_subject = subjects
                .into_iter()
                .map(|(s, v)| (s, v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            (
                task,
                TaskSimilarity {
                    pairs: all.len(),
                    cosine_mean: all.iter().sum::<f64>() / all.len() as f64,
                    cosine_per_subject: per_subject,
                },
            )
        })
        .collect())
}

/// One task's entry in the quality report JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskQuality {
    pub accuracy_deg: Option<f64>,
    pub rms_precision_deg: Option<f64>,
    pub cosine_mean: Option<f64>,
    pub cosine_per_subject: BTreeMap<u32, f64>,
}
