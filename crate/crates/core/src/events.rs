//! Fixation/saccade segmentation and per-event measures.
//!
//! Event spans are half-open sample ranges `[start, end)` relative to the
//! window start; at 1 kHz one sample is one millisecond.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{position_to_velocity, GazeWindow, Signal2, WindowKey, DT};
use crate::util::{mean, median, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventParams {
    /// Resultant speed that opens a saccade (deg/s).
    pub open_deg_s: f64,
    /// Speed below which an open saccade closes (deg/s).
    pub close_deg_s: f64,
    pub min_saccade_ms: usize,
    pub min_fixation_ms: usize,
    pub merge_gap_ms: usize,
    pub merge_distance_deg: f64,
}

impl Default for EventParams {
    fn default() -> Self {
        Self {
            open_deg_s: 45.0,
            close_deg_s: 25.0,
            min_saccade_ms: 10,
            min_fixation_ms: 50,
            merge_gap_ms: 75,
            merge_distance_deg: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Fixation,
    Saccade,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Fixation => "Fix",
            EventKind::Saccade => "Sac",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    H,
    V,
    R,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::H, Channel::V, Channel::R];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::H => "H",
            Channel::V => "V",
            Channel::R => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

macro_rules! measures {
    ($($name:ident),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum Measure { $($name),* }

        impl Measure {
            pub const ALL: &'static [Measure] = &[$(Measure::$name),*];

            pub fn as_str(self) -> &'static str {
                match self { $(Measure::$name => stringify!($name)),* }
            }
        }
    };
}

measures!(
    Dur, Ampl, PkVel, MnVel, PkAcc, PkDec, VelProfMn, VelProfMd, VelProfSD, AccProfMn, DriftDisp,
    DriftVel, PosSD, PosRange,
);

impl Measure {
    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-channel value table; every measure is defined for every channel
/// (`Dur` carries the same value in all three).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMeasures(Vec<[f64; 3]>);

impl EventMeasures {
    pub fn get(&self, m: Measure, c: Channel) -> f64 {
        self.0[m as usize][c as usize]
    }

    fn set(&mut self, m: Measure, vals: [f64; 3]) {
        self.0[m as usize] = vals;
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

/// Half-open sample range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub start_ms: usize,
    pub end_ms: usize,
    pub measures: EventMeasures,
}

impl Event {
    pub fn span(&self) -> Span {
        Span {
            start: self.start_ms,
            end: self.end_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub key: WindowKey,
    pub events: Vec<Event>,
    pub unclassified: Vec<Span>,
    /// Window length in samples.
    pub len: usize,
}

impl Segmentation {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Checks that events and unclassified spans tile `[0, len)` without
    /// overlap.
    pub fn check_tiling(&self) -> Result<()> {
        let mut spans: Vec<Span> = self.events.iter().map(Event::span).collect();
        spans.extend(&self.unclassified);
        spans.sort();
        let mut cursor = 0;
        for s in spans {
            if s.start != cursor || s.end <= s.start {
                return Err(Error::Integrity(format!(
                    "{}: span {}..{} breaks tiling at {cursor}",
                    self.key, s.start, s.end
                )));
            }
            cursor = s.end;
        }
        if cursor != self.len {
            return Err(Error::Integrity(format!(
                "{}: spans end at {cursor}, window has {} samples",
                self.key, self.len
            )));
        }
        Ok(())
    }
}

fn channel_values(v: &Signal2, span: Span) -> [Vec<f64>; 3] {
    let r = span.start..span.end;
    [
        v.h[r.clone()].iter().map(|x| x.abs()).collect(),
        v.v[r.clone()].iter().map(|x| x.abs()).collect(),
        v.h[r.clone()].iter().zip(&v.v[r]).map(|(a, b)| a.hypot(*b)).collect(),
    ]
}

fn per_channel(f: impl Fn(usize) -> f64) -> [f64; 3] {
    [f(0), f(1), f(2)]
}

/// Measures of one span. `v` is velocity (deg/s), `p` position (deg).
pub fn event_measures(span: Span, v: &Signal2, p: &Signal2) -> EventMeasures {
    assert!(span.end <= v.len() && span.end <= p.len() && !span.is_empty());
    let n = p.len();
    let dur_s = span.len() as f64 * DT;
    let last = span.end.min(n - 1);
    let dh = p.h[last] - p.h[span.start];
    let dv = p.v[last] - p.v[span.start];
    let ampl = [dh.abs(), dv.abs(), dh.hypot(dv)];

    let speeds = channel_values(v, span);
    let diffs: Vec<Vec<f64>> = speeds
        .iter()
        .map(|s| s.windows(2).map(|w| (w[1] - w[0]) / DT).collect())
        .collect();

    let ph = &p.h[span.start..span.end];
    let pv = &p.v[span.start..span.end];
    let (sd_h, sd_v) = (std_dev(ph), std_dev(pv));
    let range = |x: &[f64]| {
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        hi - lo
    };
    let (rg_h, rg_v) = (range(ph), range(pv));

    let mut m = EventMeasures(vec![[0.0; 3]; Measure::ALL.len()]);
    m.set(Measure::Dur, [span.len() as f64; 3]);
    m.set(Measure::Ampl, ampl);
    m.set(Measure::DriftDisp, ampl);
    m.set(Measure::MnVel, ampl.map(|a| a / dur_s));
    m.set(Measure::DriftVel, ampl.map(|a| a / dur_s));
    m.set(Measure::PkVel, per_channel(|c| speeds[c].iter().copied().fold(0.0, f64::max)));
    m.set(Measure::PkAcc, per_channel(|c| diffs[c].iter().copied().fold(0.0, f64::max)));
    m.set(Measure::PkDec, per_channel(|c| diffs[c].iter().map(|d| -d).fold(0.0, f64::max) + 0.0));
    m.set(Measure::VelProfMn, per_channel(|c| mean(&speeds[c])));
    m.set(Measure::VelProfMd, per_channel(|c| median(&speeds[c]).unwrap_or(0.0)));
    m.set(Measure::VelProfSD, per_channel(|c| std_dev(&speeds[c])));
    m.set(
        Measure::AccProfMn,
        per_channel(|c| mean(&diffs[c].iter().map(|d| d.abs()).collect::<Vec<_>>())),
    );
    m.set(Measure::PosSD, [sd_h, sd_v, sd_h.hypot(sd_v)]);
    m.set(Measure::PosRange, [rg_h, rg_v, rg_h.hypot(rg_v)]);
    m
}

/// Raw hysteresis spans of resultant speed.
fn hysteresis(speed: &[f64], open: f64, close: f64) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &s) in speed.iter().enumerate() {
        match start {
            None if s >= open => start = Some(i),
            Some(b) if s < close => {
                out.push(Span { start: b, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(b) = start {
        out.push(Span { start: b, end: speed.len() });
    }
    out
}

fn centroid(p: &Signal2, s: Span) -> (f64, f64) {
    (mean(&p.h[s.start..s.end]), mean(&p.v[s.start..s.end]))
}

/// Labels every sample as fixation, saccade or unclassified.
pub fn segment_signals(key: WindowKey, v: &Signal2, p: &Signal2, params: &EventParams) -> Segmentation {
    let n = v.len();
    assert_eq!(n, p.len(), "velocity and position lengths differ");
    let speed = v.magnitude();
    let saccades: Vec<Span> = hysteresis(&speed, params.open_deg_s, params.close_deg_s)
        .into_iter()
        .filter(|s| s.len() >= params.min_saccade_ms)
        .collect();

    // Alternate fixation candidates and saccades in time order.
    let mut spans: Vec<(EventKind, Span)> = Vec::new();
    let mut cursor = 0;
    for s in &saccades {
        if s.start > cursor {
            spans.push((EventKind::Fixation, Span { start: cursor, end: s.start }));
        }
        spans.push((EventKind::Saccade, *s));
        cursor = s.end;
    }
    if cursor < n {
        spans.push((EventKind::Fixation, Span { start: cursor, end: n }));
    }

    // Merge F S F triples where the saccade is short and the fixations sit
    // close together.
    let mut merged: Vec<(EventKind, Span)> = Vec::with_capacity(spans.len());
    let mut i = 0;
    while i < spans.len() {
        let cur = spans[i];
        if cur.0 == EventKind::Saccade && cur.1.len() < params.merge_gap_ms && i + 1 < spans.len() {
            if let (Some(&(EventKind::Fixation, before)), (EventKind::Fixation, after)) =
                (merged.last(), spans[i + 1])
            {
                let (a, b) = (centroid(p, before), centroid(p, after));
                if (a.0 - b.0).hypot(a.1 - b.1) < params.merge_distance_deg {
                    merged.pop();
                    merged.push((EventKind::Fixation, Span { start: before.start, end: after.end }));
                    i += 2;
                    continue;
                }
            }
        }
        merged.push(cur);
        i += 1;
    }

    let mut events = Vec::new();
    let mut unclassified = Vec::new();
    for (kind, span) in merged {
        if kind == EventKind::Fixation && span.len() < params.min_fixation_ms {
            unclassified.push(span);
            continue;
        }
        events.push(Event {
            kind,
            start_ms: span.start,
            end_ms: span.end,
            measures: event_measures(span, v, p),
        });
    }
    Segmentation {
        key,
        events,
        unclassified,
        len: n,
    }
}

/// Segments a gap-free window using central-difference velocity.
pub fn segment(w: &GazeWindow, params: &EventParams) -> Segmentation {
    let v = position_to_velocity(w);
    segment_signals(*w.key(), &v, &w.positions(), params)
}

fn measure_columns() -> Vec<String> {
    let mut cols = Vec::new();
    for m in Measure::ALL {
        for c in Channel::ALL {
            cols.push(format!("{}_{}", m.as_str(), c.as_str()));
        }
    }
    cols
}

/// Writes `window_key,kind,start_ms,end_ms,<measure>_<channel>...` rows.
pub fn write_segmentations<W: Write>(mut out: W, segs: &[Segmentation]) -> Result<()> {
    let io = |e| Error::io("segmentation CSV", e);
    writeln!(out, "window_key,kind,start_ms,end_ms,{}", measure_columns().join(",")).map_err(io)?;
    for seg in segs {
        for e in &seg.events {
            write!(out, "{},{},{},{}", seg.key, e.kind, e.start_ms, e.end_ms).map_err(io)?;
            for m in Measure::ALL {
                for c in Channel::ALL {
                    write!(out, ",{}", e.measures.get(*m, c)).map_err(io)?;
                }
            }
            writeln!(out).map_err(io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze::{integrate, RecordKey, Task};

    fn key() -> WindowKey {
        WindowKey {
            record: RecordKey {
                subject_id: 1,
                session: 1,
                round: 1,
                task: Task::Hss,
            },
            window_index: 0,
        }
    }

    fn from_velocity(vh: Vec<f64>) -> (Signal2, Signal2) {
        let n = vh.len();
        let v = Signal2 { h: vh, v: vec![0.0; n] };
        let p = Signal2 {
            h: integrate(&v.h, 0.0),
            v: vec![0.0; n],
        };
        (v, p)
    }

    #[test]
    fn constant_window_is_one_fixation() {
        let p = Signal2 { h: vec![2.0; 5000], v: vec![-1.0; 5000] };
        let v = Signal2::zeros(5000);
        let seg = segment_signals(key(), &v, &p, &EventParams::default());
        assert_eq!(seg.events.len(), 1);
        assert_eq!(seg.events[0].kind, EventKind::Fixation);
        assert_eq!(seg.events[0].span(), Span { start: 0, end: 5000 });
        assert!(seg.unclassified.is_empty());
        seg.check_tiling().unwrap();
        let m = &seg.events[0].measures;
        for c in Channel::ALL {
            assert_eq!(m.get(Measure::PkVel, c), 0.0);
            assert_eq!(m.get(Measure::VelProfMn, c), 0.0);
            assert_eq!(m.get(Measure::DriftDisp, c), 0.0);
        }
    }

    #[test]
    fn still_move_still() {
        let mut vh = vec![0.0; 500];
        vh.extend(vec![200.0; 100]);
        vh.extend(vec![0.0; 500]);
        let (v, p) = from_velocity(vh);
        let seg = segment_signals(key(), &v, &p, &EventParams::default());
        let kinds: Vec<_> = seg.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [EventKind::Fixation, EventKind::Saccade, EventKind::Fixation]);
        assert_eq!(seg.events[1].span(), Span { start: 500, end: 600 });
        seg.check_tiling().unwrap();
    }

    #[test]
    fn constant_velocity_saccade_measures() {
        let mut vh = vec![0.0; 100];
        vh.extend(vec![100.0; 40]);
        vh.extend(vec![0.0; 100]);
        let (v, p) = from_velocity(vh);
        let m = event_measures(Span { start: 100, end: 140 }, &v, &p);
        assert!((m.get(Measure::Ampl, Channel::R) - 4.0).abs() < 1e-12);
        assert!((m.get(Measure::MnVel, Channel::R) - 100.0).abs() < 1e-9);
        assert_eq!(m.get(Measure::PkVel, Channel::R), 100.0);
        assert_eq!(m.get(Measure::Dur, Channel::R), 40.0);
        assert_eq!(m.get(Measure::Ampl, Channel::V), 0.0);
    }

    #[test]
    fn short_bursts_are_dropped_and_short_fixations_unclassified() {
        let mut vh = vec![0.0; 300];
        vh.extend(vec![100.0; 5]); // too short for a saccade
        vh.extend(vec![0.0; 300]);
        vh.extend(vec![300.0; 30]);
        vh.extend(vec![0.0; 20]); // too short for a fixation
        vh.extend(vec![-300.0; 30]);
        vh.extend(vec![0.0; 300]);
        let (v, p) = from_velocity(vh);
        let seg = segment_signals(key(), &v, &p, &EventParams::default());
        seg.check_tiling().unwrap();
        assert_eq!(seg.count(EventKind::Saccade), 2);
        assert_eq!(seg.count(EventKind::Fixation), 2);
        assert_eq!(seg.unclassified, vec![Span { start: 635, end: 655 }]);
    }

    #[test]
    fn nearby_fixations_merge_across_short_saccade() {
        // A 10 ms step of 0.45 deg between two fixations.
        let mut vh = vec![0.0; 300];
        vh.extend(vec![45.0; 10]);
        vh.extend(vec![0.0; 300]);
        let (v, p) = from_velocity(vh);
        let seg = segment_signals(key(), &v, &p, &EventParams::default());
        seg.check_tiling().unwrap();
        assert_eq!(seg.count(EventKind::Saccade), 0, "{:?}", seg.events);
        assert_eq!(seg.count(EventKind::Fixation), 1);
        assert_eq!(seg.events[0].span(), Span { start: 0, end: 610 });

        let strict = EventParams { merge_distance_deg: 0.5, merge_gap_ms: 10, ..Default::default() };
        let seg = segment_signals(key(), &v, &p, &strict);
        assert_eq!(seg.count(EventKind::Saccade), 1);
    }

    #[test]
    fn amplitude_bounded_by_path_length() {
        let vh: Vec<f64> = (0..400).map(|i| 80.0 * ((i as f64) / 13.0).sin() + 30.0).collect();
        let (v, p) = from_velocity(vh);
        let seg = segment_signals(key(), &v, &p, &EventParams::default());
        seg.check_tiling().unwrap();
        for e in &seg.events {
            let last = e.end_ms.min(p.len() - 1);
            let path: f64 = (e.start_ms..last)
                .map(|i| (p.h[i + 1] - p.h[i]).hypot(p.v[i + 1] - p.v[i]))
                .sum();
            assert!(e.measures.get(Measure::Ampl, Channel::R) <= path + 1e-12);
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let mut vh = vec![0.0; 200];
        vh.extend(vec![200.0; 50]);
        vh.extend(vec![0.0; 200]);
        let (v, p) = from_velocity(vh);
        let seg = segment_signals(key(), &v, &p, &EventParams::default());
        let mut buf = Vec::new();
        write_segmentations(&mut buf, &[seg]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("window_key,kind,start_ms,end_ms,Dur_H,Dur_V,Dur_R,Ampl_H"));
        assert_eq!(lines.len(), 4);
        assert!(lines[2].contains(",Sac,200,250,"));
        let cols = lines[0].split(',').count();
        assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));
    }
}
