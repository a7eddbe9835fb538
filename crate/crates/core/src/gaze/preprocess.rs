use super::{GazeWindow, IdentityRemovedSignal, Signal2, VelocitySignal, DT, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::util::quantile_sorted;

/// Longest invalid run that is bridged by interpolation.
pub const MAX_GAP_MS: usize = 75;
/// Windows with a larger invalid fraction are dropped.
pub const MAX_INVALID_FRACTION: f64 = 0.10;
/// Half-width (samples) of the 51-tap, 50 ms zero-phase moving average.
pub const IDENTITY_LOWPASS_HALF_WIDTH: usize = 25;
/// Lower bound on the normalizing speed, deg/s.
pub const SPEED_FLOOR_DEG_S: f64 = 1.0;
const NORMALIZATION_PERCENTILE: f64 = 0.95;

/// Central difference with one-sided differences at both ends, in units per
/// second.
pub fn differentiate(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut v = Vec::with_capacity(n);
            v.push((p[1] - p[0]) / DT);
            for i in 1..n - 1 {
                v.push((p[i + 1] - p[i - 1]) / (2.0 * DT));
            }
            v.push((p[n - 1] - p[n - 2]) / DT);
            v
        }
    }
}

/// Exact discrete inverse of [`differentiate`] anchored at `p0`.
///
/// The first step inverts the forward difference, every later sample inverts
/// the central difference (`p[i+1] = p[i-1] + 2·dt·v[i]`), so interior
/// velocities survive a round trip up to rounding.
pub fn integrate(v: &[f64], p0: f64) -> Vec<f64> {
    let n = v.len();
    let mut p = Vec::with_capacity(n);
    if n == 0 {
        return p;
    }
    p.push(p0);
    if n > 1 {
        p.push(p0 + DT * v[0]);
    }
    for i in 1..n.saturating_sub(1) {
        let next = p[i - 1] + 2.0 * DT * v[i];
        p.push(next);
    }
    p
}

pub fn position_to_velocity(w: &GazeWindow) -> VelocitySignal {
    let pos = w.positions();
    VelocitySignal(Signal2 {
        h: differentiate(&pos.h),
        v: differentiate(&pos.v),
    })
}

pub fn velocity_to_position(v: &VelocitySignal, p0: (f64, f64)) -> Signal2 {
    Signal2 {
        h: integrate(&v.h, p0.0),
        v: integrate(&v.v, p0.1),
    }
}

/// Bridges invalid runs by linear interpolation between the neighbouring
/// valid samples. Runs touching a window edge hold the nearest valid value.
/// Validity flags are left untouched.
pub fn interpolate_invalid(w: &GazeWindow) -> Result<GazeWindow> {
    let n = w.samples().len();
    let invalid = w.invalid_count();
    if invalid as f64 > MAX_INVALID_FRACTION * n as f64 {
        return Err(Error::WindowRejected(format!(
            "{}: {invalid} of {n} samples invalid",
            w.key()
        )));
    }
    let mut out = w.clone();
    if invalid == 0 {
        return Ok(out);
    }
    let samples = out.samples_mut();
    let mut i = 0;
    while i < n {
        if samples[i].valid {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !samples[i].valid {
            i += 1;
        }
        let end = i;
        let run = end - start;
        if run > MAX_GAP_MS {
            return Err(Error::WindowRejected(format!(
                "{}: invalid run of {run} ms at t={} exceeds {MAX_GAP_MS} ms",
                w.key(),
                samples[start].t_ms
            )));
        }
        let before = start.checked_sub(1).map(|k| samples[k]);
        let after = (end < n).then(|| samples[end]);
        for k in start..end {
            let (x, y) = match (before, after) {
                (Some(a), Some(b)) => {
                    let frac = (k - (start - 1)) as f64 / (end - (start - 1)) as f64;
                    (a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac)
                }
                (Some(a), None) => (a.x, a.y),
                (None, Some(b)) => (b.x, b.y),
                (None, None) => unreachable!("fraction check guarantees a valid sample"),
            };
            samples[k].x = x;
            samples[k].y = y;
        }
    }
    Ok(out)
}

/// Centered moving average over `2·half_width + 1` taps. Near the edges the
/// window shrinks symmetrically so the filter stays zero-phase.
pub fn moving_average_zero_phase(x: &[f64], half_width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &a in x {
        acc += a;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let h = half_width.min(i).min(n - 1 - i);
            let lo = i - h;
            let hi = i + h + 1;
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Frequency response of an `taps`-point centered moving average at 1 kHz.
pub fn moving_average_gain(freq_hz: f64, taps: usize) -> f64 {
    let w = std::f64::consts::PI * freq_hz / SAMPLE_RATE_HZ;
    if w.sin().abs() < 1e-15 {
        return 1.0;
    }
    (w * taps as f64).sin() / (taps as f64 * w.sin())
}

/// Identity-removed conditioning signal: 50 ms zero-phase moving average per
/// channel, then both channels divided by the 95th-percentile speed (floored
/// at [`SPEED_FLOOR_DEG_S`]).
pub fn identity_removal(v: &VelocitySignal) -> IdentityRemovedSignal {
    let smooth = Signal2 {
        h: moving_average_zero_phase(&v.h, IDENTITY_LOWPASS_HALF_WIDTH),
        v: moving_average_zero_phase(&v.v, IDENTITY_LOWPASS_HALF_WIDTH),
    };
    let mut speed = smooth.magnitude();
    speed.sort_by(f64::total_cmp);
    let p95 = quantile_sorted(&speed, NORMALIZATION_PERCENTILE).unwrap_or(0.0);
    let scale = p95.max(SPEED_FLOOR_DEG_S);
    IdentityRemovedSignal(smooth.scale(1.0 / scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze::{RecordKey, Task, WindowKey, WINDOW_LEN};
    use std::f64::consts::PI;

    fn key() -> WindowKey {
        WindowKey {
            record: RecordKey {
                subject_id: 3,
                session: 1,
                round: 2,
                task: Task::Ran,
            },
            window_index: 0,
        }
    }

    fn window_from(x: impl Fn(usize) -> f64, y: impl Fn(usize) -> f64) -> GazeWindow {
        let pos = Signal2 {
            h: (0..WINDOW_LEN).map(&x).collect(),
            v: (0..WINDOW_LEN).map(&y).collect(),
        };
        GazeWindow::from_positions(key(), 0.0, &pos).unwrap()
    }

    #[test]
    fn constant_position_has_zero_velocity() {
        let v = position_to_velocity(&window_from(|_| 3.0, |_| -2.0));
        assert!(v.h.iter().chain(&v.v).all(|&a| a == 0.0));
    }

    #[test]
    fn linear_ramp_gives_unit_velocity() {
        let v = position_to_velocity(&window_from(|i| 0.001 * i as f64, |_| 0.0));
        for &a in &v.h[1..WINDOW_LEN - 1] {
            assert!((a - 1.0).abs() < 1e-9, "{a}");
        }
    }

    #[test]
    fn sinusoid_velocity_matches_analytic_derivative() {
        // x(t) = sin(2π·2t): the interior central difference is within 0.1 %
        // of the analytic derivative 4π·cos(4πt) (relative to its amplitude).
        let w = window_from(|i| (2.0 * PI * 2.0 * i as f64 * DT).sin(), |_| 0.0);
        let v = position_to_velocity(&w);
        let amp = 4.0 * PI;
        for i in 1..WINDOW_LEN - 1 {
            let t = i as f64 * DT;
            let exact = amp * (4.0 * PI * t).cos();
            assert!((v.h[i] - exact).abs() <= 1e-3 * amp, "i={i}");
        }
    }

    #[test]
    fn zero_velocity_integrates_to_anchor() {
        let v = VelocitySignal(Signal2::zeros(WINDOW_LEN));
        let p = velocity_to_position(&v, (3.0, 2.0));
        assert!(p.h.iter().all(|&a| a == 3.0));
        assert!(p.v.iter().all(|&a| a == 2.0));
    }

    #[test]
    fn constant_velocity_integrates_linearly() {
        let v = VelocitySignal(Signal2 {
            h: vec![1.0; WINDOW_LEN],
            v: vec![0.0; WINDOW_LEN],
        });
        let p = velocity_to_position(&v, (0.0, 0.0));
        // The last sample sits at t = 4.999 s; the 5 s window end is one
        // further sample interval away.
        let last = p.h[WINDOW_LEN - 1];
        assert!((last - 4.999).abs() < 1e-9, "{last}");
        assert!((last + DT * v.h[WINDOW_LEN - 1] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn velocity_round_trip_is_exact_in_interior() {
        let h: Vec<f64> = (0..WINDOW_LEN)
            .map(|i| {
                let t = i as f64 * DT;
                30.0 * (2.0 * PI * 1.3 * t).sin() + 12.0 * (2.0 * PI * 4.1 * t + 0.4).cos()
            })
            .collect();
        let vv: Vec<f64> = (0..WINDOW_LEN)
            .map(|i| 8.0 * (2.0 * PI * 0.7 * i as f64 * DT).cos())
            .collect();
        let v = VelocitySignal(Signal2 { h, v: vv });
        let p = velocity_to_position(&v, (1.0, -1.0));
        let w = GazeWindow::from_positions(key(), 0.0, &p).unwrap();
        let back = position_to_velocity(&w);
        for i in 1..WINDOW_LEN - 1 {
            assert!((back.h[i] - v.h[i]).abs() < 1e-6);
            assert!((back.v[i] - v.v[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn position_round_trip_for_smooth_window() {
        let w = window_from(
            |i| 5.0 * (2.0 * PI * 0.5 * i as f64 * DT).sin(),
            |i| 2.0 * (2.0 * PI * 0.25 * i as f64 * DT).cos(),
        );
        let v = position_to_velocity(&w);
        let p = w.positions();
        let back = velocity_to_position(&v, (p.h[0], p.v[0]));
        assert!(back.max_abs_diff(&p) < 1e-4);
    }

    fn with_invalid(w: &GazeWindow, range: std::ops::Range<usize>) -> GazeWindow {
        let mut samples = w.samples().to_vec();
        for s in &mut samples[range] {
            s.valid = false;
            s.x = f64::NAN;
            s.y = f64::NAN;
        }
        GazeWindow::new(*w.key(), samples).unwrap()
    }

    #[test]
    fn fully_valid_window_is_unchanged() {
        let w = window_from(|i| i as f64 * 0.01, |i| (i as f64).sqrt());
        assert_eq!(interpolate_invalid(&w).unwrap(), w);
    }

    #[test]
    fn short_gap_is_bridged_on_the_line() {
        let line = |i: usize| 0.02 * i as f64 - 4.0;
        let w = window_from(line, |i| -0.01 * i as f64);
        let gappy = with_invalid(&w, 1000..1010);
        let fixed = interpolate_invalid(&gappy).unwrap();
        for (k, s) in fixed.samples().iter().enumerate() {
            assert!((s.x - line(k)).abs() < 1e-12);
            assert!((s.y + 0.01 * k as f64).abs() < 1e-12);
        }
        // flags preserved
        assert!(!fixed.samples()[1005].valid);
    }

    #[test]
    fn long_gap_is_rejected() {
        let w = window_from(|_| 0.0, |_| 0.0);
        assert!(matches!(
            interpolate_invalid(&with_invalid(&w, 2000..2100)),
            Err(Error::WindowRejected(_))
        ));
        assert!(interpolate_invalid(&with_invalid(&w, 2000..2075)).is_ok());
        assert!(interpolate_invalid(&with_invalid(&w, 2000..2076)).is_err());
    }

    #[test]
    fn edge_gap_holds_nearest_value() {
        let w = window_from(|i| i as f64, |_| 1.0);
        let fixed = interpolate_invalid(&with_invalid(&w, 0..5)).unwrap();
        assert!(fixed.samples()[..5].iter().all(|s| s.x == 5.0));
    }

    #[test]
    fn zero_velocity_stays_zero_after_identity_removal() {
        let v0 = identity_removal(&VelocitySignal(Signal2::zeros(WINDOW_LEN)));
        assert!(v0.h.iter().chain(&v0.v).all(|&a| a == 0.0));
    }

    #[test]
    fn lowpass_attenuates_100hz_by_analytic_gain() {
        let f = 100.0;
        let x: Vec<f64> = (0..WINDOW_LEN)
            .map(|i| (2.0 * PI * f * i as f64 * DT + 0.3).sin())
            .collect();
        let y = moving_average_zero_phase(&x, IDENTITY_LOWPASS_HALF_WIDTH);
        let gain = moving_average_gain(f, 2 * IDENTITY_LOWPASS_HALF_WIDTH + 1);
        let h = IDENTITY_LOWPASS_HALF_WIDTH;
        for i in h..WINDOW_LEN - h {
            assert!((y[i] - gain * x[i]).abs() < 1e-9, "i={i}");
        }
        assert!(gain.abs() < 0.02);
    }

    #[test]
    fn identity_removal_is_scale_invariant() {
        let h: Vec<f64> = (0..WINDOW_LEN)
            .map(|i| 40.0 * (2.0 * PI * 1.5 * i as f64 * DT).sin())
            .collect();
        let v = VelocitySignal(Signal2 {
            v: h.iter().map(|a| 0.5 * a).collect(),
            h,
        });
        let a = identity_removal(&v);
        let b = identity_removal(&VelocitySignal(v.scale(3.0)));
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn second_lowpass_pass_is_bounded_by_analytic_attenuation() {
        let taps = 2 * IDENTITY_LOWPASS_HALF_WIDTH + 1;
        let h = IDENTITY_LOWPASS_HALF_WIDTH;
        for f in [0.5, 3.0, 12.0, 40.0] {
            let x: Vec<f64> = (0..WINDOW_LEN)
                .map(|i| (2.0 * PI * f * i as f64 * DT).sin())
                .collect();
            let once = moving_average_zero_phase(&x, h);
            let twice = moving_average_zero_phase(&once, h);
            let g = moving_average_gain(f, taps);
            let bound = (g * (1.0 - g)).abs() + 1e-9;
            for i in 2 * h..WINDOW_LEN - 2 * h {
                assert!((twice[i] - once[i]).abs() <= bound, "f={f} i={i}");
            }
        }
    }
}
