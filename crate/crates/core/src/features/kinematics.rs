//! Lip-landmark geometry and motion features.

use super::{LandmarkFrame, LandmarkSequence, LipConfig};

/// Mouth aspect ratio plus a flag set when the mouth width collapses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mar {
    pub value: f64,
    pub degenerate: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Vertical opening over horizontal width, in normalized coordinates.
pub fn mouth_aspect_ratio(frame: &LandmarkFrame, lips: &LipConfig) -> Mar {
    let p = &frame.points;
    let width = dist(p[lips.left], p[lips.right]);
    if width < 1e-9 {
        return Mar {
            value: 0.0,
            degenerate: true,
        };
    }
    Mar {
        value: dist(p[lips.top], p[lips.bottom]) / width,
        degenerate: false,
    }
}

/// Per-frame motion series, all of length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub jerk: Vec<f64>,
    pub jitter: Vec<f64>,
}

/// Half-width of the centred line-fit window (5 frames).
pub const JITTER_HALF_WINDOW: usize = 2;

/// RMS residual of the least-squares line through `(i, ys[i])`.
pub(crate) fn line_fit_rms(ys: &[f64]) -> f64 {
    let n = ys.len();
    if n < 3 {
        return 0.0;
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let sse: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let r = y - y_mean - slope * (i as f64 - x_mean);
            r * r
        })
        .sum();
    (sse / nf).sqrt()
}

/// Velocity, acceleration, jerk and jitter of the lip landmarks.
///
/// Velocity is the mean per-landmark displacement from the previous frame;
/// acceleration and jerk are its successive differences. Jitter is the RMS
/// residual of a per-coordinate line fit over a centred window that is
/// truncated at the sequence ends, averaged over lip landmarks and both
/// coordinates.
pub fn kinematics(seq: &LandmarkSequence, lips: &LipConfig) -> Kinematics {
    kinematics_with_window(seq, lips, JITTER_HALF_WINDOW)
}

pub fn kinematics_with_window(seq: &LandmarkSequence, lips: &LipConfig, half_window: usize) -> Kinematics {
    let t_len = seq.frames.len();
    let idx = &lips.lips;
    let mut velocity = vec![0.0; t_len];
    for t in 1..t_len {
        let cur = &seq.frames[t].points;
        let prev = &seq.frames[t - 1].points;
        let total: f64 = idx.iter().map(|&i| dist(cur[i], prev[i])).sum();
        velocity[t] = total / idx.len() as f64;
    }
    let mut acceleration = vec![0.0; t_len];
    for t in 1..t_len {
        acceleration[t] = velocity[t] - velocity[t - 1];
    }
    let mut jerk = vec![0.0; t_len];
    for t in 2..t_len {
        jerk[t] = acceleration[t] - acceleration[t - 1];
    }

    let mut jitter = vec![0.0; t_len];
    let mut ys = Vec::with_capacity(2 * half_window + 1);
    for (t, out) in jitter.iter_mut().enumerate() {
        let lo = t.saturating_sub(half_window);
        let hi = (t + half_window).min(t_len - 1);
        let mut acc = 0.0;
        for &i in idx {
            for coord in 0..2 {
                ys.clear();
                ys.extend((lo..=hi).map(|u| seq.frames[u].points[i][coord]));
                acc += line_fit_rms(&ys);
            }
        }
        *out = acc / (2 * idx.len()) as f64;
    }

    Kinematics {
        velocity,
        acceleration,
        jerk,
        jitter,
    }
}
