//! Platt score calibration and max-out fusion of modalities.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("Newton iteration did not converge (gradient norm {grad_norm:e})")]
    NonConvergence { grad_norm: f64 },
    #[error("no score for either modality")]
    BothAbsent,
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
}

/// `p = 1 / (1 + exp(a s + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub a: f64,
    pub b: f64,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub label: Option<bool>,
}

pub fn platt_apply(s: f64, params: &CalibrationParams) -> f64 {
    let z = params.a * s + params.b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean negative log-likelihood of targets under `1 / (1 + exp(a s + b))`.
pub fn platt_nll(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let z = a * s + b;
            softplus(z) - (1.0 - t) * z
        })
        .sum::<f64>()
        / scores.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattFitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub min_step: f64,
    pub sigma: f64,
}

impl Default for PlattFitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
            min_step: 1e-10,
            sigma: 1e-12,
        }
    }
}

pub fn platt_fit(records: &[ScoreRecord], modality: Modality) -> Result<CalibrationParams, CalibrationError> {
    platt_fit_with(records, modality, &PlattFitOptions::default())
}

/// Newton's method with backtracking on the mean NLL, using Platt's
/// smoothed targets `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)`.
pub fn platt_fit_with(records: &[ScoreRecord], modality: Modality, opts: &PlattFitOptions) -> Result<CalibrationParams, CalibrationError> {
    let labeled: Vec<(f64, bool)> = records.iter().filter_map(|r| r.label.map(|l| (r.score, l))).collect();
    let positives = labeled.iter().filter(|(_, l)| *l).count();
    let negatives = labeled.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CalibrationError::SingleClass { positives, negatives });
    }
    let hi = (positives as f64 + 1.0) / (positives as f64 + 2.0);
    let lo = 1.0 / (negatives as f64 + 2.0);
    let scores: Vec<f64> = labeled.iter().map(|(s, _)| *s).collect();
    let targets: Vec<f64> = labeled.iter().map(|(_, l)| if *l { hi } else { lo }).collect();
    let n = scores.len() as f64;

    let mut a = 0.0;
    let mut b = ((negatives as f64 + 1.0) / (positives as f64 + 1.0)).ln();
    let mut f = platt_nll(&scores, &targets, a, b);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let (mut g1, mut g2, mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = platt_apply(s, &CalibrationParams { a, b, modality });
            let d1 = t - p;
            let d2 = p * (1.0 - p);
            g1 += s * d1;
            g2 += d1;
            h11 += s * s * d2;
            h12 += s * d2;
            h22 += d2;
        }
        let (g1, g2) = (g1 / n, g2 / n);
        let (h11, h12, h22) = (h11 / n + opts.sigma, h12 / n, h22 / n + opts.sigma);
        grad_norm = g1.hypot(g2);
        if grad_norm < opts.tolerance {
            return Ok(CalibrationParams { a, b, modality });
        }
        let det = h11 * h22 - h12 * h12;
        let da = -(h22 * g1 - h12 * g2) / det;
        let db = -(-h12 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = platt_nll(&scores, &targets, na, nb);
            // round-off slack
            if nf <= f + 1e-4 * step * gd + 1e-14 * f.abs().max(1.0) {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step /= 2.0;
            if step < opts.min_step {
                return Err(CalibrationError::NonConvergence { grad_norm });
            }
        }
    }
    Err(CalibrationError::NonConvergence { grad_norm })
}

/// The larger of the available calibrated probabilities.
pub fn max_out(audio: Option<f64>, video: Option<f64>) -> Result<f64, CalibrationError> {
    match (audio, video) {
        (Some(a), Some(v)) => Ok(a.max(v)),
        (Some(x), None) | (None, Some(x)) => Ok(x),
        (None, None) => Err(CalibrationError::BothAbsent),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    pub fraction_positive: f64,
    pub count: usize,
}

/// Reliability table over equal-width bins of the calibrated probability.
/// Unlabeled records are ignored.
pub fn calibration_curve(records: &[ScoreRecord], params: &CalibrationParams, bins: usize) -> Vec<CalibrationBin> {
    assert!(bins >= 1, "at least one bin");
    let mut sum_p = vec![0.0; bins];
    let mut sum_y = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for r in records {
        let Some(label) = r.label else { continue };
        let p = platt_apply(r.score, params);
        let k = ((p * bins as f64) as usize).min(bins - 1);
        sum_p[k] += p;
        sum_y[k] += if label { 1.0 } else { 0.0 };
        count[k] += 1;
    }
    (0..bins)
        .map(|k| {
            let c = count[k];
            let avg = |s: f64| if c == 0 { 0.0 } else { s / c as f64 };
            CalibrationBin {
                lower: k as f64 / bins as f64,
                upper: (k + 1) as f64 / bins as f64,
                mean_predicted: avg(sum_p[k]),
                fraction_positive: avg(sum_y[k]),
                count: c,
            }
        })
        .collect()
}

pub fn write_calibration_csv<W: Write>(mut w: W, curve: &[CalibrationBin]) -> std::io::Result<()> {
    writeln!(w, "bin_lower,bin_upper,mean_predicted,fraction_positive,count")?;
    for b in curve {
        writeln!(w, "{},{},{},{},{}", b.lower, b.upper, b.mean_predicted, b.fraction_positive, b.count)?;
    }
    Ok(())
}

/// Reads `video_id;score[;label]` lines. Blank lines and a header line whose
/// score column is not numeric are skipped.
pub fn read_scores<R: BufRead>(reader: R) -> Result<Vec<ScoreRecord>, CalibrationError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| CalibrationError::Format { line: i + 1, message };
        let parts: Vec<&str> = line.split(';').map(str::trim).collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(err(format!("expected 2 or 3 ';'-separated fields, found {}", parts.len())));
        }
        let score: f64 = match parts[1].parse() {
            Ok(s) => s,
            Err(_) if i == 0 && out.is_empty() => continue,
            Err(_) => return Err(err(format!("score {:?} is not a number", parts[1]))),
        };
        if !(0.0..=1.0).contains(&score) {
            return Err(err(format!("score {score} outside [0, 1]")));
        }
        let label = match parts.get(2) {
            None => None,
            Some(&"0") => Some(false),
            Some(&"1") => Some(true),
            Some(other) => return Err(err(format!("label {other:?} is not 0 or 1"))),
        };
        let id = parts[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(CalibrationError::DuplicateId(id));
        }
        out.push(ScoreRecord { id, score, label });
    }
    Ok(out)
}

pub fn write_scores<W: Write>(mut w: W, records: &[ScoreRecord]) -> std::io::Result<()> {
    for r in records {
        match r.label {
            Some(l) => writeln!(w, "{};{};{}", r.id, r.score, u8::from(l))?,
            None => writeln!(w, "{};{}", r.id, r.score)?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedRecord {
    pub id: String,
    pub audio: Option<f64>,
    pub video: Option<f64>,
    pub fused: f64,
}

/// Calibrates each side and max-outs on the union of ids, in first-seen
/// order (audio file first). Returns the fused records and the number of ids
/// present on only one side.
pub fn fuse(
    audio: &[ScoreRecord],
    video: &[ScoreRecord],
    audio_cal: Option<&CalibrationParams>,
    video_cal: Option<&CalibrationParams>,
) -> Result<(Vec<FusedRecord>, usize), CalibrationError> {
    let cal = |r: &ScoreRecord, p: Option<&CalibrationParams>| p.map_or(r.score, |p| platt_apply(r.score, p));
    let mut order: Vec<String> = Vec::new();
    let mut a_map = std::collections::HashMap::new();
    let mut v_map = std::collections::HashMap::new();
    for r in audio {
        if a_map.insert(r.id.clone(), cal(r, audio_cal)).is_some() {
            return Err(CalibrationError::DuplicateId(r.id.clone()));
        }
        order.push(r.id.clone());
    }
    for r in video {
        if v_map.insert(r.id.clone(), cal(r, video_cal)).is_some() {
            return Err(CalibrationError::DuplicateId(r.id.clone()));
        }
        if !a_map.contains_key(&r.id) {
            order.push(r.id.clone());
        }
    }
    let mut one_sided = 0;
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let a = a_map.get(&id).copied();
        let v = v_map.get(&id).copied();
        if a.is_none() || v.is_none() {
            one_sided += 1;
        }
        out.push(FusedRecord {
            fused: max_out(a, v)?,
            id,
            audio: a,
            video: v,
        });
    }
    Ok((out, one_sided))
}
