//! Reference implementations shared by the integration and acceptance tests.
//! Each one is written independently of the library code it checks.

#![allow(dead_code)]

use klassify_core::localization::Segment;
use klassify_core::metrics::EvalPair;
use klassify_core::models::TcnModel;
use klassify_core::nn::{NodeId, Tape};

// ---------------------------------------------------------------- features

pub fn gray_oracle(rgb: &[u8]) -> Vec<f64> {
    rgb.chunks(3)
        .map(|p| (p[0] as f64 * 0.299 + p[1] as f64 * 0.587 + p[2] as f64 * 0.114).round())
        .collect()
}

pub fn laplacian_variance_oracle(gray: &[f64], w: usize, h: usize) -> f64 {
    let k = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
    let mut responses = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut r = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, kv) in row.iter().enumerate() {
                    r += kv * gray[(y + dy - 1) * w + (x + dx - 1)];
                }
            }
            responses.push(r);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n
}

pub fn non_mouth_mse_oracle(a: &[u8], b: &[u8], w: usize, h: usize, roi: (usize, usize, usize, usize)) -> f64 {
    let (x0, y0, x1, y1) = roi;
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                continue;
            }
            for c in 0..3 {
                let d = a[(y * w + x) * 3 + c] as f64 - b[(y * w + x) * 3 + c] as f64;
                sum += d * d;
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// CIE formulation with the `(6/29)` constants.
pub fn lab_oracle(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |v: u8| {
        let c = v as f64 / 255.0;
        if c > 0.04045 {
            ((c + 0.055) / 1.055).powf(2.4)
        } else {
            c / 12.92
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let delta: f64 = 6.0 / 29.0;
    let f = |t: f64| {
        if t > delta.powi(3) {
            t.powf(1.0 / 3.0)
        } else {
            t / (3.0 * delta * delta) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Both ROIs resampled to the smaller width and height.
pub fn lab_shift_oracle(a: &[u8], aw: usize, ah: usize, b: &[u8], bw: usize, bh: usize) -> f64 {
    let w = aw.min(bw);
    let h = ah.min(bh);
    let pick = |img: &[u8], iw: usize, ih: usize, x: usize, y: usize| {
        let sx = ((x as f64) * iw as f64 / w as f64).floor() as usize;
        let sy = ((y as f64) * ih as f64 / h as f64).floor() as usize;
        let o = (sy * iw + sx) * 3;
        [img[o], img[o + 1], img[o + 2]]
    };
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = lab_oracle(pick(a, aw, ah, x, y));
            let q = lab_oracle(pick(b, bw, bh, x, y));
            total += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        }
    }
    total / (w * h) as f64
}

/// RMS residual of the OLS line through `(x_i, y_i)` via the normal equations.
pub fn ols_rms_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return 0.0;
    }
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (sse / n).sqrt()
}

/// `(velocity, acceleration, jerk, jitter)` by direct definition.
pub fn kinematics_oracle(tracks: &[Vec<[f64; 2]>]) -> [Vec<f64>; 4] {
    let t_len = tracks.len();
    let n_pts = tracks[0].len();
    let mut vel = vec![0.0; t_len];
    for t in 1..t_len {
        let mut s = 0.0;
        for p in 0..n_pts {
            s += (tracks[t][p][0] - tracks[t - 1][p][0]).hypot(tracks[t][p][1] - tracks[t - 1][p][1]);
        }
        vel[t] = s / n_pts as f64;
    }
    let acc: Vec<f64> = (0..t_len).map(|t| if t == 0 { 0.0 } else { vel[t] - vel[t - 1] }).collect();
    let jerk: Vec<f64> = (0..t_len).map(|t| if t < 2 { 0.0 } else { acc[t] - acc[t - 1] }).collect();
    let mut jit = vec![0.0; t_len];
    for (t, j) in jit.iter_mut().enumerate() {
        let lo = t.saturating_sub(2);
        let hi = (t + 2).min(t_len - 1);
        let xs: Vec<f64> = (lo..=hi).map(|u| u as f64).collect();
        let mut s = 0.0;
        for p in 0..n_pts {
            for c in 0..2 {
                let ys: Vec<f64> = (lo..=hi).map(|u| tracks[u][p][c]).collect();
                s += ols_rms_oracle(&xs, &ys);
            }
        }
        *j = s / (2 * n_pts) as f64;
    }
    [vel, acc, jerk, jit]
}

// ---------------------------------------------------------------- metrics

pub fn pairwise_auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = (a.end - a.start) + (b.end - b.start) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Every injective assignment of predictions (in score order) to ground
/// truth, restricted to pairs above the threshold. The matcher's protocol
/// picks, prediction by prediction, the highest IoU then lowest index; the
/// oracle reproduces that as the lexicographic maximum over all assignments.
fn best_assignment(preds: &[&Segment], truth: &[Segment], tau: f64) -> Vec<Option<usize>> {
    fn rec(
        k: usize,
        preds: &[&Segment],
        truth: &[Segment],
        tau: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<(f64, i64)>, Vec<Option<usize>>)>,
    ) {
        if k == preds.len() {
            let key: Vec<(f64, i64)> = cur
                .iter()
                .enumerate()
                .map(|(i, g)| match g {
                    Some(g) => (iou(preds[i], &truth[*g]), -(*g as i64)),
                    None => (-1.0, 0),
                })
                .collect();
            let better = match best {
                None => true,
                Some((bk, _)) => key.iter().zip(bk.iter()).find(|(a, b)| a != b).is_some_and(|(a, b)| {
                    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
                }),
            };
            if better {
                *best = Some((key, cur.clone()));
            }
            return;
        }
        cur.push(None);
        rec(k + 1, preds, truth, tau, used, cur, best);
        cur.pop();
        for g in 0..truth.len() {
            if !used[g] && iou(preds[k], &truth[g]) >= tau {
                used[g] = true;
                cur.push(Some(g));
                rec(k + 1, preds, truth, tau, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut best = None;
    rec(0, preds, truth, tau, &mut vec![false; truth.len()], &mut Vec::new(), &mut best);
    best.map(|b| b.1).unwrap_or_default()
}

/// AP by exhaustive matching and the sum-over-hits form of the envelope area.
pub fn ap_oracle(pairs: &[EvalPair], tau: f64) -> f64 {
    let mut pooled: Vec<(f64, &str, f64, bool)> = Vec::new();
    for p in pairs {
        let mut preds: Vec<&Segment> = p.predictions.iter().collect();
        preds.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.total_cmp(&b.start)));
        let assign = best_assignment(&preds, &p.truth, tau);
        for (s, a) in preds.iter().zip(assign) {
            pooled.push((s.score, &p.video_id, s.start, a.is_some()));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.total_cmp(&b.2)));
    let n_truth: usize = pairs.iter().map(|p| p.truth.len()).sum();
    let hits: Vec<bool> = pooled.iter().map(|x| x.3).collect();
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if !hits[k] {
            continue;
        }
        // envelope at rank k: best precision at any rank >= k
        let mut best: f64 = 0.0;
        let mut tp = hits[..k].iter().filter(|h| **h).count();
        for (j, h) in hits.iter().enumerate().skip(k) {
            if *h {
                tp += 1;
            }
            best = best.max(tp as f64 / (j + 1) as f64);
        }
        ap += best;
    }
    ap / n_truth as f64
}

pub fn ar_oracle(pairs: &[EvalPair], n: usize) -> f64 {
    let mut total = 0.0;
    let mut videos = 0;
    for p in pairs.iter().filter(|p| !p.truth.is_empty()) {
        let mut preds: Vec<&Segment> = p.predictions.iter().collect();
        preds.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.total_cmp(&b.start)));
        preds.truncate(n);
        let mut r = 0.0;
        for i in 0..10 {
            let tau = (50 + 5 * i) as f64 / 100.0;
            let matched = best_assignment(&preds, &p.truth, tau).iter().filter(|a| a.is_some()).count();
            r += matched as f64 / p.truth.len() as f64;
        }
        total += r / 10.0;
        videos += 1;
    }
    total / videos as f64
}

// ---------------------------------------------------------------- gradients

#[derive(Debug, Default, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
    /// Parameters whose stencil crossed a ReLU kink at every step size tried.
    pub kinked: usize,
    pub worst: String,
}

fn eval(model: &TcnModel, loss: &dyn Fn(&TcnModel, &mut Tape) -> NodeId) -> (f64, u64) {
    let mut tape = Tape::new();
    let l = loss(model, &mut tape);
    (tape.scalar(l), tape.activation_pattern())
}

/// Central differences for every parameter against the tape gradient.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(model: &mut TcnModel, loss: &dyn Fn(&TcnModel, &mut Tape) -> NodeId, h: f64, floor: f64) -> GradReport {
    let mut tape = Tape::new();
    let l = loss(model, &mut tape);
    let pattern = tape.activation_pattern();
    tape.backward(l, model.params_mut()).unwrap();
    drop(tape);
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    let mut report = GradReport::default();
    for name in names {
        let len = model.params().by_name(&name).unwrap().len();
        for i in 0..len {
            let analytic = model.params().by_name(&name).unwrap().grad[i];
            let orig = model.params().by_name(&name).unwrap().value[i];
            let mut numeric = None;
            let mut step = h;
            for _ in 0..3 {
                model.params_mut().by_name_mut(&name).unwrap().value[i] = orig + step;
                let (fp, pp) = eval(model, loss);
                model.params_mut().by_name_mut(&name).unwrap().value[i] = orig - step;
                let (fm, pm) = eval(model, loss);
                model.params_mut().by_name_mut(&name).unwrap().value[i] = orig;
                if pp == pattern && pm == pattern {
                    numeric = Some((fp - fm) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
            match numeric {
                Some(n) => {
                    let rel = (analytic - n).abs() / analytic.abs().max(n.abs()).max(floor);
                    if rel > report.max_rel {
                        report.max_rel = rel;
                        report.worst = format!("{name}[{i}] analytic {analytic:.6e} numeric {n:.6e}");
                    }
                    report.checked += 1;
                }
                None => report.kinked += 1,
            }
        }
    }
    report
}

// ---------------------------------------------------------------- corpora

use klassify_core::features::{extract_features, FeatureConfig};
use klassify_core::synth::{generate, SynthSpec};
use klassify_core::training::LabeledClip;

pub fn synth_corpus(spec: &SynthSpec) -> Vec<LabeledClip> {
    let cfg = FeatureConfig::default();
    generate(spec)
        .map(|c| {
            let f = extract_features(&c.landmarks, &c.frames, &cfg).unwrap();
            LabeledClip::new(c.id, f, c.label, c.segments).unwrap()
        })
        .collect()
}
