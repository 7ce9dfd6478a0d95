//! Synthetic talking-mouth clips with frame-aligned fake segments.
//!
//! Real clips carry sinusoidal mouth opening with landmark noise, a sharp
//! textured lip region and per-frame sensor noise everywhere. Inside a fake
//! segment three effects are applied, each aimed at one feature group:
//!
//! * Gaussian blur of the mouth ROI (blur),
//! * the non-mouth area frozen to the previous frame (non-mouth MSE),
//! * mouth motion either smoothed to a still, noise-free pose or perturbed
//!   with strong jitter (kinematics).

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::features::{FeatureConfig, FrameTensorStream, LandmarkFrame, LandmarkSequence, LipConfig, MouthRoi};
use crate::training::stable_hash;

pub const FACEMESH_POINTS: usize = 478;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub clips: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Fraction of clips that receive fake segments.
    pub fake_fraction: f64,
    pub segments_min: usize,
    pub segments_max: usize,
    pub segment_frames_min: usize,
    pub segment_frames_max: usize,
    pub blur_sigma: f64,
    /// Landmark noise added inside jitter segments, normalized units.
    pub jitter_sigma: f64,
    /// Probability that a segment smooths motion rather than jittering it.
    pub smoothing_prob: f64,
    pub landmark_noise: f64,
    /// Half-range of the uniform per-pixel sensor noise.
    pub pixel_noise: u8,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clips: 2000,
            frames_min: 64,
            frames_max: 128,
            width: 64,
            height: 64,
            fps: 25.0,
            fake_fraction: 0.5,
            segments_min: 1,
            segments_max: 5,
            segment_frames_min: 4,
            segment_frames_max: 12,
            blur_sigma: 1.5,
            jitter_sigma: 0.006,
            smoothing_prob: 0.5,
            landmark_noise: 0.0015,
            pixel_noise: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err("need 1 <= frames_min <= frames_max".into());
        }
        if self.width < 16 || self.height < 16 {
            return Err("frames must be at least 16x16".into());
        }
        if self.segments_max > 5 || self.segments_min > self.segments_max {
            return Err("segment count range must lie within 0..=5".into());
        }
        if self.segment_frames_min == 0 || self.segment_frames_min > self.segment_frames_max {
            return Err("need 1 <= segment_frames_min <= segment_frames_max".into());
        }
        if !(self.fps > 0.0) || !(0.0..=1.0).contains(&self.fake_fraction) || !(0.0..=1.0).contains(&self.smoothing_prob) {
            return Err("fps must be positive; fake_fraction and smoothing_prob in [0, 1]".into());
        }
        if !(self.blur_sigma >= 0.0 && self.jitter_sigma >= 0.0 && self.landmark_noise >= 0.0) {
            return Err("effect strengths must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub id: String,
    pub landmarks: LandmarkSequence,
    pub frames: FrameTensorStream,
    /// Fake intervals in seconds, frame aligned.
    pub segments: Vec<(f64, f64)>,
    /// Inclusive-exclusive frame ranges of the segments.
    pub segment_frames: Vec<(usize, usize)>,
    pub label: bool,
}

pub fn clip_id(index: usize) -> String {
    format!("clip_{index:05}")
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    stable_hash(&format!("{seed}:{index}"))
}

/// Places `lengths` in `t` frames with at least one real frame before,
/// between and after segments. Drops trailing segments that do not fit.
fn place_segments<R: Rng>(t: usize, mut lengths: Vec<usize>, rng: &mut R) -> Vec<(usize, usize)> {
    while !lengths.is_empty() && lengths.iter().sum::<usize>() + lengths.len() + 1 > t {
        lengths.pop();
    }
    if lengths.is_empty() {
        return Vec::new();
    }
    let k = lengths.len();
    let free = t - lengths.iter().sum::<usize>() - (k + 1);
    let mut cuts: Vec<usize> = (0..k).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(k);
    let mut pos = 1;
    let mut prev_cut = 0;
    for (i, len) in lengths.into_iter().enumerate() {
        pos += cuts[i] - prev_cut;
        prev_cut = cuts[i];
        out.push((pos, pos + len));
        pos += len + 1;
    }
    out
}

struct Mouth {
    cx: f64,
    cy: f64,
    half_width: f64,
    thickness: f64,
}

fn ring(points: &mut [[f64; 2]], ids: &[usize], cx: f64, cy: f64, w: f64, h: f64) {
    let n = ids.len();
    for (i, &id) in ids.iter().enumerate() {
        let theta = PI - 2.0 * PI * i as f64 / n as f64;
        points[id] = [cx + w * theta.cos(), cy + h * theta.sin()];
    }
}

/// Generates clip `index` of the set described by `spec`.
pub fn generate_clip(spec: &SynthSpec, index: usize) -> SynthClip {
    let lips = LipConfig::facemesh();
    let (outer, inner) = lips.lips.split_at(lips.lips.len() / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(spec.seed, index));
    let (w, h) = (spec.width, spec.height);
    let t_len = rng.gen_range(spec.frames_min..=spec.frames_max);
    let fake = rng.gen_bool(spec.fake_fraction) && spec.segments_max > 0;

    let segment_frames = if fake {
        let k = rng.gen_range(spec.segments_min.max(1)..=spec.segments_max);
        let lengths = (0..k)
            .map(|_| rng.gen_range(spec.segment_frames_min..=spec.segment_frames_max))
            .collect();
        place_segments(t_len, lengths, &mut rng)
    } else {
        Vec::new()
    };
    let smoothing: Vec<bool> = segment_frames.iter().map(|_| rng.gen_bool(spec.smoothing_prob)).collect();
    let mut in_segment = vec![None; t_len];
    for (k, &(a, b)) in segment_frames.iter().enumerate() {
        in_segment[a..b].iter_mut().for_each(|s| *s = Some(k));
    }

    // landmarks
    let mouth = Mouth {
        cx: 0.5 + rng.gen_range(-0.03..0.03),
        cy: 0.68 + rng.gen_range(-0.03..0.03),
        half_width: rng.gen_range(0.12..0.16),
        thickness: rng.gen_range(0.015..0.025),
    };
    let freq = rng.gen_range(1.5..3.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let amp = rng.gen_range(0.03..0.06);
    let face: Vec<[f64; 2]> = (0..FACEMESH_POINTS)
        .map(|_| [rng.gen_range(0.2..0.8), rng.gen_range(0.15..0.9)])
        .collect();
    let noise = Normal::new(0.0, spec.landmark_noise.max(1e-300)).expect("finite sigma");
    let jitter = Normal::new(0.0, spec.jitter_sigma.max(1e-300)).expect("finite sigma");
    let mut frames_lm = Vec::with_capacity(t_len);
    let mut held: Option<Vec<[f64; 2]>> = None;
    for t in 0..t_len {
        let opening = 0.01 + amp * 0.5 * (1.0 + (2.0 * PI * freq * t as f64 / spec.fps + phase).sin());
        let mut points = face.clone();
        ring(&mut points, outer, mouth.cx, mouth.cy, mouth.half_width, opening + mouth.thickness);
        ring(&mut points, inner, mouth.cx, mouth.cy, 0.8 * mouth.half_width, opening);
        match in_segment[t] {
            Some(k) if smoothing[k] => {
                let pose = held.get_or_insert_with(|| points.clone());
                points.clone_from(pose);
            }
            seg => {
                held = None;
                for &i in &lips.lips {
                    points[i][0] += noise.sample(&mut rng);
                    points[i][1] += noise.sample(&mut rng);
                    if seg.is_some() {
                        points[i][0] += jitter.sample(&mut rng);
                        points[i][1] += jitter.sample(&mut rng);
                    }
                }
            }
        }
        frames_lm.push(LandmarkFrame { index: t, points });
    }
    let landmarks = LandmarkSequence {
        frames: frames_lm,
        width: w,
        height: h,
        fps: spec.fps,
    };

    // pixels
    let base: [f64; 3] = [rng.gen_range(90.0..170.0), rng.gen_range(70.0..140.0), rng.gen_range(60.0..120.0)];
    let background: Vec<u8> = (0..w * h * 3)
        .map(|i| {
            let (px, c) = (i / 3, i % 3);
            let (x, y) = ((px % w) as f64, (px / w) as f64);
            let shade = 25.0 * ((x / w as f64) * 3.0 + (y / h as f64) * 2.0).sin();
            (base[c] + shade + rng.gen_range(-12.0..12.0)).clamp(0.0, 255.0) as u8
        })
        .collect();
    let lip_tex: Vec<i16> = (0..w * h).map(|_| rng.gen_range(-45..=45)).collect();
    let lip_color = [rng.gen_range(150..200) as i16, rng.gen_range(40..80) as i16, rng.gen_range(50..90) as i16];
    let cfg = FeatureConfig::default();
    let frame_bytes = w * h * 3;
    let mut data = vec![0u8; t_len * frame_bytes];
    let n = spec.pixel_noise as i16;
    for t in 0..t_len {
        let lf = &landmarks.frames[t];
        let (prev, cur) = data.split_at_mut(t * frame_bytes);
        let frame = &mut cur[..frame_bytes];
        frame.copy_from_slice(&background);
        if n > 0 {
            let mut bits = 0u64;
            for (i, v) in frame.iter_mut().enumerate() {
                if i % 8 == 0 {
                    bits = rng.next_u64();
                }
                let r = ((bits >> (8 * (i % 8))) & 0xff) as i16 % (2 * n + 1) - n;
                *v = (*v as i16 + r).clamp(0, 255) as u8;
            }
        }
        draw_mouth(frame, w, h, lf, outer, inner, &lip_tex, lip_color);
        let roi = MouthRoi::from_landmarks(lf, &lips, cfg.roi_margin, w, h);
        if in_segment[t].is_some() {
            gaussian_blur_roi(frame, w, &roi, spec.blur_sigma);
            if t > 0 {
                let last = &prev[(t - 1) * frame_bytes..];
                for y in 0..h {
                    for x in 0..w {
                        if x >= roi.x0 && x < roi.x1 && y >= roi.y0 && y < roi.y1 {
                            continue;
                        }
                        let o = (y * w + x) * 3;
                        frame[o..o + 3].copy_from_slice(&last[o..o + 3]);
                    }
                }
            }
        }
    }
    let frames = FrameTensorStream::new(t_len, w, h, data).expect("valid synthetic frame stream");
    let segments = segment_frames
        .iter()
        .map(|&(a, b)| (a as f64 / spec.fps, b as f64 / spec.fps))
        .collect();
    SynthClip {
        id: clip_id(index),
        landmarks,
        frames,
        segments,
        label: !segment_frames.is_empty(),
        segment_frames,
    }
}

fn ellipse_radius(points: &[[f64; 2]], ids: &[usize]) -> ([f64; 2], f64, f64) {
    let n = ids.len();
    let left = points[ids[0]];
    let right = points[ids[n / 2]];
    let bottom = points[ids[n / 4]];
    let top = points[ids[3 * n / 4]];
    let c = [(left[0] + right[0]) / 2.0, (top[1] + bottom[1]) / 2.0];
    (c, ((right[0] - left[0]) / 2.0).abs().max(1e-6), ((bottom[1] - top[1]) / 2.0).abs().max(1e-6))
}

#[allow(clippy::too_many_arguments)]
fn draw_mouth(
    frame: &mut [u8],
    w: usize,
    h: usize,
    lf: &LandmarkFrame,
    outer: &[usize],
    inner: &[usize],
    tex: &[i16],
    color: [i16; 3],
) {
    let (oc, orx, ory) = ellipse_radius(&lf.points, outer);
    let (ic, irx, iry) = ellipse_radius(&lf.points, inner);
    let x0 = (((oc[0] - orx) * w as f64).floor().max(0.0)) as usize;
    let x1 = (((oc[0] + orx) * w as f64).ceil() as usize).min(w);
    let y0 = (((oc[1] - ory) * h as f64).floor().max(0.0)) as usize;
    let y1 = (((oc[1] + ory) * h as f64).ceil() as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let outer_d = ((u - oc[0]) / orx).powi(2) + ((v - oc[1]) / ory).powi(2);
            if outer_d > 1.0 {
                continue;
            }
            let inner_d = ((u - ic[0]) / irx).powi(2) + ((v - ic[1]) / iry).powi(2);
            let o = (y * w + x) * 3;
            let tx = tex[y * w + x];
            if inner_d <= 1.0 {
                for c in 0..3 {
                    frame[o + c] = (30 + tx / 3).clamp(0, 255) as u8;
                }
            } else {
                for c in 0..3 {
                    frame[o + c] = (color[c] + tx).clamp(0, 255) as u8;
                }
            }
        }
    }
}

/// Separable Gaussian blur restricted to the ROI, clamping at its border.
fn gaussian_blur_roi(frame: &mut [u8], w: usize, roi: &MouthRoi, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (rw, rh) = (roi.x1 - roi.x0, roi.y1 - roi.y0);
    let mut buf = vec![0.0; rw * rh * 3];
    for y in 0..rh {
        for x in 0..rw {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - radius).clamp(0, rw as isize - 1) as usize;
                    acc += kv * frame[((roi.y0 + y) * w + roi.x0 + xx) * 3 + c] as f64;
                }
                buf[(y * rw + x) * 3 + c] = acc / norm;
            }
        }
    }
    for y in 0..rh {
        for x in 0..rw {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - radius).clamp(0, rh as isize - 1) as usize;
                    acc += kv * buf[(yy * rw + x) * 3 + c];
                }
                frame[((roi.y0 + y) * w + roi.x0 + x) * 3 + c] = (acc / norm).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// Clips `0..spec.clips` in order.
pub fn generate(spec: &SynthSpec) -> impl Iterator<Item = SynthClip> + '_ {
    (0..spec.clips).map(move |i| generate_clip(spec, i))
}
