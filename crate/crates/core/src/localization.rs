//! Sliding-window planning, per-frame aggregation and tag decoding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Tag;
use crate::nn::SeqTensor;

pub const DEFAULT_WINDOW: usize = 256;
pub const DEFAULT_STRIDE: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizationError {
    #[error("frame {0} is not covered by any window")]
    CoverageGap(usize),
    #[error("segments [{0}, {1}) and [{2}, {3}) overlap")]
    Overlap(f64, f64, f64, f64),
    #[error("invalid segment [{0}, {1})")]
    InvalidSegment(f64, f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no window scores to aggregate")]
    Empty,
}

/// Time interval in seconds with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64, score: f64) -> Self {
        Self { start, end, score }
    }

    /// Unscored interval, as used for ground truth.
    pub fn span(start: f64, end: f64) -> Self {
        Self::new(start, end, 1.0)
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Window start frames for a clip of `t` frames; each window spans
/// `min(window, t)` frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub starts: Vec<usize>,
    pub window: usize,
    pub frames: usize,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn span(&self) -> usize {
        self.window.min(self.frames)
    }

    /// `(start, length)` of every window.
    pub fn ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let len = self.span();
        self.starts.iter().map(move |&s| (s, len))
    }
}

pub fn plan_windows(t: usize) -> WindowPlan {
    plan_windows_with(t, DEFAULT_WINDOW, DEFAULT_STRIDE)
}

/// Strided starts, with a final right-aligned window when the strided ones
/// stop short of the end.
pub fn plan_windows_with(t: usize, window: usize, stride: usize) -> WindowPlan {
    assert!(t >= 1 && window >= 1 && stride >= 1, "window plan needs positive sizes");
    let mut starts = Vec::new();
    if t <= window {
        starts.push(0);
    } else {
        let mut s = 0;
        while s + window <= t {
            starts.push(s);
            s += stride;
        }
        let covered = starts.last().map_or(0, |&s| s + window);
        if covered < t {
            starts.push(t - window);
        }
    }
    WindowPlan {
        starts,
        window,
        frames: t,
    }
}

/// Mean of the per-window scores.
pub fn aggregate_classification(scores: &[f64]) -> Result<f64, LocalizationError> {
    if scores.is_empty() {
        return Err(LocalizationError::Empty);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Averages per-window tag probabilities over the windows covering each
/// frame, renormalizing every row.
pub fn aggregate_frame_probs(windows: &[SeqTensor], plan: &WindowPlan, t: usize) -> Result<SeqTensor, LocalizationError> {
    if windows.len() != plan.len() {
        return Err(LocalizationError::ShapeMismatch(format!(
            "{} window outputs for {} planned windows",
            windows.len(),
            plan.len()
        )));
    }
    let k = windows.first().map_or(Tag::ALL.len(), |w| w.cols());
    let mut sum = SeqTensor::zeros(t, k);
    let mut count = vec![0usize; t];
    for (w, (start, len)) in windows.iter().zip(plan.ranges()) {
        if w.rows() != len || w.cols() != k || start + len > t {
            return Err(LocalizationError::ShapeMismatch(format!(
                "window at {start} has shape {:?}, expected ({len}, {k})",
                w.shape()
            )));
        }
        for r in 0..len {
            for (acc, v) in sum.row_mut(start + r).iter_mut().zip(w.row(r)) {
                *acc += v;
            }
            count[start + r] += 1;
        }
    }
    for (f, &c) in count.iter().enumerate() {
        if c == 0 {
            return Err(LocalizationError::CoverageGap(f));
        }
        let row = sum.row_mut(f);
        row.iter_mut().for_each(|v| *v /= c as f64);
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(sum)
}

fn frame_is_inside(f: usize, fps: f64, start: f64, end: f64) -> bool {
    (f as f64) / fps < end && ((f + 1) as f64) / fps > start
}

/// Sorts segments and merges any that overlap or touch.
pub fn merge_segments(segments: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut s: Vec<(f64, f64)> = segments.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(s.len());
    for (a, b) in s {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Per-frame fake mask: a frame is fake when its interval
/// `[f/fps, (f+1)/fps)` overlaps a segment with positive measure.
pub fn fake_frames(segments: &[(f64, f64)], t: usize, fps: f64) -> Vec<bool> {
    let limit = t as f64 / fps;
    let mut mask = vec![false; t];
    for &(s, e) in segments {
        let (s, e) = (s.max(0.0), e.min(limit));
        if e <= s {
            continue;
        }
        let first = ((s * fps).floor().max(0.0) as usize).min(t);
        for (f, m) in mask.iter_mut().enumerate().skip(first.saturating_sub(1)) {
            if (f as f64) / fps >= e {
                break;
            }
            if frame_is_inside(f, fps, s, e) {
                *m = true;
            }
        }
    }
    mask
}

/// Tags frames with B, I and L over every fake run; a single-frame run is a lone B.
pub fn tags_from_mask(mask: &[bool]) -> Vec<Tag> {
    let t = mask.len();
    let mut tags = vec![Tag::O; t];
    let mut f = 0;
    while f < t {
        if !mask[f] {
            f += 1;
            continue;
        }
        let start = f;
        while f < t && mask[f] {
            f += 1;
        }
        let last = f - 1;
        tags[start] = Tag::B;
        if last > start {
            for tag in &mut tags[start + 1..last] {
                *tag = Tag::I;
            }
            tags[last] = Tag::L;
        }
    }
    tags
}

/// Frame tags for a clip of `t` frames. With `merge` false, overlapping
/// segments are an error instead of being merged.
pub fn encode_tags(segments: &[(f64, f64)], t: usize, fps: f64, merge: bool) -> Result<Vec<Tag>, LocalizationError> {
    for &(s, e) in segments {
        if !(s.is_finite() && e.is_finite() && s < e) {
            return Err(LocalizationError::InvalidSegment(s, e));
        }
    }
    if !merge {
        let mut s = segments.to_vec();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in s.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(LocalizationError::Overlap(w[0].0, w[0].1, w[1].0, w[1].1));
            }
        }
    }
    let merged = merge_segments(segments);
    Ok(tags_from_mask(&fake_frames(&merged, t, fps)))
}

#[derive(Debug, Clone, Copy)]
struct Run {
    first: usize,
    last: usize,
    orphan: bool,
}

/// Groups frame tags into inclusive frame runs.
///
/// A B opens a run that absorbs following I frames and closes on L. I or L
/// frames outside any run become single-frame orphan runs, and orphan runs
/// are joined to the runs they touch.
pub fn decode_runs(tags: &[Tag]) -> Vec<(usize, usize)> {
    let mut runs: Vec<Run> = Vec::new();
    let mut open = false;
    for (f, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => open = false,
            Tag::B => {
                runs.push(Run {
                    first: f,
                    last: f,
                    orphan: false,
                });
                open = true;
            }
            Tag::I | Tag::L => {
                if open {
                    runs.last_mut().expect("open run").last = f;
                } else {
                    runs.push(Run {
                        first: f,
                        last: f,
                        orphan: true,
                    });
                }
                open = tag == Tag::I;
            }
        }
    }
    let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
    for r in runs {
        match merged.last_mut() {
            Some(prev) if prev.last + 1 == r.first && (prev.orphan || r.orphan) => {
                prev.last = r.last;
                prev.orphan = r.orphan;
            }
            _ => merged.push(r),
        }
    }
    merged.into_iter().map(|r| (r.first, r.last)).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-frame argmax tags of a `T x 4` probability matrix.
pub fn argmax_tags(probs: &SeqTensor) -> Vec<Tag> {
    (0..probs.rows()).map(|t| Tag::from_index(argmax(probs.row(t)))).collect()
}

/// Scored segments from per-frame tag probabilities. The score of a segment
/// is the mean of `1 - P(O)` over its frames.
pub fn decode_tags(probs: &SeqTensor, fps: f64) -> Vec<Segment> {
    let tags = argmax_tags(probs);
    decode_runs(&tags)
        .into_iter()
        .map(|(first, last)| {
            let n = (last - first + 1) as f64;
            let score = (first..=last).map(|f| 1.0 - probs.get(f, Tag::O.index())).sum::<f64>() / n;
            Segment::new(first as f64 / fps, (last + 1) as f64 / fps, score.clamp(0.0, 1.0))
        })
        .collect()
}

/// Segments from hard tags, every one scored 1.
pub fn segments_from_tags(tags: &[Tag], fps: f64) -> Vec<(f64, f64)> {
    decode_runs(tags)
        .into_iter()
        .map(|(first, last)| (first as f64 / fps, (last + 1) as f64 / fps))
        .collect()
}

/// `{"<video-id>": [[score, start_s, end_s], ...]}`.
pub type LocalizationOutput = BTreeMap<String, Vec<[f64; 3]>>;

pub fn to_output_rows(segments: &[Segment]) -> Vec<[f64; 3]> {
    segments.iter().map(|s| [s.score, s.start, s.end]).collect()
}

pub fn from_output_rows(rows: &[[f64; 3]]) -> Result<Vec<Segment>, LocalizationError> {
    rows.iter()
        .map(|r| {
            if r.iter().all(|v| v.is_finite()) && r[1] < r[2] && r[1] >= 0.0 {
                Ok(Segment::new(r[1], r[2], r[0]))
            } else {
                Err(LocalizationError::InvalidSegment(r[1], r[2]))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Tag::*;

    #[test]
    fn window_plans() {
        assert_eq!(plan_windows(512).starts, vec![0, 128, 256]);
        assert_eq!(plan_windows(100).starts, vec![0]);
        assert_eq!(plan_windows(300).starts, vec![0, 44]);
        assert_eq!(plan_windows(256).starts, vec![0]);
        assert_eq!(plan_windows(257).starts, vec![0, 1]);
        assert_eq!(plan_windows(100).span(), 100);
    }

    #[test]
    fn classification_mean() {
        assert_eq!(aggregate_classification(&[0.7]).unwrap(), 0.7);
        assert!((aggregate_classification(&[0.2, 0.4, 0.9]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(aggregate_classification(&[]), Err(LocalizationError::Empty));
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_tags(&[], 6, 25.0, true).unwrap(), vec![O; 6]);
        let seg = [(2.0 / 25.0, 6.0 / 25.0)];
        assert_eq!(encode_tags(&seg, 8, 25.0, true).unwrap(), vec![O, O, B, I, I, L, O, O]);
        let single = [(4.0 / 25.0, 5.0 / 25.0)];
        assert_eq!(encode_tags(&single, 7, 25.0, true).unwrap(), vec![O, O, O, O, B, O, O]);
        let overlapping = [(0.0, 0.2), (0.1, 0.3)];
        assert!(matches!(encode_tags(&overlapping, 10, 25.0, false), Err(LocalizationError::Overlap(..))));
        assert_eq!(
            encode_tags(&overlapping, 10, 25.0, true).unwrap(),
            encode_tags(&[(0.0, 0.3)], 10, 25.0, true).unwrap()
        );
    }

    #[test]
    fn partial_frame_overlap_marks_frame() {
        // [0.05, 0.07) at 25 fps touches frame 1 = [0.04, 0.08)
        assert_eq!(fake_frames(&[(0.05, 0.07)], 4, 25.0), vec![false, true, false, false]);
        // ending exactly on a frame boundary does not mark the next frame
        assert_eq!(fake_frames(&[(0.0, 0.08)], 4, 25.0), vec![true, true, false, false]);
    }

    #[test]
    fn decode_example() {
        let mut probs = SeqTensor::zeros(8, 4);
        for (t, tag) in [O, O, B, I, I, L, O, O].iter().enumerate() {
            probs.set(t, tag.index(), 1.0);
        }
        let segs = decode_tags(&probs, 25.0);
        assert_eq!(segs.len(), 1);
        assert!((segs[0].start - 0.08).abs() < 1e-12 && (segs[0].end - 0.24).abs() < 1e-12);
        assert_eq!(segs[0].score, 1.0);
        assert!(decode_tags(&SeqTensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]), 25.0).is_empty());
    }

    #[test]
    fn orphan_repairs() {
        // orphan I right after L extends the run
        assert_eq!(decode_runs(&[B, L, I, O]), vec![(0, 2)]);
        // isolated orphan becomes a length-1 run
        assert_eq!(decode_runs(&[O, L, O, I]), vec![(1, 1), (3, 3)]);
        // orphan bridges two runs
        assert_eq!(decode_runs(&[B, L, L, B, L]), vec![(0, 4)]);
        // adjacent lone Bs stay separate
        assert_eq!(decode_runs(&[B, B, O]), vec![(0, 0), (1, 1)]);
        // B inside an open run starts a new one
        assert_eq!(decode_runs(&[B, I, B, I, L]), vec![(0, 1), (2, 4)]);
    }

    #[test]
    fn frame_average_renormalizes() {
        let plan = plan_windows_with(3, 2, 1);
        assert_eq!(plan.starts, vec![0, 1]);
        let a = SeqTensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.5, 0.5, 0.0, 0.0]]);
        let b = SeqTensor::from_rows(&[vec![0.0, 0.5, 0.5, 0.0], vec![0.0, 0.0, 0.0, 1.0]]);
        let out = aggregate_frame_probs(&[a, b], &plan, 3).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(out.row(1), &[0.25, 0.5, 0.25, 0.0]);
        assert_eq!(out.row(2), &[0.0, 0.0, 0.0, 1.0]);
        let gap = WindowPlan {
            starts: vec![0],
            window: 2,
            frames: 3,
        };
        let w = SeqTensor::zeros(2, 4);
        assert_eq!(aggregate_frame_probs(&[w], &gap, 3), Err(LocalizationError::CoverageGap(2)));
    }
}
