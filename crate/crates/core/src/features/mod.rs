//! Handcrafted per-frame features.
//!
//! Eight base channels are computed per frame:
//!
//! | ch | name            | source                                        |
//! |----|-----------------|-----------------------------------------------|
//! | 0  | `blur`          | variance of the Laplacian of the mouth ROI     |
//! | 1  | `non_mouth_mse` | MSE vs previous frame outside the mouth ROI    |
//! | 2  | `color_shift`   | mean CIELAB distance of the ROI vs previous    |
//! | 3  | `mar`           | mouth aspect ratio                             |
//! | 4  | `velocity`      | mean lip-landmark displacement                 |
//! | 5  | `acceleration`  | difference of velocity                         |
//! | 6  | `jerk`          | difference of acceleration                     |
//! | 7  | `jitter`        | RMS residual of a local linear motion fit      |
//!
//! Channels 8..16 hold the first-order differences of channels 0..8 (zero at
//! frame 0). Temporal features are zero at frame 0 so the output always has
//! one row per input frame.

mod io;
mod kinematics;
mod pixels;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::SeqTensor;

pub use io::{
    read_features, read_features_file, read_landmarks_jsonl, read_lip_config, read_raw_rgb,
    write_features, write_features_csv, write_landmarks_jsonl, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use kinematics::{kinematics, kinematics_with_window, mouth_aspect_ratio, Kinematics, Mar, JITTER_HALF_WINDOW};
pub use pixels::{
    grayscale, lab_color_shift, laplacian_blurriness, non_mouth_mse, srgb_to_lab, GrayImage, RgbImage,
    RgbView,
};

pub const BASE_CHANNELS: usize = 8;
pub const FEATURE_CHANNELS: usize = 2 * BASE_CHANNELS;
pub const STD_FLOOR: f64 = 1e-6;
pub const DEFAULT_FPS: f64 = 25.0;
pub const DEFAULT_ROI_MARGIN: f64 = 0.2;

pub const CHANNEL_NAMES: [&str; FEATURE_CHANNELS] = [
    "blur",
    "non_mouth_mse",
    "color_shift",
    "mar",
    "velocity",
    "acceleration",
    "jerk",
    "jitter",
    "d_blur",
    "d_non_mouth_mse",
    "d_color_shift",
    "d_mar",
    "d_velocity",
    "d_acceleration",
    "d_jerk",
    "d_jitter",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("ROI of {width}x{height} is smaller than 3x3")]
    RoiTooSmall { width: usize, height: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mouth ROI covers the whole frame")]
    EmptyComplement,
    #[error("empty ROI")]
    EmptyRoi,
    #[error("{landmarks} landmark frames but {frames} video frames")]
    LengthMismatch { landmarks: usize, frames: usize },
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),
    #[error("invalid frame stream: {0}")]
    InvalidFrames(String),
    #[error("cannot fit channel statistics on an empty corpus")]
    EmptyCorpus,
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<FeatureError>,
    },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FeatureError {
    fn at(self, frame: usize) -> Self {
        FeatureError::AtFrame {
            frame,
            source: Box::new(self),
        }
    }
}

/// Landmark indices used by the lip features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LipConfig {
    /// Landmarks whose motion feeds velocity/jitter and whose bounding box is the ROI.
    pub lips: Vec<usize>,
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

const FACEMESH_LIPS: &str = include_str!("../../data/lips_facemesh478.json");

impl LipConfig {
    /// Lip topology of the 478-point face mesh.
    pub fn facemesh() -> Self {
        serde_json::from_str(FACEMESH_LIPS).expect("bundled lip config parses")
    }

    pub fn max_index(&self) -> usize {
        self.lips
            .iter()
            .copied()
            .chain([self.top, self.bottom, self.left, self.right])
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.lips.is_empty() {
            return Err(FeatureError::InvalidLandmarks("lip index set is empty".into()));
        }
        Ok(())
    }
}

impl Default for LipConfig {
    fn default() -> Self {
        Self::facemesh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub lips: LipConfig,
    pub roi_margin: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lips: LipConfig::default(),
            roi_margin: DEFAULT_ROI_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub index: usize,
    /// Normalized `(x, y)` image coordinates.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Vec<LandmarkFrame>,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
}

impl LandmarkSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, lips: &LipConfig) -> Result<(), FeatureError> {
        let Some(first) = self.frames.first() else {
            return Err(FeatureError::InvalidLandmarks("no frames".into()));
        };
        let n = first.points.len();
        if n < lips.max_index() + 1 {
            return Err(FeatureError::InvalidLandmarks(format!(
                "{n} points per frame but lip config references index {}",
                lips.max_index()
            )));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.index != t {
                return Err(FeatureError::InvalidLandmarks(format!(
                    "frame index {} at position {t}; indices must count up from 0",
                    f.index
                )));
            }
            if f.points.len() != n {
                return Err(FeatureError::InvalidLandmarks(format!(
                    "frame {t} has {} points, expected {n}",
                    f.points.len()
                )));
            }
            if f.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(FeatureError::InvalidLandmarks(format!("frame {t} has non-finite coordinates")));
            }
        }
        Ok(())
    }
}

/// `T` RGB24 frames of identical size, concatenated row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTensorStream {
    frames: usize,
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl FrameTensorStream {
    pub fn new(frames: usize, width: usize, height: usize, data: Vec<u8>) -> Result<Self, FeatureError> {
        if frames == 0 {
            return Err(FeatureError::InvalidFrames("stream has no frames".into()));
        }
        if width < 16 || height < 16 {
            return Err(FeatureError::InvalidFrames(format!(
                "frames must be at least 16x16, got {width}x{height}"
            )));
        }
        let want = frames * width * height * 3;
        if data.len() != want {
            return Err(FeatureError::InvalidFrames(format!(
                "expected {want} bytes for {frames} frames of {width}x{height}, received {}",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            width,
            height,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> RgbView<'_> {
        let n = self.width * self.height * 3;
        RgbView {
            width: self.width,
            height: self.height,
            data: &self.data[t * n..(t + 1) * n],
        }
    }
}

/// Pixel box `[x0, x1) x [y0, y1)` around the mouth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MouthRoi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

fn expand_axis(lo: f64, hi: f64, margin: f64, size: usize) -> (usize, usize) {
    let span = hi - lo;
    let a = ((lo - margin * span) * size as f64).floor().max(0.0) as usize;
    let b = ((hi + margin * span) * size as f64).ceil().max(0.0) as usize;
    let a = a.min(size - 1);
    let b = b.clamp(a + 1, size);
    (a, b)
}

impl MouthRoi {
    /// Lip bounding box grown by `margin` times its extent on each side,
    /// clamped to the frame and never empty.
    pub fn from_landmarks(frame: &LandmarkFrame, lips: &LipConfig, margin: f64, width: usize, height: usize) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for &i in &lips.lips {
            let p = frame.points[i];
            for c in 0..2 {
                min[c] = min[c].min(p[c]);
                max[c] = max[c].max(p[c]);
            }
        }
        let (x0, x1) = expand_axis(min[0], max[0], margin, width);
        let (y0, y1) = expand_axis(min[1], max[1], margin, height);
        Self { x0, y0, x1, y1 }
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<(), FeatureError> {
        if self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height {
            Ok(())
        } else {
            Err(FeatureError::ShapeMismatch(format!("ROI {self:?} outside {width}x{height} frame")))
        }
    }
}

/// `T x 16` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub data: SeqTensor,
    pub fps: f64,
}

impl FeatureSequence {
    pub fn new(data: SeqTensor, fps: f64) -> Result<Self, FeatureError> {
        if data.cols() != FEATURE_CHANNELS {
            return Err(FeatureError::ShapeMismatch(format!(
                "feature sequences have {FEATURE_CHANNELS} channels, got {}",
                data.cols()
            )));
        }
        Ok(Self { data, fps })
    }

    /// Builds the 16-channel matrix from the 8 base channels.
    pub fn from_base(base: &[[f64; BASE_CHANNELS]], fps: f64) -> Self {
        let mut data = SeqTensor::zeros(base.len(), FEATURE_CHANNELS);
        for (t, row) in base.iter().enumerate() {
            let out = data.row_mut(t);
            out[..BASE_CHANNELS].copy_from_slice(row);
            if t > 0 {
                for k in 0..BASE_CHANNELS {
                    out[BASE_CHANNELS + k] = row[k] - base[t - 1][k];
                }
            }
        }
        Self { data, fps }
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }
}

/// Runs every feature over a clip.
pub fn extract_features(
    landmarks: &LandmarkSequence,
    frames: &FrameTensorStream,
    config: &FeatureConfig,
) -> Result<FeatureSequence, FeatureError> {
    let lips = &config.lips;
    lips.validate()?;
    if landmarks.len() != frames.len() {
        return Err(FeatureError::LengthMismatch {
            landmarks: landmarks.len(),
            frames: frames.len(),
        });
    }
    landmarks.validate(lips)?;
    if landmarks.width != frames.width() || landmarks.height != frames.height() {
        return Err(FeatureError::ShapeMismatch(format!(
            "landmarks declare {}x{} but frames are {}x{}",
            landmarks.width,
            landmarks.height,
            frames.width(),
            frames.height()
        )));
    }

    let (w, h) = (frames.width(), frames.height());
    let kin = kinematics(landmarks, lips);
    let mut base = Vec::with_capacity(frames.len());
    let mut prev_lab: Option<pixels::LabImage> = None;
    for t in 0..frames.len() {
        let lf = &landmarks.frames[t];
        let roi = MouthRoi::from_landmarks(lf, lips, config.roi_margin, w, h);
        let frame = frames.frame(t);
        let crop = frame.crop(&roi);
        let blur = laplacian_blurriness(&grayscale(crop.view())).map_err(|e| e.at(t))?;
        let lab = pixels::LabImage::from_rgb(crop.view());
        let (mse, shift) = match &prev_lab {
            Some(prev) => (
                non_mouth_mse(frame, frames.frame(t - 1), &roi).map_err(|e| e.at(t))?,
                pixels::mean_lab_distance(&lab, prev).map_err(|e| e.at(t))?,
            ),
            None => (0.0, 0.0),
        };
        prev_lab = Some(lab);
        let mar = mouth_aspect_ratio(lf, lips).value;
        base.push([
            blur,
            mse,
            shift,
            mar,
            kin.velocity[t],
            kin.acceleration[t],
            kin.jerk[t],
            kin.jitter[t],
        ]);
    }
    Ok(FeatureSequence::from_base(&base, landmarks.fps))
}

/// Per-channel mean and (floored) population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Zero mean, unit deviation: applying it is the identity.
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; FEATURE_CHANNELS],
            std: vec![1.0; FEATURE_CHANNELS],
        }
    }
}

/// Pools every frame of every sequence.
pub fn fit_stats(corpus: &[&FeatureSequence]) -> Result<ChannelStats, FeatureError> {
    let frames: usize = corpus.iter().map(|s| s.len()).sum();
    if frames == 0 {
        return Err(FeatureError::EmptyCorpus);
    }
    let c = FEATURE_CHANNELS;
    let mut mean = vec![0.0; c];
    for s in corpus {
        for t in 0..s.len() {
            for (m, v) in mean.iter_mut().zip(s.data.row(t)) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= frames as f64);
    let mut var = vec![0.0; c];
    for s in corpus {
        for t in 0..s.len() {
            for ((acc, v), m) in var.iter_mut().zip(s.data.row(t)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let std = var
        .iter()
        .map(|v| (v / frames as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(ChannelStats { mean, std })
}

/// `(x - mean) / max(std, 1e-6)` per channel.
pub fn apply_stats(seq: &FeatureSequence, stats: &ChannelStats) -> FeatureSequence {
    let mut data = seq.data.clone();
    for t in 0..data.rows() {
        for (k, v) in data.row_mut(t).iter_mut().enumerate() {
            *v = (*v - stats.mean[k]) / stats.std[k].max(STD_FLOOR);
        }
    }
    FeatureSequence { data, fps: seq.fps }
}
