//! File formats for landmarks, raw frames and feature matrices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureSequence, FrameTensorStream, LandmarkFrame, LandmarkSequence, LipConfig, CHANNEL_NAMES, FEATURE_CHANNELS};
use crate::nn::SeqTensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"KLFT";
pub const FEATURE_VERSION: u32 = 1;

fn format_err(context: impl Into<String>, message: impl Into<String>) -> FeatureError {
    FeatureError::Format {
        context: context.into(),
        message: message.into(),
    }
}

#[derive(Serialize, Deserialize)]
struct LandmarkLine {
    frame: usize,
    w: usize,
    h: usize,
    pts: Vec<Vec<f64>>,
}

/// One JSON object per line; blank lines are skipped, a third coordinate is ignored.
pub fn read_landmarks_jsonl<R: BufRead>(reader: R, fps: f64) -> Result<LandmarkSequence, FeatureError> {
    let mut frames = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = format!("landmarks line {}", lineno + 1);
        let rec: LandmarkLine = serde_json::from_str(&line).map_err(|e| format_err(&ctx, e.to_string()))?;
        match dims {
            None => dims = Some((rec.w, rec.h)),
            Some(d) if d != (rec.w, rec.h) => {
                return Err(format_err(ctx, format!("frame size {}x{} differs from {}x{}", rec.w, rec.h, d.0, d.1)))
            }
            _ => {}
        }
        let mut points = Vec::with_capacity(rec.pts.len());
        for p in &rec.pts {
            if p.len() < 2 {
                return Err(format_err(&ctx, "point with fewer than 2 coordinates"));
            }
            points.push([p[0], p[1]]);
        }
        frames.push(LandmarkFrame {
            index: rec.frame,
            points,
        });
    }
    let (width, height) = dims.ok_or_else(|| format_err("landmarks", "no frames"))?;
    Ok(LandmarkSequence {
        frames,
        width,
        height,
        fps,
    })
}

pub fn write_landmarks_jsonl<W: Write>(mut writer: W, seq: &LandmarkSequence) -> Result<(), FeatureError> {
    for f in &seq.frames {
        let line = LandmarkLine {
            frame: f.index,
            w: seq.width,
            h: seq.height,
            pts: f.points.iter().map(|p| p.to_vec()).collect(),
        };
        serde_json::to_writer(&mut writer, &line).map_err(|e| format_err("landmarks", e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a raw RGB24 stream to the end; its length must be a whole number of frames.
pub fn read_raw_rgb<R: Read>(mut reader: R, width: usize, height: usize, expected_frames: Option<usize>) -> Result<FrameTensorStream, FeatureError> {
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    let frame_bytes = width * height * 3;
    if frame_bytes == 0 {
        return Err(format_err("raw frames", "width and height must be positive"));
    }
    if let Some(t) = expected_frames {
        let want = t * frame_bytes;
        if data.len() != want {
            return Err(format_err(
                "raw frames",
                format!("expected {want} bytes ({t} frames of {width}x{height} RGB24), received {}", data.len()),
            ));
        }
    } else if data.is_empty() || data.len() % frame_bytes != 0 {
        let t = data.len().div_ceil(frame_bytes).max(1);
        return Err(format_err(
            "raw frames",
            format!("expected {} bytes ({t} frames of {width}x{height} RGB24), received {}", t * frame_bytes, data.len()),
        ));
    }
    let t = data.len() / frame_bytes;
    FrameTensorStream::new(t, width, height, data)
}

pub fn write_features<W: Write>(mut writer: W, seq: &FeatureSequence) -> Result<(), FeatureError> {
    let (t, c) = seq.data.shape();
    writer.write_all(FEATURE_MAGIC)?;
    writer.write_all(&FEATURE_VERSION.to_le_bytes())?;
    writer.write_all(&(t as u32).to_le_bytes())?;
    writer.write_all(&(c as u32).to_le_bytes())?;
    writer.write_all(&(seq.fps as f32).to_le_bytes())?;
    for v in seq.data.data() {
        writer.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FeatureError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| format_err("feature file", "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_features<R: Read>(mut reader: R) -> Result<FeatureSequence, FeatureError> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| format_err("feature file", "truncated header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(format_err("feature file", "bad magic"));
    }
    let version = read_u32(&mut reader)?;
    if version != FEATURE_VERSION {
        return Err(format_err("feature file", format!("unsupported version {version}")));
    }
    let t = read_u32(&mut reader)? as usize;
    let c = read_u32(&mut reader)? as usize;
    if c != FEATURE_CHANNELS {
        return Err(format_err("feature file", format!("expected {FEATURE_CHANNELS} channels, found {c}")));
    }
    let fps = f32::from_bits(read_u32(&mut reader)?) as f64;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != t * c * 4 {
        return Err(format_err(
            "feature file",
            format!("expected {} data bytes, received {}", t * c * 4, bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err("feature file", "non-finite value"));
    }
    FeatureSequence::new(SeqTensor::from_vec(t, c, data), fps)
}

pub fn read_features_file(path: &Path) -> Result<FeatureSequence, FeatureError> {
    read_features(BufReader::new(File::open(path)?)).map_err(|e| match e {
        FeatureError::Format { context, message } => FeatureError::Format {
            context: format!("{}: {context}", path.display()),
            message,
        },
        e => e,
    })
}

/// Header row of `frame` plus channel names, one row per frame.
pub fn write_features_csv<W: Write>(writer: W, seq: &FeatureSequence) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(writer);
    write!(w, "frame")?;
    for name in CHANNEL_NAMES {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for t in 0..seq.len() {
        write!(w, "{t}")?;
        for v in seq.data.row(t) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_lip_config(path: &Path) -> Result<LipConfig, FeatureError> {
    let text = std::fs::read_to_string(path)?;
    let cfg: LipConfig = serde_json::from_str(&text).map_err(|e| format_err(path.display().to_string(), e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
