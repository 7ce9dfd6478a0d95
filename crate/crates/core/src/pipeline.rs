//! Windowed inference with a saved model.

use thiserror::Error;

use crate::features::{apply_stats, FeatureSequence};
use crate::localization::{aggregate_classification, aggregate_frame_probs, decode_tags, plan_windows_with, LocalizationError, Segment, WindowPlan};
use crate::models::{ModelError, ModelKind, SavedModel};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error("features at {found} fps but the model expects {expected} fps")]
    FpsMismatch { expected: f64, found: f64 },
    #[error("empty feature sequence")]
    Empty,
}

fn check(model: &SavedModel, seq: &FeatureSequence, kind: ModelKind) -> Result<WindowPlan, InferenceError> {
    model.expect_kind(kind)?;
    if (model.header.fps - seq.fps).abs() > 1e-3 {
        return Err(InferenceError::FpsMismatch {
            expected: model.header.fps,
            found: seq.fps,
        });
    }
    if seq.is_empty() {
        return Err(InferenceError::Empty);
    }
    Ok(plan_windows_with(seq.len(), model.header.window, model.header.stride))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub score: f64,
    pub window_scores: Vec<f64>,
}

/// Fake probability of a raw (unnormalized) feature sequence: the mean of the
/// per-window scores.
pub fn classify_sequence(model: &SavedModel, seq: &FeatureSequence) -> Result<Classification, InferenceError> {
    let plan = check(model, seq, ModelKind::Classifier)?;
    let x = apply_stats(seq, &model.header.channel_stats).data;
    let window_scores = plan
        .ranges()
        .map(|(s, len)| model.model.classify(&x.slice_rows(s, len)))
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok(Classification {
        score: aggregate_classification(&window_scores)?,
        window_scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub segments: Vec<Segment>,
    pub windows: usize,
}

/// Scored fake segments of a raw feature sequence.
pub fn localize_sequence(model: &SavedModel, seq: &FeatureSequence) -> Result<Localization, InferenceError> {
    let plan = check(model, seq, ModelKind::Localizer)?;
    let x = apply_stats(seq, &model.header.channel_stats).data;
    let probs = plan
        .ranges()
        .map(|(s, len)| model.model.tag_probs(&x.slice_rows(s, len)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let frame_probs = aggregate_frame_probs(&probs, &plan, seq.len())?;
    Ok(Localization {
        segments: decode_tags(&frame_probs, seq.fps),
        windows: plan.len(),
    })
}
