//! Lip-sync deepfake detection and temporal localization from handcrafted features.

pub mod calibration;
pub mod features;
pub mod localization;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod training;
