use std::io::{Read, Write};
use std::path::PathBuf;

use clap::Args;

use klassify_core::features::{extract_features, read_landmarks_jsonl, read_lip_config, read_raw_rgb, write_features, write_features_csv, FeatureConfig};

use crate::config::{create, open};
use crate::error::{io_error, CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Landmark JSON-lines file, one object per frame.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Raw RGB24 frame stream; `-` reads standard input.
    #[arg(long)]
    pub frames_raw: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub fps: f64,
    /// Lip landmark index file (defaults to the 478-point face mesh).
    #[arg(long)]
    pub lips: Option<PathBuf>,
    #[arg(long)]
    pub roi_margin: Option<f64>,
    /// Output feature file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the features as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn run(g: &Globals, a: ExtractArgs) -> CliResult<()> {
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(CliError::usage(format!("--fps {} must be positive", a.fps)));
    }
    let mut cfg = FeatureConfig::default();
    if let Some(p) = a.lips.as_ref().or(g.config.lip_config.as_ref()) {
        cfg.lips = read_lip_config(p).map_err(|e| CliError::from(e).at(p))?;
    }
    if let Some(m) = a.roi_margin.or(g.config.roi_margin) {
        cfg.roi_margin = m;
    }
    let landmarks = read_landmarks_jsonl(open(&a.landmarks)?, a.fps).map_err(|e| CliError::from(e).at(&a.landmarks))?;
    let mut raw = Vec::new();
    if a.frames_raw.as_os_str() == "-" {
        std::io::stdin().lock().read_to_end(&mut raw).map_err(|e| io_error(&a.frames_raw, e))?;
    } else {
        open(&a.frames_raw)?.read_to_end(&mut raw).map_err(|e| io_error(&a.frames_raw, e))?;
    }
    let frames = read_raw_rgb(&raw[..], a.width, a.height, Some(landmarks.len())).map_err(|e| CliError::from(e).at(&a.frames_raw))?;
    let features = extract_features(&landmarks, &frames, &cfg)?;
    let mut w = create(&a.out)?;
    write_features(&mut w, &features).map_err(|e| CliError::from(e).at(&a.out))?;
    w.flush().map_err(|e| io_error(&a.out, e))?;
    if let Some(csv) = &a.csv {
        write_features_csv(create(csv)?, &features).map_err(|e| CliError::from(e).at(csv))?;
    }
    if g.verbose {
        eprintln!("{}: {} frames", a.out.display(), features.len());
    }
    Ok(())
}
