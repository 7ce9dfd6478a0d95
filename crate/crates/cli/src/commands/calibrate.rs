use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use klassify_core::calibration::{
    calibration_curve, fuse, platt_fit, read_scores, write_calibration_csv, write_scores, CalibrationParams, Modality, ScoreRecord,
};

use crate::config::{create, open, read_json, write_json};
use crate::error::{io_error, CliError, CliResult};
use crate::Globals;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModalityArg {
    Audio,
    Video,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Audio => Modality::Audio,
            ModalityArg::Video => Modality::Video,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Score file with labels (`video_id;score;label`).
    #[arg(long)]
    pub scores_labeled: PathBuf,
    #[arg(long, value_enum, default_value = "video")]
    pub modality: ModalityArg,
    /// Output parameters JSON `{a, b, modality}`.
    #[arg(long)]
    pub out_params: PathBuf,
    /// Reliability curve CSV of the calibrated scores.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub audio_scores: Option<PathBuf>,
    #[arg(long)]
    pub video_scores: Option<PathBuf>,
    /// Audio Platt parameters; scores are used raw when absent.
    #[arg(long)]
    pub audio_cal: Option<PathBuf>,
    #[arg(long)]
    pub video_cal: Option<PathBuf>,
    /// Output score file of the max-out decision.
    #[arg(long)]
    pub out: PathBuf,
}

fn scores(path: &Path) -> CliResult<Vec<ScoreRecord>> {
    read_scores(open(path)?).map_err(|e| CliError::from(e).at(path))
}

fn params(path: Option<&PathBuf>, expected: Modality) -> CliResult<Option<CalibrationParams>> {
    let Some(p) = path else { return Ok(None) };
    let params: CalibrationParams = read_json(p)?;
    if params.modality != expected {
        return Err(CliError::semantics(format!("{}: parameters are for {:?}, expected {:?}", p.display(), params.modality, expected)));
    }
    Ok(Some(params))
}

pub fn run_calibrate(_g: &Globals, a: CalibrateArgs) -> CliResult<()> {
    if a.bins == 0 {
        return Err(CliError::usage("--bins must be positive"));
    }
    let records = scores(&a.scores_labeled)?;
    if let Some(r) = records.iter().find(|r| r.label.is_none()) {
        return Err(CliError::format(format!("{}: {:?} has no label", a.scores_labeled.display(), r.id)));
    }
    let fit = platt_fit(&records, a.modality.into())?;
    write_json(&a.out_params, &fit)?;
    if let Some(path) = &a.curve {
        let mut w = create(path)?;
        write_calibration_csv(&mut w, &calibration_curve(&records, &fit, a.bins))
            .and_then(|_| w.flush())
            .map_err(|e| io_error(path, e))?;
    }
    println!("a = {}, b = {}", fit.a, fit.b);
    Ok(())
}

pub fn run_fuse(g: &Globals, a: FuseArgs) -> CliResult<()> {
    if a.audio_scores.is_none() && a.video_scores.is_none() {
        return Err(CliError::usage("at least one of --audio-scores and --video-scores is required"));
    }
    let audio = a.audio_scores.as_deref().map(scores).transpose()?.unwrap_or_default();
    let video = a.video_scores.as_deref().map(scores).transpose()?.unwrap_or_default();
    let audio_cal = params(a.audio_cal.as_ref().or(g.config.audio_calibration.as_ref()), Modality::Audio)?;
    let video_cal = params(a.video_cal.as_ref().or(g.config.video_calibration.as_ref()), Modality::Video)?;
    let (fused, one_sided) = fuse(&audio, &video, audio_cal.as_ref(), video_cal.as_ref())?;
    let records: Vec<ScoreRecord> = fused.into_iter().map(|f| ScoreRecord { id: f.id, score: f.fused, label: None }).collect();
    let mut w = create(&a.out)?;
    write_scores(&mut w, &records).and_then(|_| w.flush()).map_err(|e| io_error(&a.out, e))?;
    if one_sided > 0 && a.audio_scores.is_some() && a.video_scores.is_some() {
        eprintln!("warning: {one_sided} video ids have a score for only one modality");
    }
    Ok(())
}
