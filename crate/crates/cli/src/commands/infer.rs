use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use klassify_core::calibration::{write_scores, ScoreRecord};
use klassify_core::features::{read_features_file, FeatureSequence};
use klassify_core::localization::{to_output_rows, LocalizationOutput};
use klassify_core::models::ModelKind;
use klassify_core::pipeline::{classify_sequence, localize_sequence};

use crate::config::{create, load_model, parallel_map, video_id, write_json};
use crate::error::{io_error, CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Classifier model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feature files; the video id is the file name without extension.
    #[arg(long, num_args = 1.., required = true)]
    pub features: Vec<PathBuf>,
    /// Output score file (`video_id;score`).
    #[arg(long)]
    pub out_scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Localizer model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub features: Vec<PathBuf>,
    /// Expected frame rate; checked against the features and the model.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Output JSON `{"<video-id>": [[score, start_s, end_s], ...]}`.
    #[arg(long)]
    pub out_json: PathBuf,
}

fn model_path(flag: Option<&PathBuf>, configured: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or(configured)
        .cloned()
        .ok_or_else(|| CliError::usage(format!("--model is required (or set {what} in the config)")))
}

fn unique_ids(paths: &[PathBuf]) -> CliResult<Vec<String>> {
    let mut seen = HashSet::new();
    let ids: Vec<String> = paths.iter().map(|p| video_id(p)).collect();
    for (id, p) in ids.iter().zip(paths) {
        if !seen.insert(id.clone()) {
            return Err(CliError::format(format!("duplicate video id {id:?} from {}", p.display())));
        }
    }
    Ok(ids)
}

fn load(path: &Path, fps: Option<f64>) -> CliResult<FeatureSequence> {
    let seq = read_features_file(path).map_err(|e| CliError::from(e).at(path))?;
    if let Some(f) = fps {
        if (seq.fps - f).abs() > 1e-3 {
            return Err(CliError::semantics(format!("{}: features at {} fps, --fps {f}", path.display(), seq.fps)));
        }
    }
    Ok(seq)
}

pub fn run_infer(g: &Globals, a: InferArgs) -> CliResult<()> {
    let path = model_path(a.model.as_ref(), g.config.classifier_model.as_ref(), "classifier_model")?;
    let model = load_model(&path)?;
    model.expect_kind(ModelKind::Classifier).map_err(|e| CliError::from(e).at(&path))?;
    let ids = unique_ids(&a.features)?;
    let threads = g.config.threads(g.threads)?;
    let results = parallel_map(&a.features, threads, |p| {
        let seq = load(p, g.config.fps)?;
        classify_sequence(&model, &seq).map_err(|e| CliError::from(e).at(p))
    })?;
    let mut records = Vec::with_capacity(ids.len());
    for (id, r) in ids.into_iter().zip(results) {
        if g.verbose {
            eprintln!("{id}: {} windows, score {:.6}", r.window_scores.len(), r.score);
        }
        records.push(ScoreRecord { id, score: r.score, label: None });
    }
    let mut w = create(&a.out_scores)?;
    write_scores(&mut w, &records).and_then(|_| w.flush()).map_err(|e| io_error(&a.out_scores, e))
}

pub fn run_localize(g: &Globals, a: LocalizeArgs) -> CliResult<()> {
    let path = model_path(a.model.as_ref(), g.config.localizer_model.as_ref(), "localizer_model")?;
    let model = load_model(&path)?;
    model.expect_kind(ModelKind::Localizer).map_err(|e| CliError::from(e).at(&path))?;
    let ids = unique_ids(&a.features)?;
    let threads = g.config.threads(g.threads)?;
    let fps = a.fps.or(g.config.fps);
    let results = parallel_map(&a.features, threads, |p| {
        let seq = load(p, fps)?;
        localize_sequence(&model, &seq).map_err(|e| CliError::from(e).at(p))
    })?;
    let mut out = LocalizationOutput::new();
    for (id, r) in ids.into_iter().zip(results) {
        if g.verbose {
            eprintln!("{id}: {} windows, {} segments", r.windows, r.segments.len());
        }
        out.insert(id, to_output_rows(&r.segments));
    }
    write_json(&a.out_json, &out)
}
