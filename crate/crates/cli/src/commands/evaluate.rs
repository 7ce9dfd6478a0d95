use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use klassify_core::calibration::{read_scores, ScoreRecord};
use klassify_core::localization::{from_output_rows, LocalizationOutput, Segment};
use klassify_core::metrics::{auc, temporal_iou, video_recall_at_n, EvalPair, MetricsReport, ScoreComponents, AR_COUNTS};
use klassify_core::training::ManifestEntry;

use crate::config::{create, open, read_json, write_json};
use crate::error::{io_error, CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Localization JSON to score.
    #[arg(long, required_unless_present = "components")]
    pub pred: Option<PathBuf>,
    /// Ground-truth corpus manifest.
    #[arg(long, required_unless_present = "components")]
    pub truth: Option<PathBuf>,
    /// Classifier scores (`video_id;score`) for the AUC, labels taken from the manifest.
    #[arg(long, requires = "truth")]
    pub scores: Option<PathBuf>,
    /// Precomputed `{"ap": [4], "ar": [5]}` components, scored directly.
    #[arg(long, conflicts_with = "pred")]
    pub components: Option<PathBuf>,
    /// Output metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-video diagnostics CSV.
    #[arg(long)]
    pub per_video: Option<PathBuf>,
}

fn truth_entries(path: &Path) -> CliResult<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = read_json(path)?;
    let mut seen = HashSet::new();
    for e in &entries {
        let id = e.video_id();
        if !seen.insert(id.clone()) {
            return Err(CliError::format(format!("{}: duplicate video id {id:?}", path.display())));
        }
        if e.label > 1 {
            return Err(CliError::format(format!("{}: label {} of {id:?} is not 0 or 1", path.display(), e.label)));
        }
        for s in &e.segments {
            if !(s[0].is_finite() && s[1].is_finite() && 0.0 <= s[0] && s[0] < s[1]) {
                return Err(CliError::format(format!("{}: invalid segment [{}, {}] of {id:?}", path.display(), s[0], s[1])));
            }
        }
    }
    Ok(entries)
}

fn classification_auc(path: &Path, truth: &[ManifestEntry]) -> CliResult<f64> {
    let records: Vec<ScoreRecord> = read_scores(open(path)?).map_err(|e| CliError::from(e).at(path))?;
    let labels: BTreeMap<String, bool> = truth.iter().map(|e| (e.video_id(), e.label == 1)).collect();
    let mut s = Vec::with_capacity(records.len());
    let mut l = Vec::with_capacity(records.len());
    for r in &records {
        let label = labels
            .get(&r.id)
            .ok_or_else(|| CliError::semantics(format!("{}: {:?} is not in the ground truth", path.display(), r.id)))?;
        s.push(r.score);
        l.push(*label);
    }
    Ok(auc(&s, &l)?)
}

fn write_per_video(path: &Path, pairs: &[EvalPair]) -> CliResult<()> {
    let mut w = create(path)?;
    let mut run = || -> std::io::Result<()> {
        write!(w, "video_id,truth_segments,predicted_segments,best_iou_mean")?;
        for n in AR_COUNTS {
            write!(w, ",recall_at_{n}")?;
        }
        writeln!(w)?;
        for p in pairs {
            let best_iou = if p.truth.is_empty() {
                f64::NAN
            } else {
                p.truth
                    .iter()
                    .map(|t| p.predictions.iter().map(|q| temporal_iou(q, t)).fold(0.0, f64::max))
                    .sum::<f64>()
                    / p.truth.len() as f64
            };
            write!(w, "{},{},{},{}", p.video_id, p.truth.len(), p.predictions.len(), best_iou)?;
            for n in AR_COUNTS {
                if p.truth.is_empty() {
                    write!(w, ",")?;
                } else {
                    write!(w, ",{}", video_recall_at_n(p, n))?;
                }
            }
            writeln!(w)?;
        }
        w.flush()
    };
    run().map_err(|e| io_error(path, e))
}

pub fn run(_g: &Globals, a: EvaluateArgs) -> CliResult<()> {
    let truth = a.truth.as_deref().map(truth_entries).transpose()?;
    let metric_auc = match (&a.scores, &truth) {
        (Some(p), Some(t)) => Some(classification_auc(p, t)?),
        _ => None,
    };
    let components = if let Some(path) = &a.components {
        read_json::<ScoreComponents>(path)?
    } else {
        let (pred_path, truth) = (a.pred.as_ref().expect("clap enforces --pred"), truth.as_ref().expect("clap enforces --truth"));
        let pred: LocalizationOutput = read_json(pred_path)?;
        let known: HashSet<String> = truth.iter().map(|e| e.video_id()).collect();
        let unknown = pred.keys().filter(|k| !known.contains(*k)).count();
        if unknown > 0 {
            eprintln!("warning: {unknown} predicted video ids are not in the ground truth and were ignored");
        }
        let mut pairs = Vec::with_capacity(truth.len());
        for e in truth {
            let id = e.video_id();
            let predictions = match pred.get(&id) {
                Some(rows) => from_output_rows(rows).map_err(|err| CliError::format(format!("{}: {id:?}: {err}", pred_path.display())))?,
                None => Vec::new(),
            };
            pairs.push(EvalPair {
                truth: e.segments.iter().map(|s| Segment::span(s[0], s[1])).collect(),
                video_id: id,
                predictions,
            });
        }
        if let Some(p) = &a.per_video {
            write_per_video(p, &pairs)?;
        }
        ScoreComponents::compute(&pairs)?
    };
    let report = MetricsReport::from_components(&components, metric_auc);
    write_json(&a.out, &report)?;
    println!("score {:.4}", report.score);
    Ok(())
}
