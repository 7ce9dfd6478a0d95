use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use klassify_core::features::{extract_features, write_features, write_landmarks_jsonl, FeatureConfig};
use klassify_core::synth::{generate_clip, SynthSpec};
use klassify_core::training::ManifestEntry;

use crate::config::{create, parallel_map, read_json, write_json};
use crate::error::{io_error, CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec JSON; unspecified fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write only feature files and the manifest, skipping landmarks and raw frames.
    #[arg(long)]
    pub features_only: bool,
}

fn write_clip(dir: &Path, spec: &SynthSpec, index: usize, features_only: bool) -> CliResult<ManifestEntry> {
    let clip = generate_clip(spec, index);
    let features = extract_features(&clip.landmarks, &clip.frames, &FeatureConfig::default())?;
    let rel = PathBuf::from("clips").join(format!("{}.klft", clip.id));
    let path = dir.join(&rel);
    let mut w = create(&path)?;
    write_features(&mut w, &features).map_err(|e| CliError::from(e).at(&path))?;
    w.flush().map_err(|e| io_error(&path, e))?;
    if !features_only {
        let lm = dir.join("clips").join(format!("{}.landmarks.jsonl", clip.id));
        let mut w = create(&lm)?;
        write_landmarks_jsonl(&mut w, &clip.landmarks).map_err(|e| CliError::from(e).at(&lm))?;
        w.flush().map_err(|e| io_error(&lm, e))?;
        let raw = dir.join("clips").join(format!("{}.rgb", clip.id));
        let mut w = create(&raw)?;
        w.write_all(clip.frames.bytes()).and_then(|_| w.flush()).map_err(|e| io_error(&raw, e))?;
    }
    Ok(ManifestEntry {
        id: Some(clip.id),
        features: rel,
        label: u8::from(clip.label),
        segments: clip.segments.iter().map(|&(a, b)| [a, b]).collect(),
    })
}

pub fn run(g: &Globals, a: SynthArgs) -> CliResult<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => g.config.synth.clone(),
    };
    if let Some(n) = a.clips {
        spec.clips = n;
    }
    if let Some(s) = a.seed.or(g.config.seed) {
        spec.seed = s;
    }
    spec.validate().map_err(CliError::semantics)?;
    let threads = g.config.threads(g.threads)?;
    let indices: Vec<usize> = (0..spec.clips).collect();
    let manifest = parallel_map(&indices, threads, |&i| write_clip(&a.out_dir, &spec, i, a.features_only))?;
    write_json(&a.out_dir.join("spec.json"), &spec)?;
    write_json(&a.out_dir.join("manifest.json"), &manifest)?;
    if g.verbose {
        let fakes = manifest.iter().filter(|e| e.label == 1).count();
        eprintln!("{} clips ({fakes} fake) in {}", manifest.len(), a.out_dir.display());
    }
    Ok(())
}
