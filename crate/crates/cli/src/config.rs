//! Pipeline configuration file and shared file helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use klassify_core::models::SavedModel;
use klassify_core::synth::SynthSpec;
use klassify_core::training::TrainConfig;

use crate::error::{io_error, json_error, CliError, CliResult};

pub const THREADS_ENV: &str = "KLASSIFY_THREADS";

/// Top-level JSON config loadable with `--config`; command-line flags take
/// precedence over every field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fps: Option<f64>,
    pub lip_config: Option<PathBuf>,
    pub roi_margin: Option<f64>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub classifier_model: Option<PathBuf>,
    pub localizer_model: Option<PathBuf>,
    pub audio_calibration: Option<PathBuf>,
    pub video_calibration: Option<PathBuf>,
    pub training: TrainConfig,
    pub synth: SynthSpec,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }

    /// `--threads`, then the config, then `KLASSIFY_THREADS`, then 1.
    pub fn threads(&self, flag: Option<usize>) -> CliResult<usize> {
        let from_env = match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        };
        let n = flag.or(self.threads).or(from_env).unwrap_or(1);
        if n == 0 {
            return Err(CliError::usage("thread count must be positive"));
        }
        Ok(n)
    }

    /// Training config with the top-level seed, window and stride folded in.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.training.clone();
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(s) = self.stride {
            cfg.stride = s;
        }
        cfg
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| json_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| json_error(path, e))?;
    writeln!(w).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_error(path, e))
}

pub fn load_model(path: &Path) -> CliResult<SavedModel> {
    SavedModel::read(open(path)?).map_err(|e| CliError::from(e).at(path))
}

/// Video id of a feature file: its name without the extension.
pub fn video_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Maps in input order on a pool of `threads` workers.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> CliResult<R> + Sync + Send,
{
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>()).into_iter().collect()
}
