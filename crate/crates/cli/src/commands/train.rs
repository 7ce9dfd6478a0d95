use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use klassify_core::models::ModelKind;
use klassify_core::training::{load_corpus, train_classifier, train_localizer, write_history_csv, AugmentationConfig, TrainConfig};

use crate::config::{create, load_model};
use crate::error::{io_error, CliError, CliResult};
use crate::Globals;

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Corpus manifest JSON.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Per-epoch history CSV (defaults to the model path with `.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Train without augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.optimizer.total_epochs = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.optimizer.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.val_fraction {
            cfg.val_fraction = v;
        }
        if let Some(v) = self.max_frames {
            cfg.max_frames = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if self.no_augment {
            cfg.augmentation = AugmentationConfig {
                seed: cfg.augmentation.seed,
                ..AugmentationConfig::disabled()
            };
        }
    }
}

pub fn run(g: &Globals, flags: TrainFlags, localizer: bool, init: Option<PathBuf>) -> CliResult<()> {
    let mut cfg = g.config.train_config();
    flags.apply(&mut cfg);
    let corpus = load_corpus(&flags.manifest).map_err(|e| CliError::from(e).at(&flags.manifest))?;
    let outcome = if localizer {
        let init_model = match &init {
            Some(p) => {
                let m = load_model(p)?;
                m.expect_kind(ModelKind::Classifier).map_err(|e| CliError::from(e).at(p))?;
                Some(m)
            }
            None => None,
        };
        train_localizer(&corpus, &cfg, init_model.as_ref().map(|m| &m.model))?
    } else {
        train_classifier(&corpus, &cfg)?
    };

    let mut w = create(&flags.out_model)?;
    outcome.model.write(&mut w).map_err(|e| CliError::from(e).at(&flags.out_model))?;
    w.flush().map_err(|e| io_error(&flags.out_model, e))?;
    let history = flags.history.clone().unwrap_or_else(|| flags.out_model.with_extension("history.csv"));
    let mut h = create(&history)?;
    write_history_csv(&mut h, &outcome.history).and_then(|_| h.flush()).map_err(|e| io_error(&history, e))?;

    let best = outcome.history.iter().find(|r| r.epoch == outcome.best_epoch);
    println!(
        "selected epoch {} of {} (val_metric {:.6}); {} train / {} validation clips; {} parameters",
        outcome.best_epoch,
        outcome.history.len(),
        best.map_or(f64::NAN, |r| r.val_metric),
        outcome.train_clips,
        outcome.val_clips,
        outcome.model.model.param_count()
    );
    Ok(())
}
