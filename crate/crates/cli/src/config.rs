//! Training configuration from a `key = value` file plus command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use elcrf::{Scheme, TrainConfig};

use crate::CliError;

/// Hyperparameter flags shared by the commands that train models.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperFlags {
    /// `key = value` file with hyperparameters; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Total hidden states M (default: three per label).
    #[arg(long, value_name = "M")]
    pub hidden_states: Option<usize>,
    /// Rank k of the transition factors.
    #[arg(long, value_name = "K")]
    pub factor_size: Option<usize>,
    /// Learn a dense M×M transition matrix instead of factors.
    #[arg(long)]
    pub full_rank: bool,
    #[arg(long, value_name = "iob|iobes")]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub emb_dim: Option<usize>,
    /// Context tokens on each side of the current one.
    #[arg(long)]
    pub window: Option<usize>,
    /// Keep digits as they are instead of mapping them to 0.
    #[arg(long)]
    pub keep_digits: bool,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("config line {line}: bad value {value:?} for {key}: {e}")))
}

/// Applies `key = value` lines to `config`. Blank lines and lines starting
/// with `#` are skipped; keys may use `-` or `_`.
pub fn apply_config_text(config: &mut TrainConfig, text: &str) -> Result<(), CliError> {
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(CliError::Usage(format!("config line {line}: expected key = value")));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "hidden-states" => config.hidden_states = Some(parse(&key, value, line)?),
            "factor-size" => config.factor_size = parse(&key, value, line)?,
            "full-rank" => config.full_rank = parse(&key, value, line)?,
            "scheme" => config.scheme = parse(&key, value, line)?,
            "lr" | "learning-rate" => config.learning_rate = parse(&key, value, line)?,
            "lr-decay" => config.lr_decay = parse(&key, value, line)?,
            "clip" => config.clip_norm = parse(&key, value, line)?,
            "dropout" => config.dropout_p = parse(&key, value, line)?,
            "epochs" => config.max_epochs = parse(&key, value, line)?,
            "patience" => config.patience = parse(&key, value, line)?,
            "seed" => config.seed = parse(&key, value, line)?,
            "batch-size" => config.batch_size = parse(&key, value, line)?,
            "emb-dim" => config.emb_dim = parse(&key, value, line)?,
            "window" => config.window = parse(&key, value, line)?,
            "normalize-digits" => config.normalize_digits = parse(&key, value, line)?,
            _ => return Err(CliError::Usage(format!("config line {line}: unknown key {key:?}"))),
        }
    }
    Ok(())
}

fn read_config_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))
}

impl HyperFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut config = TrainConfig::default();
        if let Some(path) = &self.config {
            apply_config_text(&mut config, &read_config_file(path)?)?;
        }
        if let Some(m) = self.hidden_states {
            config.hidden_states = Some(m);
        }
        if self.full_rank {
            config.full_rank = true;
        }
        if self.keep_digits {
            config.normalize_digits = false;
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { config.$field = v; })*
            };
        }
        set!(
            factor_size => factor_size,
            scheme => scheme,
            lr => learning_rate,
            lr_decay => lr_decay,
            clip => clip_norm,
            dropout => dropout_p,
            epochs => max_epochs,
            patience => patience,
            seed => seed,
            batch_size => batch_size,
            emb_dim => emb_dim,
            window => window
        );
        config.validate()?;
        Ok(config)
    }
}
