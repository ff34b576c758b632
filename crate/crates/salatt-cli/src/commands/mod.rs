pub mod eval;
pub mod gen_toy;
pub mod gradcheck;
pub mod train;
pub mod visualize;

pub use eval::{cmd_eval, EvalArgs};
pub use gen_toy::{cmd_gen_toy, GenToyArgs};
pub use gradcheck::{cmd_gradcheck, run_gradcheck, GradcheckArgs, GRADCHECK_THRESHOLD};
pub use train::{cmd_train, render_metrics_csv, TrainArgs};
pub use visualize::{cmd_visualize, VisualizeArgs};

use std::path::PathBuf;

use salatt_core::error::Result;

use crate::config::RunConfig;

/// Defaults, then the config file, then `--set key=value` pairs. Typed flags
/// are applied by each command afterwards, so they win over everything.
pub(crate) fn resolve_config(file: &Option<PathBuf>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        cfg.load_file(path)?;
    }
    for pair in sets {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            salatt_core::error::Error::config(format!("--set expects key=value, got `{pair}`"))
        })?;
        cfg.set(key.trim(), value.trim(), None)?;
    }
    Ok(cfg)
}
