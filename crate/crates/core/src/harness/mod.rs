//! Experiment drivers and report tables behind the command-line tool.
//!
//! Every table is a pure function of its inputs and is rendered with
//! [`fmt_g`], so reruns with the same configuration and seeds produce
//! byte-identical CSV files. Independent seed runs execute in parallel and
//! are merged in seed order.

mod experiments;
mod gradcheck;
mod report;
mod significance;

use std::fmt;
use std::str::FromStr;

pub use experiments::{
    ablation_medians, ablation_table, asymmetric_table, eval_table, evaluate_model, history_table, median,
    predictions_table, quantile, run_ablation, run_asymmetric, summarize_asymmetric, toggle_label, train_seeds,
    AblationRow, AsymmetricData, AsymmetricRun, AsymmetricSetup, AsymmetricSummary, Toggles, ABLATION_GRID,
    ASYMMETRIC_CONDITIONS, ASYMMETRIC_MODELS,
};
pub use gradcheck::{
    gradcheck_batch, gradcheck_model, GradcheckReport, GradcheckRow, GRADCHECK_EPSILON, GRADCHECK_TOLERANCE,
};
pub use report::{fmt_g, sha256_hex, RunMeta, Table};
pub use significance::{aligned_mos, compare_predictions, read_predictions, PredictionFile, SignificanceOutcome};

use crate::error::{Error, Result};
use crate::model::TrainHyper;

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
/// Runs per model in the cross-condition experiment.
pub const ASYMMETRIC_RUNS: usize = 5;

/// Named training hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Learning rate raised for the small synthetic model.
    #[default]
    Desk,
    /// Reference settings for large pretrained backbones.
    Paper,
}

impl Preset {
    pub fn hyper(self) -> TrainHyper {
        match self {
            Self::Desk => TrainHyper::desk(),
            Self::Paper => TrainHyper::paper(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }
}
