//! Training and evaluation orchestration: multi-seed runs, cost-rate
//! bookkeeping, greedy evaluation, reports, and an exactly solvable chain
//! CMDP used to check the learners.

mod chain;
mod eval;
mod metrics;
mod report;
mod river_task;
mod run;

use thiserror::Error;

use crate::ndmath::NdError;
use crate::vision_codec::CodecError;

pub use chain::{one_hot, oracle_solve_chain_cmdp, ChainCmdpSpec, ChainEnv, OracleSolution, PolicyValue};
pub use eval::{evaluate_policy, failure_histogram, EpisodeEval, EvalReport, FailureHistogram, MeanStd, EVAL_SEED};
pub use metrics::{cost_rate, read_metrics, write_metrics, CostCounter, CostRates, MetricsRow, MovingAverage, CSV_HEADER, MA_WINDOW};
pub use report::{collect_inputs, curve_data, report, summary_table, ReportInputs, ReportOutput, RunCurves};
pub use river_task::EncodedRiverEnv;
pub use run::{
    evaluate_run, load_policy, load_vae, run_training, train_agent, train_encoder, RunConfig, RunManifest,
    TrainOutcome, MANIFEST_FILE, VAE_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("no policy satisfies the budget; the cheapest costs {best_cost}")]
    Infeasible { best_cost: f64 },
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
