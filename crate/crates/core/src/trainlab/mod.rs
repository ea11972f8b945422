//! Training, baselines and the ablation harness.

mod ablation;
mod adam;
mod checkpoint;
mod config;
mod data;
mod train;
mod tv;

pub use ablation::{ablation_grid, run_ablation, test_metrics, write_ablation_csv, AblationCell, AblationRow, CellMetrics};
pub use adam::{step_lr, Adam};
pub use checkpoint::Checkpoint;
pub use config::{AblationSwitches, TrainConfig};
pub use data::{degrade_windows, mix_seed, slice_seed, split_dataset, thread_budget, windows_of, Batch, PhantomSet, Split, WindowRef};
pub use train::{
    decision_error_correlation, evaluate_generator, reconstruct_volume, validation_tv, model_seeds, pearson, train_hpalf, write_history_csv,
    write_steps_csv, EpochRecord, Evaluation, StepLog, TrainOutcome, TrainReport,
};
pub use tv::{reconstruct_tv, tv_objective, TvConfig, TvResult, MAX_HALVINGS, TV_EPS};
