//! Separation metrics, the leak sweep and mismatch experiments, and the
//! delayed-recall memory probe.

mod probe;
mod sdr;
mod sweep;

pub use probe::{binomial_two_sided, memory_probe, probe_cell, ProbeConfig, ProbeRow};
pub use sdr::{evaluate_separation, score_mixture, si_sdr, MixtureScore, SdrReport, SDR_CAP_DB};
pub use sweep::{
    merge_rows, mismatch_experiment, mismatch_from_models, read_sweep_csv, summarize, sweep_leak, train_and_evaluate,
    write_sweep_csv, ExperimentContext, MismatchRow, SweepCell, SweepConfig, SweepRow, SweepSummary, TrainedCell,
    SWEEP_COLUMNS,
};
