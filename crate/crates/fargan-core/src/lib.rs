//! Desk-scale laboratory for fake-as-real GAN training on finite 2-D
//! datasets: a small taped autodiff engine with double-backprop support,
//! the synthetic-experiment MLPs, minibatch training with fake-as-real
//! selection, numerical verifiers for the accompanying propositions, and
//! the evaluation metrics that make mode collapse measurable.

pub mod data;
pub mod metrics;
pub mod mlp;
pub mod numerics;
pub mod objectives;
pub mod tape;
pub mod tensor;
pub mod theory;
pub mod trainer;

pub use data::{
    generate_real, sample_latent, sample_real_batch, DatasetKind, DatasetSpec, RealDataset,
};
pub use mlp::{MlpCheckpoint, MlpParams, MlpSpec, MlpVars};
pub use objectives::{
    d_objective, g_objective, generator_grad_indicator, interpolate_anchors, zero_gp,
    BatchOutputs, LossKind, PenaltyKind,
};
pub use tape::{OpKind, Tape, TapeError, VarRef};
pub use tensor::Tensor;
pub use metrics::{
    close_pairs, loss_deviation, mode_coverage, ClosePairConfig, ClosePairStats,
    LossDeviationSummary, MetricSnapshot, ModeCoverageReport,
};
pub use theory::{
    brute_force_max, build_constructed, constructed_objective, construction_deviations,
    run_sweep, solve_prop2, solve_prop3, sweep_to_csv, unit_circle_dataset,
    ConstructedDiscriminator, PropositionProblem, SolveResult, SweepGrid, SweepReport,
    TheoryError, UnitDataset,
};
pub use trainer::{
    d_step, g_step, rmsprop_update, select_far, train, trace_to_csv, ExperimentReport,
    RmspropState, RunOutput, TrainConfig, TrainError, TrainerState,
};
