//! Batch assembly, the multimodal loss, the optimization loop and sweeps.

pub mod batch;
pub mod config;
pub mod pipeline;
pub mod trainer;

pub use batch::{batch_sizes, make_batch, Batch, RayRef};
pub use config::{LossWeights, LrSchedule, SamplingConfig, TrainConfig};
pub use pipeline::{
    check_gradients, compute_gradients, loss_from_outputs, render_rays, sample_positions,
    LossBreakdown,
};
pub use trainer::{
    prepare_model, pretrain_lidar_grid, train, LogRow, RngSet, TrainReport, LOG_HEADER,
};
