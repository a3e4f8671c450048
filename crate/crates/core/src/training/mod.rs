//! Losses, analytic gradients, the desk-scale optimizer loop, and the
//! multitask batch scheduler.
//!
//! The combined moment-retrieval loss is
//!
//! ```text
//! L_RET  = InfoNCE(g_start vs start targets) + InfoNCE(g_end vs end targets)
//! L_CVMR = L_RET / 2 + L_PGAG
//! ```
//!
//! with in-batch negatives on both InfoNCE terms and the text term supplied
//! as a token probability table (no language model runs here). Targets are
//! precomputed region averages by default (stop-gradient); a live-target
//! variant recomputes them from `w_ret` and propagates gradients into it.

mod grad;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use grad::{cvmr_grad, cvmr_grad_live, LiveGrads, LiveRetrievalBatch, RegionFrames, RetrievalGrads};
pub use loss::{cvmr_loss, infonce, nll_loss, LossParts, RetrievalBatch, TokenProbTable, TokenStep};
pub use optim::{AdamWParams, OptState, ParamSlot};
pub use schedule::{load_schedule, multitask_schedule, TrainSchedule, TrainStage, Trainable};
pub use trainer::{
    train_head, train_head_live, write_trace_csv, BatchSource, ShuffledBatches, ShuffledLiveBatches,
    TraceRow,
};
