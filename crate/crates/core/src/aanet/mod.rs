//! AANet: a shared stem feeding a global two-stream branch and upper/lower
//! local branches. Each local branch aligns its half of the stem map with a
//! spatial transformer, re-weights channels with an attention mask and ends
//! in its own identity classifier.

mod attention;
mod backbone;
mod loss;
mod model;
mod stn;
mod train;

pub use attention::{apply_attention, attention_mask, AttentionModule};
pub use backbone::{Backbone, BlockKind, ResidualBlock};
pub use loss::{ce_loss, total_loss, total_loss_var, LossWeights};
pub use model::{AANet, AANetConfig, AANetOutput};
pub use stn::{AlignmentModule, IDENTITY_THETA};
pub use train::{
    class_list, reid_losses, reid_step, train_reid, train_reid_on, write_log_csv, ReidLogRow, ReidModel, ReidStep, ReidTrainConfig,
    CHECKPOINT_KIND,
};
