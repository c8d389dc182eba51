//! Multi-domain camera-style translation: one conditional generator and one
//! discriminator with a real/fake head and a camera-classification head,
//! trained with adversarial, domain and cycle-reconstruction losses.

mod losses;
mod model;
mod train;
mod translate;

pub use losses::{adversarial_loss, domain_loss, domain_loss_batch, reconstruction_loss, DomainLoss, DOMAIN_EPS};
pub use model::{code_planes, CameraCode, DiscOut, Discriminator, Generator, GeneratorAdv, TransferConfig, TranslationModel, CHECKPOINT_KIND};
pub use train::{
    domain_accuracy, train_transfer, train_transfer_on, transfer_losses, transfer_step, write_transfer_log, TransferLogRow,
    TransferLossReport, TransferStep,
};
pub use translate::{default_target_camera, translate_dataset, TranslateOptions, TranslateScope};
