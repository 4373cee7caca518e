//! Cloud-side learning from data and from recycled device models.

mod basis;
mod encoder;
mod teacher;
mod trace;
mod train;

pub use crate::tensor::ops::kl_bernoulli;
pub use basis::{basis_loss, distill_basis, pretrain_basis, BasisBatch, BASIS_INIT_STD};
pub use encoder::{encode, encode_nodes, AuxEncoderParams, ENC_W1, ENC_W2, ENC_W3};
pub use teacher::TeacherBundle;
pub use trace::encode_loss_trace;
pub use train::{backbone_loss, distill_backbone, incremental_train, DistillConfig, EpochLoss, TrainReport};
