//! Device-side personalization through basis-generated patches.

mod basis;
mod device;
mod recycle;

pub use basis::{generate_patches, patch_rows, MetaPatchVector, ParamBasis, BASIS_NAMES, DEFAULT_CODE_DIM};
pub use device::{local_loss, personalize, DeviceContext, DeviceOutcome, DeviceState, DeviceStatus, LocalTrainConfig, CODE_PARAM};
pub use recycle::{decode_recycle, encode_recycle, export_patch_row, read_recycle, write_recycle};
