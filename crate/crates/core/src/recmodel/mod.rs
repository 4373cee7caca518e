//! The cloud recommendation model: embeddings, target attention over the
//! behaviour history, an MLP tower, and the three patch junctions.

mod batch;
pub mod checkpoint;
mod config;
mod forward;
mod params;
mod patch;

pub use batch::{Batch, BatchBuilder, Sample};
pub use config::{patch_dims, BackboneConfig, Junction, PatchDims, PatchSite};
pub use forward::{
    apply_patch, backbone_forward, expand_patch_rows, patched_forward, EmbedNodes, Embedded, Projections, Scorer,
    TowerNodes,
};
pub use params::BackboneParams;
pub use patch::{DevicePatches, GeneratedPatch, PatchGate};

pub mod names {
    pub use super::params::{
        CAT_EMB, ITEM_EMB, K_CAT, K_ITEM, OUT_B, OUT_W, Q_CAT, Q_ITEM, TOWER_B, TOWER_W, USER_EMB, V_CAT, V_ITEM,
    };
}
