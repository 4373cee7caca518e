//! Ingestion, synthetic generation, filtering and leave-one-out splits.

mod dataset;
mod filter;
mod log;
pub mod movielens;
mod split;
pub mod store;
mod synth;

pub use dataset::{sample_unseen, sample_unseen_distinct, Dataset, SampleRef};
pub use filter::{filter_min_interactions, FilterReport};
pub use log::{Interaction, InteractionLog, UserProfile, PROFILE_DIM};
pub use movielens::{parse_movielens, MovieLens};
pub use split::{build_splits, EvalCase, SplitPlan, Splits, UserSplit};
pub use store::{load_dataset, save_dataset, Manifest};
pub use synth::{synth_generate, SynthSpec, SynthTruth};
