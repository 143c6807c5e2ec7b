//! Data-collection policies, trajectory sampling and empirical distributions.

mod dataset;
mod empirical;
mod policy;

pub use dataset::{
    mix_datasets, read_dataset, sample_trajectories, write_dataset, DatasetMeta, Record,
    TransitionDataset, DATASET_FORMAT_VERSION, MAX_EPISODE_LEN,
};
pub use empirical::{EmpiricalDistribution, Tuple, Weighting};
pub use policy::{
    build_data_policy, build_limited_policy, project_occupancy, DataPolicySpec, PolicyMode,
    ALGORITHM_GUARD,
};
