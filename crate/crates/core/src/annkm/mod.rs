//! Approximate nearest neighbour search and k-means.

pub mod forest;
pub mod kmeans;

pub use forest::{brute_force_nearest, ForestParams, KdForest, Neighbor, DEFAULT_MAX_COMPARISONS, DEFAULT_TREES};
pub use kmeans::{
    ann_kmeans, farthest_point_seed, kmeanspp_seed, KMeansMode, KMeansParams, KMeansResult, Seeding,
    ANN_CENTER_THRESHOLD,
};
