//! Ensemble of clustered knockoffs (ECKO).
//!
//! FDR-controlled support recovery for high-dimensional linear models whose
//! features live on a voxel grid. Voxels are grouped by spatially-constrained
//! Ward clustering, knockoff inference runs on the cluster averages, and
//! q-values from many clusterings and knockoff draws are pooled back onto the
//! voxels. Selections come with the spatial tolerance `delta` (the largest
//! cluster diameter) at which their false discovery rate is controlled.
//!
//! Module map:
//! - [`geometry`], [`types`], [`seed`]: voxel grid, datasets, seeding
//! - [`linmodel`]: lasso by coordinate descent and cross-validated penalty
//! - [`knockoff`]: Gaussian model-X knockoffs, LCD statistic, p-values
//! - [`multtest`]: quantile aggregation, Benjamini-Hochberg, thresholding
//! - [`cluster`]: subsampling, constrained Ward, reduction and broadcast
//! - [`pipeline`]: the full ensemble and its single-clustering baseline
//! - [`simdata`]: synthetic structured datasets
//! - [`metrics`]: FDP, delta-FDP, precision/recall and the SNR sweep

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod cluster;
pub mod error;
pub mod geometry;
pub mod knockoff;
pub mod linmodel;
pub mod metrics;
pub mod multtest;
pub mod pipeline;
pub mod seed;
pub mod simdata;
pub mod types;

pub use error::{EckoError, Result};
pub use geometry::{voxel_distance, GridGeometry};
pub use pipeline::{run_cko, run_ecko, EckoParams, EckoTrace};
pub use seed::derive_seed;
pub use types::{Dataset, GroundTruth, SelectionResult};
