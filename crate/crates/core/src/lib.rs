//! Finite-plane extraction from organized 3-D range scans.
//!
//! The crate is organized around a probabilistic agglomerative clustering
//! engine that grows planes bottom-up, always applying the clustering action
//! with the smallest increase of the total squared radial error of the scan:
//!
//! - [`geometry`]: rays, planes, ray-plane intersection, the squared radial
//!   error functional, and the maximum-likelihood radial plane fit.
//! - [`cluster`]: the greedy clustering engine (tetromino seeding, extension,
//!   merging, stopping criteria, geometric outlier filter).
//! - [`msac`]: an MSAC baseline that repeatedly samples plane hypotheses and
//!   removes inliers.
//! - [`synth`]: synthetic benchmark scans (polyhedral scenes, spherical
//!   raycasting, Gaussian angular/radial noise, ground-truth labels).
//! - [`eval`]: segmentation comparison metrics (correct/over/under/missed/
//!   spurious classifications, k-value, RMSE).
//! - [`scanio`]: text file formats for scans, label images, and plane lists.

pub mod cluster;
pub mod eval;
pub mod geometry;
pub mod msac;
pub mod scanio;
pub mod synth;

pub use geometry::{OrganizedScan, Plane, PlaneGeometry, Ray};
