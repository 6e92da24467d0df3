//! Rotation-invariant point cloud classification from PCA intrinsic frames.
//!
//! A cloud is re-expressed in the eigenbasis of its own covariance. Each
//! eigenvector's sign is arbitrary, so all eight sign-resolved poses are
//! kept ([`canonical::canonical_set`]); a shared encoder embeds every pose
//! and a symmetric fusion ([`neural::fusion`]) merges them. The result does
//! not depend on how the input was rotated.

pub mod analysis;
pub mod canonical;
pub mod eigen3;
pub mod geometry;
pub mod ingest;
pub mod neural;
pub mod seed;
pub mod train;
