//! Geometry of point-cloud manifolds from a conformally invariant diffusion map (CIDM).
//!
//! The crate is organised bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`cidm`] | kNN-rescaled kernel, graph Laplacian and its eigenbasis |
//! | [`nystrom`] | out-of-sample extension, regression and the nonlinear projection onto the manifold |
//! | [`sec`] | vector fields from the spectral exterior calculus, pushforward arrows, tangent frames, local PCA baseline |
//! | [`ompgd`] | on-manifold projected gradient steps against a classifier oracle |
//! | [`synth`] | synthetic manifolds with ground-truth intrinsic parameters |
//!
//! All fitted objects are immutable and can be shared between threads.

pub mod cidm;
pub mod cloud;
pub mod error;
pub mod linalg;
pub mod nystrom;
pub mod ompgd;
pub mod sec;
pub mod synth;

pub use cidm::{CidmConfig, CidmModel, KernelVariant, ScaleMode, Shape};
pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use nystrom::NystromProjector;
pub use sec::{SecBasisConfig, SecFrame};

