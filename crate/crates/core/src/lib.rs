//! Desk-scale workbench for 3D exterior Laplace/Helmholtz multiple scattering:
//! a dense single-layer boundary element solver generates ground-truth boundary
//! traces, and a multiscale message-passing network learns to predict them.

pub mod bem;
pub mod cli;
pub mod dataset;
pub mod features;
pub mod fieldgrid;
pub mod geometry;
pub mod graphs;
pub mod mat;
pub mod metrics;
pub mod nn;
pub mod problems;
pub mod vec3;

pub use bem::{BoundaryTrace, GmresReport, Kernel};
pub use dataset::{DatasetManifest, SampleRecord};
pub use geometry::{Ellipsoid, Scene, TriangleMesh};
pub use problems::{ProblemSpec, ProblemVariant};
