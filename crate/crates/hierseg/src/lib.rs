//! Hierarchy-aware multi-class volumetric segmentation machinery.
//!
//! The crate implements the full desk-scale stack for hierarchical vessel
//! segmentation experiments:
//!
//! - [`tree`] — the semantic class hierarchy `T = (V, E)` with level sets,
//!   subclass/superclass queries and label projection,
//! - [`volume`] — 3D label/scalar/logit grids with physical spacing and
//!   bit-exact `.vgrid` file I/O,
//! - [`softmax`] — fractal softmax (recursive max-lifting of leaf logits up
//!   the tree, per-level softmax), a constraint verifier and hierarchical
//!   decoding,
//! - [`loss`] — the multi-level cross-entropy + soft Dice + centerline
//!   topology objective with hand-derived analytic gradients, a finite
//!   difference checker, and the coarse-to-fine curriculum schedule,
//! - [`metrics`] — hard evaluation metrics: Dice, normalized surface
//!   distance, 3D thinning skeletonization, clDice and cl-X-Dice,
//! - [`pipeline`] — one-stage and two-stage (coarse ROI then fine) sliding
//!   window inference plus a work/time benchmark harness,
//! - [`phantom`] — deterministic synthetic vessel phantoms used as ground
//!   truth throughout the test suite,
//! - [`trainer`] — direct per-voxel logit optimization used to probe
//!   hierarchical-vs-flat convergence behaviour.

pub mod loss;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod softmax;
pub mod testutil;
pub mod trainer;
pub mod tree;
pub mod volume;

pub use tree::{parse_hierarchy, NodeId, SemanticTree, TreeError};
pub use volume::{BoundingBox, LabelVolume, LogitField, ScalarField, VGrid};
