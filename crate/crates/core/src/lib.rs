//! Distribution-based bounding-box refinement.
//!
//! Each box edge is described by a discrete probability distribution over a
//! non-uniform grid of relative offsets. Decoder layers refine the
//! distributions by adding residual logits, and the expected offset under the
//! refined distribution moves the edges of a fixed reference box.
//!
//! The crate provides the pieces needed to study that machinery without a
//! deep-learning framework:
//!
//! - [`geometry`]: box forms, edge distances, IoU and GIoU.
//! - [`weighting`]: the offset grid and target bracketing.
//! - [`refinement`]: softmax, residual logit chaining and box decoding.
//! - [`losses`]: the fine-grained localization loss, the decoupled
//!   distillation loss, and a finite-difference gradient oracle.
//! - [`matching`]: Hungarian assignment, matching cost and the cross-layer
//!   union set.
//! - [`gating`]: the two-branch sigmoid gate used between decoder layers.
//! - [`toytrain`]: a seeded synthetic problem and a gradient-descent trainer.

pub mod error;
pub mod gating;
pub mod geometry;
pub mod losses;
pub mod matching;
pub mod refinement;
pub mod toytrain;
pub mod weighting;

pub use error::{Error, Result};
pub use geometry::{BoxCxCyWH, EdgeDistances};
pub use refinement::{EdgeDistributions, LayerState};
pub use weighting::{Bracket, WeightingSpec};

/// Number of edges per box, in `t, b, l, r` order.
pub const EDGES: usize = 4;
