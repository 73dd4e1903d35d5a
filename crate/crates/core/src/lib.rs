//! Chunked 3D type-3 NUFFT for interferometric analysis and synthesis on
//! arbitrary spherical meshes.
//!
//! Analysis maps sky intensities `I(r)` on pixels `r` to visibilities
//! `V_i = Σ_r I(r)·α(r)·exp(−j⟨r, p_i⟩)` at baselines `p_i`; synthesis is its
//! adjoint followed by the real part. [`direct`] evaluates both by brute
//! force, [`nufft3`] with one type-3 NUFFT and [`chunked`] as a sum of small
//! sub-transforms over a partition of both domains.

pub mod chunked;
pub mod direct;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod lp;
pub mod nufft3;
pub mod partition;

pub use chunked::{
    block_strategy, build_plan, inverse_reorder, reorder, BlockInfo, BlockStrategy, ChunkedPlan, ExecStats,
    PlanOptions,
};
pub use direct::{direct_analysis, direct_synthesis};
pub use error::{Error, Result};
pub use geometry::{BaselineSet, BoundingBox, ObservationConfig, PixelSet, Vec3};
pub use grid::UniformGrid3;
pub use kernel::{KernelSpec, DEFAULT_UPSAMP, EPS_MAX, EPS_MIN};
pub use nufft3::{make_plan, Nufft3Plan};
pub use partition::{auto_chunk, fuse, lattice_bin, solve_box_dims, ChunkSet, HeisenbergDims, PartitionBudget};
