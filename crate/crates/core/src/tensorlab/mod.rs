//! Dense matrices, named parameter sets and the vector operations the
//! aggregation rule is built from.

mod matrix;
mod params;
mod rng;
mod svd;

pub use matrix::Matrix;
pub use params::{
    axpy, frob_inner, gaussian_like, project, project_per_tensor, scale_to_norm, ParamSet,
};
pub use rng::{mix_seed, SeededRng};
pub use svd::{svd, SvdResult};
