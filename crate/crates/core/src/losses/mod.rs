//! Training objectives for both branches: puzzle cross-entropy, expected-L1
//! tint loss, attention density term, their combination, the color-bin
//! classification loss, and the Gaussian-mixture alternation.

mod bins;
mod gmm;
mod ubranch;

pub use bins::{bin_color_loss, quantize_chroma, smooth_bin_distribution, CHROMA_RANGE};
pub use gmm::{em_mahalanobis, em_posteriors, em_q_loss, GmmVars, PRIOR_FLOOR};
pub use ubranch::{
    density_loss, density_loss_with_coords, grid_coords, puzzle_loss, tint_loss,
    tint_loss_from_errors, ubranch_loss, UBranchBatch, LAMBDA_DENSITY_DEFAULT,
};
