//! Model components: parameter storage, optimizers, the discriminative
//! encoder with its task heads, the generative chroma decoder, attention
//! normalization, and the Cholesky covariance parameterization.

mod attention;
mod covariance;
mod encoder;
mod optimizer;
mod params;
mod unet;

pub use attention::{normalize_attention, AttentionMap};
pub use covariance::{build_covariance, covariance_logdet, mahalanobis_sq};
pub use encoder::{Backbone, EncoderConfig, UBranchModel, UBranchOutput};
pub use optimizer::{CosineSchedule, SgdNesterov};
pub use params::{he_normal, Binding, ParamStore};
pub use unet::{
    stack_partial_color_inputs, ColorHead, GmmParamMap, LBranchConfig, LBranchModel,
    LBRANCH_IN_CHANNELS,
};
