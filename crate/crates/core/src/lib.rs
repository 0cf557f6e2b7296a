//! Negative Binomial mixtures with multiple allocation (MAM), an optional
//! spatial CAR layer on the membership weights, and a conventional mixture
//! baseline, fitted by MCMC.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod math;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod spatial;

pub use data::Dataset;
pub use error::{Error, Result};
pub use evaluate::{
    chain_misclassification, misclassification, misclassification_unstructured, summarize_chain, ChainSummary,
    ParamSummary,
};
pub use model::{
    combine_means, component_means, connection_matrix, mixture_log_likelihood, multiple_weights, nb_log_pmf,
    unit_log_likelihood, ConnectionMatrix, Hyperparameters, MixingWeights, ModelConfig, ParameterState, Scheme,
};
pub use sampler::{
    marginal_unit_log_lik, run_car_mam, run_mam, run_negbinmix, CarSampler, ChainOutput, Draw, MamSampler, ModelKind,
    SamplerSettings,
};
pub use simulate::{
    positions_for_seed, simulate_car_field, simulate_car_mam, simulate_mam, simulate_segments, FieldKind,
    GenerativeParams, Segment, SegmentDesign,
};
pub use spatial::{
    build_precision, car_log_density, car_log_density_pairwise, field_to_weights, gamma_weights, logistic_weight,
    GammaKind, PrecisionSummary, SpatialConfig, SpatialWeights,
};
