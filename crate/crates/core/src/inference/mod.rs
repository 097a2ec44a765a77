//! Likelihood evaluation and maximum likelihood estimation.

pub mod fit;
pub mod hessian;
pub mod likelihood;
pub mod optim;

pub use fit::{
    fit_inner, fit_profile, profile_curve, profile_domain, profile_point, select_order,
    Convergence, FitOptions, FittedModel, InnerFit, LocalOptimum, OrderSelection, OrderTrace,
    ProfilePoint,
};
pub use hessian::{invert_information, numeric_hessian, Covariance};
pub use likelihood::{default_rows, log_likelihood, log_likelihood_grad, neg_bin_logpmf};
