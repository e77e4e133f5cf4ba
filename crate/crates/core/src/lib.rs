//! Asymptotic expansion weights for weak approximation of SDE expectations.
//!
//! A small-noise diffusion `X^ε` is approximated by its Gaussian proxy `X̄`, and
//! `E f(X_T)` is corrected by integrating the payoff against a polynomial
//! weight `M^m` under the proxy law. Chaining `n` short steps of that
//! one-step operator gives a weak scheme whose error decays in both the
//! expansion order `m` and the step count `n`.

pub mod analysis;
pub mod benchmark;
pub mod chain;
pub mod error;
pub mod estimate;
pub mod gaussian_proxy;
pub mod interpolation;
pub mod models;
pub mod pricer;
pub mod quadrature;
pub mod rng;
pub mod weights;

pub use analysis::{
    convergence_slope, error_rate, optimal_gamma, predict_error_next_m, predict_error_next_n, ErrorReportRow, GammaSearch,
};
pub use benchmark::{em_price, em_prices, em_prices_generic, em_prices_local_vol_cv, pde_price_local_vol, PdeOptions};
pub use chain::{
    chain_price_1d, chain_price_mc, chain_price_sabr_n2, make_grid, ChainOptions, GridSpec,
};
pub use error::{AewError, Result};
pub use estimate::{MethodDescriptor, PriceEstimate, PricingMode};
pub use gaussian_proxy::{covariance, mean_shift, proxy_law, sample, skeleton_and_jacobian, ProxyLaw};
pub use models::{
    build_local_vol, build_sabr, eval_payoff, LinearScalarModel, LocalVolCev, LogNormalSabr, ModelSpec, PayoffKind,
    PayoffSpec, UnderlyingMap, VectorFieldSet,
};
pub use rng::RngStream;
pub use weights::{weight_local_vol, weight_oracle_mc, weight_sabr, SabrWeightKind, WeightFunction, WeightTag};
pub use pricer::{bachelier_price, black_scholes_price, q_step_1d, q_step_sabr, SabrStepMode};
