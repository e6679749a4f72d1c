//! Weighted Monte Carlo: prior paths, payoff matrices, entropy-regularised
//! path weights and their diagnostics.

mod dual;
pub mod martingale;
mod measure;
mod paths;

pub use dual::{solve_lagrange_dual, DualOptions, DualSolution};
pub use martingale::{martingale_constraint_columns, martingale_loss, martingale_windows, MartingaleReport, MartingaleWindow, WindowSet};
pub use measure::{
    load_quotes, quote_payoffs, relative_entropy, risk_neutral_density, vanilla_payoffs, weighted_price, weights_from_lagrange, Bins, ColumnMeta, Histogram,
    PayoffMatrix, WeightVector,
};
pub use paths::{
    generate_brownian_paths, load_paths, load_weights, save_paths, save_weights, PathIdentity, PathPrior, PathSet, BINARY_VERSION,
};
