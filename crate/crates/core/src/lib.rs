//! Regression-adjusted imputation estimators of the average treatment effect.
//!
//! A linear smoother imputes each unit's missing potential outcome from the
//! opposite arm, a per-arm outcome regression corrects the bias, and the
//! resulting estimator is reported together with its AIPW rewrite, a plug-in
//! variance, and a normal confidence interval.
//!
//! ```
//! use impute_ate::{load_dataset, zero_adjuster, estimate_ate_direct, SmoothingMatrix};
//!
//! let ds = load_dataset(vec![(vec![0.2], 1, 3.0), (vec![0.7], 0, 1.0)]).unwrap();
//! let sm = SmoothingMatrix::from_rows(&ds, vec![vec![(1, 1.0)], vec![(0, 1.0)]], vec![false; 2]).unwrap();
//! let est = estimate_ate_direct(&ds, &sm, &zero_adjuster()).unwrap();
//! assert_eq!(est.tau_hat, 2.0);
//! assert_eq!(est.sigma2_hat, 16.0);
//! ```

pub mod config;
pub mod crossfit;
pub mod data;
pub mod error;
pub mod estimators;
pub mod forest;
pub mod io;
pub mod neighbors;
pub mod numeric;
pub mod outcome;
pub mod simulation;
pub mod smoothers;

pub use config::{parse_config, parse_config_for, Command, RunConfig};
pub use crossfit::{estimate_ate_crossfit, estimate_ate_crossfit_with_folds, fold_assignment, CrossFitVariance};
pub use data::{load_dataset, permute, Arm, Dataset, Permutation};
pub use error::{Error, ErrorKind, Result};
pub use estimators::{
    aipw_decompose, estimate_ate, estimate_ate_direct, impute, variance_estimate, AipwComponents, AteEstimate,
    EstimatorSpec, ImputedOutcomes, ModeSpec,
};
pub use forest::{build_forest, build_forest_pair, forest_weights, leaf_diameter_profile, Forest, ForestConfig};
pub use neighbors::NeighborSearch;
pub use outcome::{fit_polynomial, sup_error, zero_adjuster, AdjusterSpec, OutcomeModel};
pub use smoothers::{
    WeightSummary,
    density_ratio, kernel_weights, local_linear_weights, wnn_weights, BandwidthMatrix, KernelFamily, SmootherSpec,
    SmoothingMatrix, WnnGamma,
};

pub use simulation::{draw_dataset, efficiency_bound, run_mc, BoundReport, DgpSpec, McReport};
