//! Synthetic processes with known nuisances, the efficiency bound, and the
//! Monte Carlo harness.

pub mod bound;
pub mod dgp;
pub mod diag;
pub mod mc;

pub use bound::{efficiency_bound, halton_points, BoundReport};
pub use diag::{forest_diag, DiagRow, ForestDiagReport, ForestDiagSpec};
pub use dgp::{draw_dataset, CovariateLaw, Curve, DgpSpec, SimulatedSample, MAX_REDRAWS};
pub use mc::{
    density_ratio_mse, replication_seed, run_mc, run_replication, summarize, DensityRatioMse, McReport, McResult,
    McRow, McSummary, WithSe,
};
