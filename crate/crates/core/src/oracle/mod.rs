//! Distribution study of the hard and relaxed chains: quadrature oracles,
//! Monte Carlo estimators, and the level-by-level equivalence report.

pub mod density;
pub mod mc;
pub mod pmf;
pub mod report;

pub use density::{ScalarDensity, SourceKind};
pub use mc::{mc_hard_pmf, mc_relaxed_density, mc_relaxed_density_undithered, Histogram};
pub use pmf::{cell_masses, edge_pmf, hard_pmf, inner_pmf, relaxed_density, Edge};
pub use report::{equivalence_report, write_summary, DistReport, LevelKind, LevelRecord, McOptions};
