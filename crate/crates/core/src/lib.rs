//! Analytic performance model of microservice platforms that run
//! containers on VMs leased from an IaaS pool of physical machines.
//!
//! Three interacting CTMCs are solved to a joint fixed point:
//!
//! * [`csm`]: one user's host group (queue, containers, autoscaled VMs),
//! * [`pmsm`]: the infrastructure's global queue and two-attempt lookup,
//! * [`vmsm`]: a representative PM's hypervisor queue and VMs.
//!
//! [`coupler::fixed_point_solve`] closes the loop and
//! [`report::build_report`] turns the result into QoS metrics.

pub mod config;
pub mod coupler;
pub mod csm;
pub mod ctmc;
pub mod error;
pub mod pmsm;
pub mod report;
pub mod vmsm;

pub use config::{ConfigError, CouplingOptions, SystemConfig, TimeUnit};
pub use coupler::{fixed_point_solve, CoupledSolution};
pub use error::{CtmcError, ModelError};
pub use report::{build_report, compare_reports, ComparisonVerdict, PerformanceReport};
