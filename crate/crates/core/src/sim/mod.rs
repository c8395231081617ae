//! Monte Carlo designs, size and power experiments, and oracle diagnostics.

pub mod dgp;
pub mod experiment;
pub mod fstat;
pub mod oracle;

pub use dgp::{
    expand_regime, gen_base_instruments, gen_dgp, laplace_sample, ErrorDist, Regime, SimDraw, SimRho,
    SimulationSpec, Strength,
};
pub use experiment::{power_curve, size_experiment, size_experiment_range, PowerMode, PowerTable, SizeTable};
pub use fstat::{first_stage_f, fstat_demo, FstatTable};
pub use oracle::{infeasible_first_stage, local_power_index, oracle_noncentrality};
