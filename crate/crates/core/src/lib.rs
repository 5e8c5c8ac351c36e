//! Convex inner approximation of optimal power flow on radial distribution
//! feeders.
//!
//! The crate is organised bottom-up:
//!
//! * [`feeder`] parses and orders a radial feeder and builds the linear
//!   branch-flow sensitivity matrices.
//! * [`loadflow`] solves the exact nonlinear branch-flow equations with a
//!   backward/forward sweep. It is the ground truth for every admissibility
//!   check.
//! * [`bounds`] linearises the squared branch current around an operating
//!   point and produces the affine lower envelope and the epigraph upper
//!   envelope used by the robust programs.
//! * [`qp`] is a small operator-splitting solver for convex QPs and LPs.
//! * [`opf`] assembles the single-period and multi-period robust programs.
//! * [`tightening`] alternates robust solves with exact load flows to refresh
//!   the expansion point.
//!
//! All quantities are per unit. Voltages and currents are squared magnitudes.

pub mod bounds;
pub mod datasets;
pub mod feeder;
pub mod loadflow;
pub mod opf;
pub mod qp;
pub mod tightening;

pub use bounds::{
    build_envelope, hessian, hessian_eigs, jacobian, operating_point, CurrentEnvelope,
    JacobianBlocks, OperatingPoint,
};
pub use feeder::{
    load_feeder, Branch, BranchLimits, FeederError, FeederModel, NodeLimits, SensitivityMatrices,
};
pub use loadflow::{
    check_admissible, residuals, solve_loadflow, InjectionProfile, LoadFlowError,
    LoadFlowSettings, LoadFlowState, Quantity, ResidualReport, Violation,
};

pub use qp::{detect_infeasible, solve_qp, QpError, QpProblem, QpSettings, QpSolution, QpStatus};
pub use opf::{
    build_p3, build_p4, extract_schedule, extract_solution, BatterySpec, DispatchSchedule,
    Generator, ObjectiveKind, OpfError, OpfProgram, RobustOpfSolution, Scenario, ScenarioFile,
};
pub use tightening::{
    flexibility_envelope, one_shot, tighten, tighten_multiperiod, FlexibilityEnvelope,
    IterationRecord, MultiPeriodOutcome, Relinearization, TightenOutcome, TighteningError,
    TighteningSettings, TighteningTrace,
};
