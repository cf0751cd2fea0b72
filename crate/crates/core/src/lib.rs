//! Distributionally robust optimization over total-variation balls when the
//! data are observed through a known noise channel.

pub mod ambiguity;
pub mod channel;
pub mod cli;
pub mod config;
pub mod dist;
pub mod dro;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod lp;
pub mod worst_case;

pub use ambiguity::{min_samples, radius_tv, AmbiguitySpec, RadiusPolicy, Significance};
pub use channel::{udd_threshold, DominanceReport, LdpCheck, NoiseChannel};
pub use config::{ExperimentConfig, Scenario};
pub use dro::{out_of_sample, solve_dro, solve_nsaa, solve_true, Decision, DroSolution, LossModel, Solution};
pub use dist::{DiscreteDistribution, Norm, Point, SampleSet, Support};
pub use error::{Error, Result};
pub use ingest::{ingest_csv, DiscretizationRule, IngestReport};
pub use lp::{solve_lp, LinearProgram, LpSolution, LpStatus, Sense, SimplexSolver};
pub use worst_case::{
    min_ambiguity_radius, worst_case_dual, worst_case_oracle, worst_case_primal, DualCertificate, WorstCaseEngine,
    WorstCaseResult,
};
