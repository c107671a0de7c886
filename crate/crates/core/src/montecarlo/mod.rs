//! Reproducible simulation studies for the functional model: a fixed design
//! `A₀` per `(m, seed)`, fresh errors per replication, and the statistics that
//! check consistency, asymptotic normality and ellipsoid coverage.

mod clt;
mod design;
mod noise;
mod rng;
mod spec;
mod study;

pub use clt::{clt_check_w, CltEntry, CltReport};
pub use design::generate_design;
pub use noise::generate_noise;
pub use rng::{stream_rng, StreamPurpose};
pub use spec::{DesignKind, SimStudySpec};
pub use study::{
    run_study, Coverage, DirectionReport, ErrorSummary, FailureCounts, LevelCoverage, MReport,
    RepFailure, RepOutcome, ReplicationRecord, SimStudyReport, StudyContext,
};
