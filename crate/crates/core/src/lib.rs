//! Seedable behavior engine for proactive conversational agents.
//!
//! The crate is layered:
//!
//! - [`prob`]: finite distributions, seeded RNG streams, histograms.
//! - [`bayes`]: small binary Bayesian networks with exact inference.
//! - [`model`]: the agent model document (categories, interactions, nets,
//!   triggers, timing).
//! - [`scheduler`]: the Main Distribution, within-category selection and the
//!   interactions queue.
//! - [`triggers`]: model-update and model-evaluate triggers.
//! - [`timing`]: pauses, smiles, gaze shifts and variability gates.
//! - [`stats`]: execution statistics and the forecasted interaction time.
//! - [`session`]: persisted usage state, forgetfulness and the session log.
//! - [`engine`]: the interaction loop, clocks and headless simulation.
//!
//! ```
//! use std::sync::Arc;
//! use korra_core::engine::{simulate, SimConfig, UserPolicy};
//! use korra_core::model::AgentModel;
//!
//! let model = Arc::new(AgentModel::demo());
//! let (log, report) = simulate(model, UserPolicy::AlwaysPositive, SimConfig::new(300.0, 7)).unwrap();
//! assert!(report.counters.executed > 0);
//! assert!(log.body_text().contains("Interactions queue:"));
//! ```

pub mod bayes;
pub mod engine;
pub mod model;
pub mod prob;
pub mod scheduler;
pub mod session;
pub mod stats;
pub mod timing;
pub mod triggers;

/// The guide's chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/distributions.md")]
    struct Distributions;
    #[doc = include_str!("../../../book/src/networks.md")]
    struct Networks;
    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;
    #[doc = include_str!("../../../book/src/scheduling.md")]
    struct Scheduling;
    #[doc = include_str!("../../../book/src/triggers.md")]
    struct Triggers;
    #[doc = include_str!("../../../book/src/timing.md")]
    struct Timing;
    #[doc = include_str!("../../../book/src/sessions.md")]
    struct Sessions;
    #[doc = include_str!("../../../book/src/service.md")]
    struct Service;
}

use thiserror::Error;

/// Any error the crate can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Prob(#[from] prob::ProbError),
    #[error(transparent)]
    Net(#[from] bayes::NetError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Scheduler(#[from] scheduler::SchedulerError),
    #[error(transparent)]
    Tuning(#[from] scheduler::TuningError),
    #[error(transparent)]
    Timing(#[from] timing::TimingError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Session(#[from] session::SessionError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
}
