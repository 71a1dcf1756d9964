//! Electromagnetic pen guidance: force model, arc-length paths, contouring
//! control with timed baselines, closed-loop simulation and metrics.

pub mod dynamics;
pub mod em;
pub mod geom;
pub mod path;
pub mod scan;
pub mod shapes;
pub mod mpcc;
pub mod baselines;
pub mod sim;
pub mod trace;
pub mod metrics;
pub mod config;
pub mod experiment;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/force-model.md")]
    struct ForceModel;
    #[doc = include_str!("../../../book/src/paths.md")]
    struct Paths;
    #[doc = include_str!("../../../book/src/controller.md")]
    struct Controller;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
