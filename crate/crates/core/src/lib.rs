//! Robust online convex optimization control for constrained linear systems.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are the instantiations the simulator and CLI use.

pub mod controller;
pub mod convexsets;
pub mod denseqp;
pub mod invariance;
pub mod matlin;
pub mod oracle;
pub mod plant;
pub mod scalar;
pub mod simkit;

pub use scalar::Scalar;

pub type Matrix64 = matlin::Matrix<f64>;
pub type Vector64 = matlin::Vector<f64>;
pub type HPolytope64 = convexsets::HPolytope<f64>;
pub type Zonotope64 = convexsets::Zonotope<f64>;
pub type PlantModel64 = plant::PlantModel<f64>;
pub type QuadraticCost64 = plant::QuadraticCost<f64>;
pub type ControllerOptions64 = controller::ControllerOptions<f64>;
pub type RunConfig64 = simkit::RunConfig<f64>;
pub type SimOutcome64 = simkit::SimOutcome<f64>;
