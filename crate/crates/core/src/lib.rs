//! Numerical laboratory for the effective viscosity of dilute suspensions of
//! rigid spheres in Stokes flow.
//!
//! The pipeline: generate sphere configurations, build the background flow
//! of a force field with the particle volume removed, correct it by strain
//! dipoles through the method of reflections, coarse-grain the particle
//! density, solve the homogenized variable-viscosity problem, and compare.

pub mod error;
pub mod fields;
pub mod geometry;
pub mod homogenize;
pub mod kernels;
pub mod metrics;
pub mod quadrature;
pub mod reflections;
pub mod selftest;
pub mod study;
pub mod tree;

pub use error::{Error, Result};
pub use fields::{FlowField, ForceField};
pub use geometry::{AssumptionReport, DensityField, ParticleConfig, RegionPredicate};
pub use kernels::{DipoleSpec, Point, SumMethod, SumPlan, SymStrain};
pub use reflections::{ResidualTrace, RigidMotion};
pub use study::{ExperimentReport, Schedule};


