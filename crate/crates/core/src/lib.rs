//! Geodesic flows of Finsler surfaces viewed as Reeb flows on the unit
//! cotangent bundle: metrics and their duals, the flow itself, closed
//! orbits, linearized return maps, local bump models, metric perturbations
//! that make orbits nondegenerate, and equidistribution of orbit currents.

pub mod app;
pub mod atlas;
pub mod config;
pub mod dual;
pub mod equidist;
pub mod error;
pub mod expr;
pub mod flow;
pub mod io;
pub mod local_model;
pub mod metric;
pub mod ode;
pub mod orbit;
pub mod perturbation;
pub mod poincare;

pub use error::{Error, Result};
