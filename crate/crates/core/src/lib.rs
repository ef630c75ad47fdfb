//! Ground-state quantum beats in cavity-enhanced spontaneous emission.
//!
//! A driven ensemble of `F -> F'` atoms crosses a two-mode optical cavity;
//! photons scattered into the undriven mode carry a Larmor beat in their
//! intensity correlation. The crate simulates the ensemble with quantum
//! trajectories, computes `g2(tau)` with its one-atom, two-atom and homodyne
//! parts, and can also synthesize and analyse detector time stamps.

pub mod angmom;
pub mod clicks;
pub mod correlator;
pub mod error;
pub mod idealized;
pub mod params;
pub mod trajectory;

pub use error::{Error, Result};
