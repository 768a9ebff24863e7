//! Ergodic-capacity analysis for the uplink of massive MU-MIMO systems over
//! generalized-K fading (Nakagami-m fast fading with gamma shadowing).
//!
//! The crate provides:
//!
//! * [`specfun`] — log-gamma, Pochhammer and generalized hypergeometric
//!   series with convergence classification;
//! * [`quadrature`] — Gauss–Laguerre / Gauss–Legendre rules and the adaptive
//!   gamma-weighted expectation;
//! * [`channel`] — shadowing, fast-fading and user-placement samplers and
//!   full channel realizations;
//! * [`bounds`] — capacity lower bounds with perfect and imperfect CSI,
//!   pointwise and cell-averaged, each with a quadrature backend
//!   (authoritative) and a hypergeometric series backend (cross-check);
//! * [`simulator`] — exact zero-forcing Monte Carlo with optional pilot-based
//!   MMSE channel estimation, the empirical oracle for every bound;
//! * [`sweep`] — scenario parsing, grid execution with CSV emission, and the
//!   invariant validation suites.

pub mod bounds;
pub mod channel;
pub mod error;
pub mod quadrature;
pub mod simulator;
pub mod specfun;
pub mod sweep;

pub use bounds::{EvalResult, SystemConfig};
pub use channel::{CellGeometry, ChannelRealization, FadingParams};
pub use error::{Error, Result};
pub use simulator::{CsiMode, MonteCarloEstimate};
pub use sweep::{BackendChoice, SweepSpec};
