//! Interacting particle systems on adaptive weighted networks, their
//! replica-ensemble (McKean) approximation, the graph-limit system on
//! the unit interval, and the fibered Vlasov-type equation on the extended phase
//! space (ξ, ζ, x, y, w) — plus the flat-metric machinery and the
//! experiment harness that quantifies how the four levels agree.

pub mod continuum;
pub mod error;
pub mod harness;
pub mod intermediate;
pub mod kernels;
pub mod metrics;
pub mod particle;
pub(crate) mod rhs;
pub mod util;
pub mod vlasov;

pub use error::{Error, Result};
pub use rhs::{Quadrature, SumMode};
