//! Discovery of hidden terms in differential equations from sparse, noisy
//! measurements.
//!
//! A surrogate network `U` for the solution and a hidden-term network `F` are
//! trained jointly on a loss made of a data misfit, a boundary misfit and the
//! residual of `u_t = N_K[u] + F(...)` at collocation points. The trained `F`
//! is then distilled into a sparse polynomial formula. A universal
//! differential equation baseline (network inside an unrolled RK4 solve) is
//! included for comparison.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod neural;
pub mod optim;
pub mod sampling;
pub mod symreg;
pub mod trainer;
pub mod ude;

pub use error::{Error, Result};
pub use neural::{load_checkpoint, save_checkpoint, Mlp, MlpCheckpoint};
