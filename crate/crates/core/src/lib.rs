//! Geometric discrete optimal control.
//!
//! The crate is organised bottom-up:
//!
//! * [`matlie`]: dense matrix kernel and `so(n)` / `SO(n)` operations,
//! * [`ode`]: the fixed-step RK4 integrator shared by the smooth flows,
//! * [`rb_smooth`]: the n-dimensional rigid body, its symmetric
//!   representation on `SO(n) × SO(n)` and the conserved quantities,
//! * [`rb_discrete`]: the symmetric discrete rigid body and the
//!   Moser–Veselov algorithms,
//! * [`ocp`]: generic discrete maximum principle, symplecticity check and
//!   shooting,
//! * [`learn`]: multi-sample terminal-cost control, i.e. back-propagation
//!   as a backward costate sweep,
//! * [`bracket`]: extremal and double-bracket flows on adjoint orbits,
//! * [`io`]: CSV / JSON trajectory writers.

pub mod bracket;
pub mod error;
pub mod io;
pub mod learn;
pub mod matlie;
pub mod ocp;
pub mod ode;
pub mod rb_discrete;
pub mod rb_smooth;

pub use error::{Error, Result};
pub use matlie::{Matrix, Rotation, SkewMatrix};
