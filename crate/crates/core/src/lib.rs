//! Box-ball system: exact dynamics, finite-size soliton speeds, generalized Gibbs ensembles,
//! Euler-scale hydrodynamics of domain walls and a Monte Carlo harness.
//!
//! ```
//! use bbs_core::{Level, State};
//! use bbs_core::dynamics::{evolve, soliton_content};
//!
//! let s = State::parse("1110001100100000000").unwrap();
//! let next = evolve(&s, Level::Finite(2)).unwrap();
//! assert_eq!(soliton_content(&next).unwrap().ball_count(), 6);
//! ```

pub mod dynamics;
pub mod error;
pub mod ensemble;
pub mod ghd;
pub mod linalg;
pub mod special;
pub mod spectral;
pub mod tba;

pub use dynamics::{Level, SolitonContent, State};
pub use error::{BbsError, Result};
