//! Constructive convex integration for divergence-free matrix fields, with a
//! Born-Infeld specialization.
//!
//! The crate builds exactly divergence-free piecewise-constant fields of the
//! form `V = F + L(G)`, where `G` is a piecewise-affine stack of skew-symmetric
//! potentials and `(L(G))_{kj} = Σ_i ∂_i G^k_{ij}`. Laminates supported on
//! diamond-shaped cells are packed into convex targets, nested into staircases
//! that drive the field into a prescribed set, and certified by exact
//! cellwise integration.

pub mod born_infeld;
pub mod domains;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod hulls;
pub mod laminate;
pub mod linalg;
pub mod poly;
pub mod staircase;
pub mod symbol;

pub use error::{Error, Result};
pub use linalg::{Mat, Point10};
