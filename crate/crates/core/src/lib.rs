//! Equilibrium stopping of finite continuous-time Markov chains under
//! non-exponential discounting.
//!
//! A stopping region `S` is valued through `J(x,S) = E_x[δ(τ_S) X_{τ_S}]`,
//! classified as mild, weak or strong, and the optimal mild equilibrium is
//! built by the monotone iteration in [`equilibrium::iterate_optimal`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc;
pub mod discount;
pub mod equilibrium;
pub mod error;
pub mod putmodel;
pub mod quad;
pub mod region;
pub mod valuation;

pub use ctmc::{build_chain, is_irreducible, Chain};
pub use discount::DiscountFn;
pub use error::{Error, Result};
pub use region::StoppingRegion;
pub use valuation::{delayed_value, hitting_value, mc_hitting_value, Valuator, ValueVector};
