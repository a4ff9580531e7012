//! Mild, weak and strong equilibrium stopping regions and the iteration that
//! builds the optimal mild one.

mod classify;
mod iterate;
mod two_state;

pub use classify::{
    classify, default_tolerance, first_order_gap, is_mild, is_strong, is_weak, two_state_second_order, Classification,
    MildVerdict, StateStrength, StrongKind, StrongMethod, StrongVerdict, WeakVerdict, DEFAULT_EPS_GRID,
};
pub use iterate::{
    best_response_sup, enumerate_mild, iterate_optimal, verify_optimal, AddedState, BestResponse, DominanceFailure,
    IterationStep, IterationTrace, OptimalityReport, ENUMERATION_LIMIT, MILD_ENUMERATION_LIMIT,
};
pub use two_state::{classify_two_state, RegionVerdict, TwoStateCase, TwoStateReport, RATIO_TOL};
