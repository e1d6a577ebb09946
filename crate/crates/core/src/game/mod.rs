//! Switching games on a tree: feedback strategies, their switched values,
//! saddle strategies and exhaustive oracles.

mod representation;
mod saddle;
mod strategy;
mod switched;

pub use representation::{
    brute_force_value, brute_force_values, brute_force_values_with, solve_lower_reflected, BruteForceCap, LowerPush,
    LowerReflected,
};
pub use saddle::{
    build_catalog, exhaustive_saddle, extract_saddle, verify_saddle, CatalogEntry,
    ExhaustiveSaddle, SaddleOptions, SaddleReport, SaddleRow, DEFAULT_ENUMERATION_CAP,
};
pub use strategy::FeedbackStrategy;
pub use switched::{
    eval_switched, eval_switched_from, realized_path, settle_walk, RealizedPath, SwitchedValue,
    Walk,
};
