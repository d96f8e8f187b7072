//! Shared fixtures for the benchmarks.

use fscgrad::testing::{random_model, random_policy};
use fscgrad::toy::{toy2, toy2_controller};
use fscgrad::{FscPolicy, PomdpModel, TieMode};

/// (name, model, controller) triples of increasing joint-chain size.
pub fn cases() -> Vec<(&'static str, PomdpModel, FscPolicy)> {
    vec![
        ("toy2", toy2(), toy2_controller()),
        (
            "6x3x3-nz2",
            random_model(7, 6, 3, 3),
            random_policy(7, 3, 3, 2, TieMode::Free),
        ),
        (
            "12x4x3-nz3",
            random_model(8, 12, 4, 3),
            random_policy(8, 4, 3, 3, TieMode::Free),
        ),
    ]
}
