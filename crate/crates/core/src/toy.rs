//! The bundled two-state model and its reference controllers.

use crate::cassandra::parse_pomdp;
use crate::error::Result;
use crate::model::PomdpModel;
use crate::policy::{make_direct_fsc, FscPolicy, TieMode};

pub const TOY2_POMDP: &str = include_str!("../assets/toy2.pomdp");
pub const TOY2_NEAR_MIN: &str = include_str!("../assets/toy2_near_min.json");
pub const TOY2_BEST: &str = include_str!("../assets/toy2_best.json");
pub const TOY2_ORACLE_CSV: &str = include_str!("../assets/toy2_oracle.csv");

/// Two states, two observations, two actions.
pub fn toy2() -> PomdpModel {
    parse_pomdp(TOY2_POMDP).expect("bundled model parses")
}

/// Tied-memory controller with two internal states at its default starting point.
pub fn toy2_controller() -> FscPolicy {
    make_direct_fsc(2, 2, 2, TieMode::TiedMemory).expect("valid sizes")
}

/// Reactive controller at its default starting point.
pub fn toy2_reactive() -> FscPolicy {
    make_direct_fsc(2, 2, 1, TieMode::Free).expect("valid sizes")
}

/// Checkpoint left by a 1000-iteration B-TD training run (step 0.02, seed 2024) from
/// [`toy2_controller`].
pub fn toy2_near_min() -> FscPolicy {
    FscPolicy::from_json(TOY2_NEAR_MIN).expect("bundled checkpoint loads")
}

/// Best controller found by a long exact-gradient descent; its η is the reference minimum.
pub fn toy2_best() -> FscPolicy {
    FscPolicy::from_json(TOY2_BEST).expect("bundled checkpoint loads")
}

/// Resolves `toy2-near-min` and `toy2-best` to the bundled checkpoints, anything else is
/// read as a JSON checkpoint file.
pub fn load_policy(spec: &str) -> Result<FscPolicy> {
    match spec {
        "toy2-near-min" => Ok(toy2_near_min()),
        "toy2-best" => Ok(toy2_best()),
        path => FscPolicy::from_json(&std::fs::read_to_string(path)?),
    }
}

/// Resolves `toy2` to the bundled model, anything else is read as a `.pomdp` or JSON file.
pub fn load_model(spec: &str) -> Result<PomdpModel> {
    if spec == "toy2" {
        return Ok(toy2());
    }
    let text = std::fs::read_to_string(spec)?;
    if spec.ends_with(".json") {
        PomdpModel::from_json(&text)
    } else {
        parse_pomdp(&text)
    }
}
