//! Policy-gradient estimation for partially observable Markov and semi-Markov decision
//! processes controlled by finite-state controllers.

pub mod actor;
pub mod cassandra;
pub mod chain;
pub mod critic;
pub mod error;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod posmdp;
pub mod sim;
pub mod stats;
pub mod testing;
pub mod toy;

pub use chain::{build_joint_chain, ChainLevel, JointChain, JointDims, JointState, TransitionMatrix};
pub use error::{Error, Result};
pub use model::PomdpModel;
pub use oracle::{exact_beta_gradient, exact_gradient, ExactSolution, GradientVector};
pub use policy::{make_direct_fsc, FscPolicy, ScoreVector, TieMode};
pub use sim::{simulate, HiddenView, InitialState, Trajectory};
