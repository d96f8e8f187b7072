//! Exact quantities computed from the model by linear algebra.

pub mod exact;
pub mod markov;

pub use exact::{
    average_cost, exact_beta_gradient, exact_gradient, gradient_from_conditional_means, gradient_via_chains, CondMean,
    DiscountedSolution, ExactSolution, GradientVector,
};
pub use markov::{discounted_value, recurrent_classes, solve_average_cost, solve_poisson, stationary_distribution};
