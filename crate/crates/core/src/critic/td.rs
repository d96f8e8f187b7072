//! Stochastic-approximation TD(λ) with linear features.

use serde::{Deserialize, Serialize};

use crate::critic::features::FeatureMap;
use crate::sim::HiddenView;

/// γ_t = a / (b + t) for the coefficients and ρ_t = min(1, eta_factor · γ_t) for η̂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
    pub eta_factor: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1000.0,
            eta_factor: 10.0,
        }
    }
}

impl StepSchedule {
    #[inline]
    pub fn gamma(&self, t: usize) -> f64 {
        self.a / (self.b + t as f64)
    }

    #[inline]
    pub fn rho(&self, t: usize) -> f64 {
        (self.eta_factor * self.gamma(t)).min(1.0)
    }
}

/// Coefficients, eligibility trace and running average-cost estimate of a linear critic.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub r: Vec<f64>,
    pub eta_hat: f64,
    pub trace: Vec<f64>,
    pub t: usize,
}

impl CriticState {
    pub fn new(k: usize) -> Self {
        Self {
            r: vec![0.0; k],
            eta_hat: 0.0,
            trace: vec![0.0; k],
            t: 0,
        }
    }

    fn advance(&mut self, phi: &[f64], d: f64, g: f64, decay: f64, sched: &StepSchedule) {
        for (z, p) in self.trace.iter_mut().zip(phi) {
            *z = decay * *z + p;
        }
        let gamma = sched.gamma(self.t);
        for (r, z) in self.r.iter_mut().zip(&self.trace) {
            *r += gamma * d * z;
        }
        self.eta_hat += sched.rho(self.t) * (g - self.eta_hat);
        self.t += 1;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One discounted TD(λ) update. With `centering` the cost is g − η̂.
#[allow(clippy::too_many_arguments)]
pub fn discounted_td_step(
    state: &mut CriticState,
    phi: &[f64],
    g: f64,
    phi_next: &[f64],
    beta: f64,
    lambda: f64,
    sched: &StepSchedule,
    centering: bool,
) {
    let c = if centering { g - state.eta_hat } else { g };
    let d = c + beta * dot(phi_next, &state.r) - dot(phi, &state.r);
    state.advance(phi, d, g, beta * lambda, sched);
}

/// One average-cost TD(λ) update: d = g − η̂ + φ_next'r − φ'r.
pub fn average_cost_td_step(
    state: &mut CriticState,
    phi: &[f64],
    g: f64,
    phi_next: &[f64],
    lambda: f64,
    sched: &StepSchedule,
) {
    let d = g - state.eta_hat + dot(phi_next, &state.r) - dot(phi, &state.r);
    state.advance(phi, d, g, lambda, sched);
}

/// Discount of a critic, or the average-cost criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Discounted(f64),
    AverageCost,
}

/// Feature cell of every step of the view.
pub fn cells(view: &HiddenView, features: &FeatureMap) -> Vec<usize> {
    (0..view.len())
        .map(|t| {
            let s = view.get(t);
            features.cell(s.y, s.z, s.u, view.z_next(t))
        })
        .collect()
}

/// Runs TD(λ) over every transition of the view.
pub fn run_td(
    view: &HiddenView,
    features: &FeatureMap,
    criterion: Criterion,
    lambda: f64,
    sched: &StepSchedule,
    centering: bool,
) -> CriticState {
    let c = cells(view, features);
    let mut state = CriticState::new(features.dim());
    for t in 0..view.len().saturating_sub(1) {
        let (phi, phi_next) = (features.phi(c[t]), features.phi(c[t + 1]));
        let g = view.get(t).g;
        match criterion {
            Criterion::Discounted(beta) => {
                discounted_td_step(&mut state, phi, g, phi_next, beta, lambda, sched, centering)
            }
            Criterion::AverageCost => average_cost_td_step(&mut state, phi, g, phi_next, lambda, sched),
        }
    }
    state
}
