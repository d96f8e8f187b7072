//! LSPE(λ) with unit step size.
//!
//! With z_t = βλ z_{t−1} + φ_t and, over the transitions seen so far,
//! B = δI + Σ φ_t φ_t', A = Σ z_t (βφ_{t+1} − φ_t)', b = Σ z_t c_t,
//! each transition performs r ← r + B⁻¹(A r + b). The average-cost variant is β = 1 with
//! costs already centered by the caller.

use nalgebra::{DMatrix, DVector};

use crate::critic::features::FeatureMap;
use crate::critic::td::{cells, Criterion};
use crate::error::{Error, Result};
use crate::sim::HiddenView;

/// Ridge added to the normal matrix.
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LspeOutput {
    /// Coefficients after the last transition.
    pub r: Vec<f64>,
    /// Row t (k values) holds the coefficients available at time t, i.e. after
    /// transitions 0..t−1. The last row equals `r`.
    pub snapshots: Option<Vec<f64>>,
}

impl LspeOutput {
    pub fn snapshot(&self, t: usize) -> Option<&[f64]> {
        let k = self.r.len();
        self.snapshots.as_ref().map(|s| &s[t * k..(t + 1) * k])
    }
}

/// Runs LSPE(λ) over the view with per-step costs `costs` (one per step of the view).
pub fn lspe_batch(
    view: &HiddenView,
    features: &FeatureMap,
    criterion: Criterion,
    lambda: f64,
    costs: &[f64],
    keep_snapshots: bool,
) -> Result<LspeOutput> {
    let k = features.dim();
    let n = view.len();
    if n < k.max(2) {
        return Err(Error::InvalidParameter(format!(
            "trajectory of length {n} is shorter than the feature dimension {k}"
        )));
    }
    if costs.len() != n {
        return Err(Error::DimensionMismatch("one cost per step is required".into()));
    }
    let beta = match criterion {
        Criterion::Discounted(b) => b,
        Criterion::AverageCost => 1.0,
    };
    let decay = beta * lambda;
    let c = cells(view, features);

    let mut bm = DMatrix::<f64>::identity(k, k) * RIDGE;
    let mut am = DMatrix::<f64>::zeros(k, k);
    let mut bv = DVector::<f64>::zeros(k);
    let mut z = DVector::<f64>::zeros(k);
    let mut r = DVector::<f64>::zeros(k);
    let mut snaps = keep_snapshots.then(|| Vec::with_capacity(n * k));
    let mut warned = false;

    for t in 0..n - 1 {
        if let Some(s) = snaps.as_mut() {
            s.extend(r.iter());
        }
        let phi = DVector::from_column_slice(features.phi(c[t]));
        let phi_next = features.phi(c[t + 1]);
        z.axpy(1.0, &phi, decay);
        bm.ger(1.0, &phi, &phi, 1.0);
        let diff = DVector::from_fn(k, |i, _| beta * phi_next[i] - phi[i]);
        am.ger(1.0, &z, &diff, 1.0);
        bv.axpy(costs[t], &z, 1.0);

        let rhs = &am * &r + &bv;
        let step = match bm.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                if !warned {
                    log::warn!("LSPE normal matrix is not positive definite; falling back to LU");
                    warned = true;
                }
                bm.clone()
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("LSPE normal matrix".into()))?
            }
        };
        r += step;
    }
    if let Some(s) = snaps.as_mut() {
        s.extend(r.iter());
    }
    Ok(LspeOutput {
        r: r.iter().copied().collect(),
        snapshots: snaps,
    })
}
