//! Seeded random instances for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::PomdpModel;
use crate::policy::{make_direct_fsc, FscPolicy, TieMode};

fn positive_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// A model whose transition and observation tables are strictly positive, so every
/// controller with positive probabilities induces an irreducible aperiodic chain.
pub fn random_model(seed: u64, n_states: usize, n_obs: usize, n_actions: usize) -> PomdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    for _ in 0..n_actions * n_states {
        t.extend(positive_row(&mut rng, n_states));
    }
    let mut o = Vec::new();
    for _ in 0..n_actions * n_states {
        o.extend(positive_row(&mut rng, n_obs));
    }
    let c = (0..n_states * n_obs * n_actions)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    PomdpModel::from_flat(n_states, n_obs, n_actions, t, o, c, None).expect("valid random model")
}

/// θ with every probability (residuals included) at least `margin` away from the box.
pub fn random_feasible_theta(policy: &FscPolicy, rng: &mut impl Rng, margin: f64) -> Vec<f64> {
    let (lo, hi) = (policy.lower(), policy.upper());
    let mut theta = vec![0.0; policy.dim()];
    for b in policy.blocks() {
        let n = b.len + usize::from(b.has_residual);
        loop {
            let row = if b.has_residual {
                positive_row(rng, n)
            } else {
                vec![rng.random_range(0.0..1.0)]
            };
            let ok = b
                .range()
                .enumerate()
                .all(|(j, i)| row[j] >= lo[i] + margin && row[j] <= hi[i] - margin)
                && (!b.has_residual || {
                    let (rl, rh) = policy.residual_bounds();
                    row[b.len] >= rl + margin && row[b.len] <= rh - margin
                });
            if ok {
                theta[b.range()].copy_from_slice(&row[..b.len]);
                break;
            }
        }
    }
    theta
}

pub fn random_policy(seed: u64, n_obs: usize, n_actions: usize, n_internal: usize, tie: TieMode) -> FscPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut p = make_direct_fsc(n_obs, n_actions, n_internal, tie).expect("valid sizes");
    let theta = random_feasible_theta(&p, &mut rng, 0.01);
    p.set_theta(&theta).expect("matching length");
    p
}
