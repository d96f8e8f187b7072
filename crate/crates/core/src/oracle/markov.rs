//! Dense linear-algebra solves on finite Markov chains: stationary distribution,
//! Poisson equation and discounted values.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::chain::TransitionMatrix;
use crate::error::{Error, Result};

/// Closed strongly connected components of the transition graph, each sorted.
pub fn recurrent_classes(p: &TransitionMatrix) -> Vec<Vec<usize>> {
    let n = p.n();
    let mut g = DiGraph::<(), ()>::with_capacity(n, p.nnz());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for (j, w) in p.row(i) {
            if w > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for m in members {
            comp[m.index()] = c;
        }
    }
    let mut out: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members
                .iter()
                .all(|m| p.row(m.index()).all(|(j, w)| w == 0.0 || comp[j] == *c))
        })
        .map(|(_, members)| {
            let mut v: Vec<usize> = members.iter().map(|m| m.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    out.sort();
    out
}

/// Unique stationary distribution of a unichain; zero outside the recurrent class.
///
/// Solves π(I − P) = 0 on the recurrent class with one balance equation replaced by
/// Σπ = 1.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let classes = recurrent_classes(p);
    if classes.len() != 1 {
        return Err(Error::MultipleRecurrentClasses { classes });
    }
    let class = &classes[0];
    let m = class.len();
    let mut local = vec![usize::MAX; p.n()];
    for (k, &i) in class.iter().enumerate() {
        local[i] = k;
    }
    // rows of A are balance equations: Σ_i π_i (δ_ij − P_ij) = 0
    let mut a = DMatrix::<f64>::identity(m, m);
    for (k, &i) in class.iter().enumerate() {
        for (j, w) in p.row(i) {
            a[(local[j], k)] -= w;
        }
    }
    a.row_mut(m - 1).fill(1.0);
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary balance equations".into()))?;
    let mut pi = vec![0.0; p.n()];
    for (k, &i) in class.iter().enumerate() {
        // tiny negative values are rounding noise
        pi[i] = sol[k].max(0.0);
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    Ok(pi)
}

/// Average cost η = π·g and bias h solving h = g − η·1 + P h with π·h = 0.
pub fn solve_average_cost(p: &TransitionMatrix, cost: &[f64]) -> Result<(f64, Vec<f64>)> {
    let pi = stationary_distribution(p)?;
    let (eta, h) = solve_poisson(p, &pi, cost)?;
    Ok((eta, h))
}

/// Same as [`solve_average_cost`] with a precomputed stationary distribution.
///
/// Uses the nonsingular system (I − P + 1π) h = g − η·1, whose solution satisfies π·h = 0.
pub fn solve_poisson(p: &TransitionMatrix, pi: &[f64], cost: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = p.n();
    if cost.len() != n || pi.len() != n {
        return Err(Error::DimensionMismatch("cost/π length differs from chain size".into()));
    }
    let eta: f64 = pi.iter().zip(cost).map(|(a, b)| a * b).sum();
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for (j, w) in p.row(i) {
            a[(i, j)] -= w;
        }
        for j in 0..n {
            a[(i, j)] += pi[j];
        }
    }
    let b = DVector::from_iterator(n, cost.iter().map(|g| g - eta));
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("Poisson equation".into()))?;
    Ok((eta, h.iter().copied().collect()))
}

/// J_β = (I − βP)⁻¹ g.
pub fn discounted_value(p: &TransitionMatrix, cost: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!(
            "discount β = {beta} must lie in [0, 1)"
        )));
    }
    let n = p.n();
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for (j, w) in p.row(i) {
            a[(i, j)] -= beta * w;
        }
    }
    let b = DVector::from_column_slice(cost);
    let j = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("discounted value system".into()))?;
    Ok(j.iter().copied().collect())
}

/// ‖h + η·1 − g − P h‖_∞.
pub fn poisson_residual(p: &TransitionMatrix, cost: &[f64], eta: f64, h: &[f64]) -> f64 {
    let ph = p.apply(h);
    (0..p.n())
        .map(|i| (h[i] + eta - cost[i] - ph[i]).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cycle() -> TransitionMatrix {
        TransitionMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn two_cycle_is_uniform() {
        assert_eq!(stationary_distribution(&two_cycle()).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_has_two_classes() {
        let p = TransitionMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        match stationary_distribution(&p).unwrap_err() {
            Error::MultipleRecurrentClasses { classes } => assert_eq!(classes, vec![vec![0], vec![1]]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn transient_states_get_zero_mass() {
        let p = TransitionMatrix::from_dense(&[vec![0.5, 0.5, 0.0], vec![0.0, 0.3, 0.7], vec![0.0, 0.6, 0.4]]).unwrap();
        let pi = stationary_distribution(&p).unwrap();
        assert_eq!(pi[0], 0.0);
        assert!((pi[1] - 6.0 / 13.0).abs() < 1e-14);
        // the transient state still gets a bias value satisfying the Poisson equation
        let g = [1.0, 2.0, 0.0];
        let (eta, h) = solve_average_cost(&p, &g).unwrap();
        assert!(poisson_residual(&p, &g, eta, &h) < 1e-12);
    }

    #[test]
    fn constant_cost_has_zero_bias() {
        let p = TransitionMatrix::from_dense(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let (eta, h) = solve_average_cost(&p, &[3.0, 3.0]).unwrap();
        assert!((eta - 3.0).abs() < 1e-15);
        assert!(h.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_cycle_poisson_by_hand() {
        // η = 1; h0 = −1 + h1 and h0 + h1 = 0 give h = (−1/2, 1/2)
        let (eta, h) = solve_average_cost(&two_cycle(), &[0.0, 2.0]).unwrap();
        assert!((eta - 1.0).abs() < 1e-15);
        assert!((h[0] + 0.5).abs() < 1e-15 && (h[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discounted_constant_cost_is_geometric() {
        let p = TransitionMatrix::from_dense(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let j = discounted_value(&p, &[2.0, 2.0], 0.9).unwrap();
        assert!(j.iter().all(|v| (v - 20.0).abs() < 1e-12));
        assert!(discounted_value(&p, &[2.0, 2.0], 1.0).is_err());
    }
}
