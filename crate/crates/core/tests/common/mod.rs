#![allow(dead_code)]

use fscgrad::oracle::average_cost;
use fscgrad::{FscPolicy, PomdpModel};

pub fn fd_gradient(model: &PomdpModel, policy: &FscPolicy, step: f64) -> Vec<f64> {
    fd_of(policy, step, |p| average_cost(model, p).unwrap())
}

pub fn fd_of(policy: &FscPolicy, step: f64, f: impl Fn(&FscPolicy) -> f64) -> Vec<f64> {
    (0..policy.dim())
        .map(|i| {
            let mut tp = policy.theta().to_vec();
            let mut tm = tp.clone();
            tp[i] += step;
            tm[i] -= step;
            let ep = f(&policy.with_theta(&tp).unwrap());
            let em = f(&policy.with_theta(&tm).unwrap());
            (ep - em) / (2.0 * step)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Dense (x, y, z) chain and its per-state expected cost, written out term by term.
pub struct Brute {
    pub n: usize,
    pub p: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

pub fn brute_chain(m: &PomdpModel, pol: &FscPolicy) -> Brute {
    let (ns, no, nz, na) = (m.n_states(), m.n_obs(), pol.n_internal(), m.n_actions());
    let idx = |x: usize, y: usize, z: usize| (x * no + y) * nz + z;
    let n = ns * no * nz;
    let mut p = vec![vec![0.0; n]; n];
    let mut g = vec![0.0; n];
    for x in 0..ns {
        for y in 0..no {
            for z in 0..nz {
                let i = idx(x, y, z);
                for u in 0..na {
                    let mu = pol.mu(z, y, u);
                    g[i] += mu * m.cost(x, y, u);
                    for zn in 0..nz {
                        for xn in 0..ns {
                            for yn in 0..no {
                                p[i][idx(xn, yn, zn)] +=
                                    mu * pol.zeta(z, y, u, zn) * m.transition(x, u, xn) * m.observation(u, xn, yn);
                            }
                        }
                    }
                }
            }
        }
    }
    Brute { n, p, g }
}

impl Brute {
    pub fn step(&self, f: &[f64]) -> Vec<f64> {
        self.p
            .iter()
            .map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Power iteration on the lazy chain (I + P) / 2, which has the same stationary law.
    pub fn stationary(&self, iters: usize) -> Vec<f64> {
        let mut pi = vec![1.0 / self.n as f64; self.n];
        for _ in 0..iters {
            let mut next = vec![0.0; self.n];
            for (i, row) in self.p.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    next[j] += pi[i] * w;
                }
            }
            pi = pi.iter().zip(&next).map(|(a, b)| 0.5 * (a + b)).collect();
        }
        pi
    }

    /// h = Σ_t (Pᵗ g − η), truncated after `terms` terms.
    pub fn bias(&self, eta: f64, terms: usize) -> Vec<f64> {
        let mut h = vec![0.0; self.n];
        let mut f = self.g.clone();
        for _ in 0..terms {
            h.iter_mut().zip(&f).for_each(|(h, v)| *h += v - eta);
            f = self.step(&f);
        }
        h
    }

    /// J_β = Σ_t βᵗ Pᵗ g, truncated after `terms` terms.
    pub fn discounted(&self, beta: f64, terms: usize) -> Vec<f64> {
        let mut j = vec![0.0; self.n];
        let mut f = self.g.clone();
        let mut w = 1.0;
        for _ in 0..terms {
            j.iter_mut().zip(&f).for_each(|(j, v)| *j += w * v);
            f = self.step(&f);
            w *= beta;
        }
        j
    }
}

/// Q(x, y, z, u) = g(x, y, u) + scale · E{f(x̄, ȳ, z̄) | x, y, z, u}, indexed ((x·O + y)·Z + z)·A + u.
pub fn brute_q(m: &PomdpModel, pol: &FscPolicy, f: &[f64], scale: f64) -> Vec<f64> {
    let (ns, no, nz, na) = (m.n_states(), m.n_obs(), pol.n_internal(), m.n_actions());
    let mut q = Vec::with_capacity(ns * no * nz * na);
    for x in 0..ns {
        for y in 0..no {
            for z in 0..nz {
                for u in 0..na {
                    let mut next = 0.0;
                    for zn in 0..nz {
                        for xn in 0..ns {
                            for yn in 0..no {
                                next += pol.zeta(z, y, u, zn)
                                    * m.transition(x, u, xn)
                                    * m.observation(u, xn, yn)
                                    * f[(xn * no + yn) * nz + zn];
                            }
                        }
                    }
                    q.push(m.cost(x, y, u) + scale * next);
                }
            }
        }
    }
    q
}
