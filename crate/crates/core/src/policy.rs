//! Finite-state controllers with a direct probability parameterization.
//!
//! θ is laid out as
//! - one action block per `(z, y)`: `n_actions - 1` free probabilities, the last
//!   action taking the residual `1 - Σ`;
//! - then the internal-transition parameters, either one block per `(z, y, u)` with
//!   `n_internal - 1` free probabilities ([`TieMode::Free`]) or a single memory
//!   probability ([`TieMode::TiedMemory`]).
//!
//! In tied-memory mode the controller keeps its internal state with probability `p` and
//! otherwise resets it to the index of the current observation, so
//! ζ_z̄(z, y, u) = p·[z̄ = z] + (1 − p)·[z̄ = y].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROB_BOUNDS: (f64, f64) = (0.001, 0.999);
/// Initial memory probability for tied-memory controllers.
pub const DEFAULT_MEMORY: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    Free,
    TiedMemory,
}

/// A group of θ coordinates sharing a simplex constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBlock {
    pub start: usize,
    pub len: usize,
    /// Whether an implicit residual probability `1 - Σ block` must also stay within the
    /// probability bounds.
    pub has_residual: bool,
}

impl ParamBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Gradient of a log-probability with respect to θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct FscPolicy {
    n_obs: usize,
    n_actions: usize,
    n_internal: usize,
    tie_mode: TieMode,
    theta: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    residual_bounds: (f64, f64),
}

/// Serialized form of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub tie_mode: TieMode,
    pub n_obs: usize,
    pub n_actions: usize,
    pub n_internal: usize,
    pub theta: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub residual_bounds: (f64, f64),
}

/// Builds a directly parameterized controller with uniform action probabilities.
///
/// Internal transitions start uniform in free mode and at memory probability
/// [`DEFAULT_MEMORY`] in tied mode.
pub fn make_direct_fsc(n_obs: usize, n_actions: usize, n_internal: usize, tie_mode: TieMode) -> Result<FscPolicy> {
    if n_obs == 0 || n_actions == 0 || n_internal == 0 {
        return Err(Error::InvalidParameter("controller sizes must be at least 1".into()));
    }
    if tie_mode == TieMode::TiedMemory && n_internal != n_obs {
        return Err(Error::InvalidParameter(format!(
            "tied memory needs one internal state per observation ({n_internal} != {n_obs})"
        )));
    }
    let mut p = FscPolicy {
        n_obs,
        n_actions,
        n_internal,
        tie_mode,
        theta: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        residual_bounds: DEFAULT_PROB_BOUNDS,
    };
    let n_mu = p.n_mu_params();
    let k = n_mu + p.n_zeta_params();
    p.theta = vec![1.0 / n_actions as f64; n_mu];
    match tie_mode {
        TieMode::Free => p.theta.resize(k, 1.0 / n_internal as f64),
        TieMode::TiedMemory => p.theta.push(DEFAULT_MEMORY),
    }
    p.lower = vec![DEFAULT_PROB_BOUNDS.0; k];
    p.upper = vec![DEFAULT_PROB_BOUNDS.1; k];
    Ok(p)
}

impl FscPolicy {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_internal(&self) -> usize {
        self.n_internal
    }

    pub fn tie_mode(&self) -> TieMode {
        self.tie_mode
    }

    pub fn is_reactive(&self) -> bool {
        self.n_internal == 1
    }

    /// Number of parameters k.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn n_mu_params(&self) -> usize {
        self.n_internal * self.n_obs * (self.n_actions - 1)
    }

    pub fn n_zeta_params(&self) -> usize {
        match self.tie_mode {
            TieMode::Free => self.n_internal * self.n_obs * self.n_actions * (self.n_internal - 1),
            TieMode::TiedMemory => 1,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn residual_bounds(&self) -> (f64, f64) {
        self.residual_bounds
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "θ has {} entries, policy needs {}",
                theta.len(),
                self.dim()
            )));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_theta(theta)?;
        Ok(p)
    }

    pub fn set_bounds(&mut self, lower: Vec<f64>, upper: Vec<f64>, residual: (f64, f64)) -> Result<()> {
        if lower.len() != self.dim() || upper.len() != self.dim() {
            return Err(Error::DimensionMismatch("bounds must match θ".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) || residual.0 > residual.1 {
            return Err(Error::InvalidParameter("lower bound above upper bound".into()));
        }
        self.lower = lower;
        self.upper = upper;
        self.residual_bounds = residual;
        Ok(())
    }

    /// Simplex groups of θ, in layout order. Distributions over a single outcome have no
    /// parameters and no block.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        let na = self.n_actions - 1;
        for b in 0..self.n_internal * self.n_obs {
            out.push(ParamBlock {
                start: b * na,
                len: na,
                has_residual: true,
            });
        }
        let off = self.n_mu_params();
        match self.tie_mode {
            TieMode::Free => {
                let nz = self.n_internal - 1;
                for b in 0..self.n_internal * self.n_obs * self.n_actions {
                    out.push(ParamBlock {
                        start: off + b * nz,
                        len: nz,
                        has_residual: true,
                    });
                }
            }
            TieMode::TiedMemory => out.push(ParamBlock {
                start: off,
                len: 1,
                has_residual: false,
            }),
        }
        out.retain(|b| b.len > 0);
        out
    }

    /// True when every coordinate and every residual probability lies within its bounds.
    pub fn is_feasible(&self, tol: f64) -> bool {
        let in_box = self
            .theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (l, u))| *t >= l - tol && *t <= u + tol);
        let (rl, ru) = self.residual_bounds;
        in_box
            && self.blocks().iter().filter(|b| b.has_residual).all(|b| {
                let r = 1.0 - self.theta[b.range()].iter().sum::<f64>();
                r >= rl - tol && r <= ru + tol
            })
    }

    #[inline]
    fn mu_offset(&self, z: usize, y: usize) -> usize {
        (z * self.n_obs + y) * (self.n_actions - 1)
    }

    #[inline]
    fn zeta_offset(&self, z: usize, y: usize, u: usize) -> usize {
        self.n_mu_params() + ((z * self.n_obs + y) * self.n_actions + u) * (self.n_internal - 1)
    }

    /// μ_u(z, y): probability of action `u` in internal state `z` after observing `y`.
    #[inline]
    pub fn mu(&self, z: usize, y: usize, u: usize) -> f64 {
        let off = self.mu_offset(z, y);
        let na = self.n_actions - 1;
        if u < na {
            self.theta[off + u]
        } else {
            1.0 - self.theta[off..off + na].iter().sum::<f64>()
        }
    }

    /// ζ_z̄(z, y, u): probability of moving to internal state `z_next`.
    #[inline]
    pub fn zeta(&self, z: usize, y: usize, u: usize, z_next: usize) -> f64 {
        if self.n_internal == 1 {
            return 1.0;
        }
        match self.tie_mode {
            TieMode::Free => {
                let off = self.zeta_offset(z, y, u);
                let nz = self.n_internal - 1;
                if z_next < nz {
                    self.theta[off + z_next]
                } else {
                    1.0 - self.theta[off..off + nz].iter().sum::<f64>()
                }
            }
            TieMode::TiedMemory => {
                let p = self.theta[self.n_mu_params()];
                let keep = if z_next == z { p } else { 0.0 };
                let reset = if z_next == y { 1.0 - p } else { 0.0 };
                keep + reset
            }
        }
    }

    /// Adds `scale · ∂μ_u(z, y)/∂θ` into `out`.
    #[inline]
    pub fn add_grad_mu(&self, z: usize, y: usize, u: usize, scale: f64, out: &mut [f64]) {
        let off = self.mu_offset(z, y);
        let na = self.n_actions - 1;
        if u < na {
            out[off + u] += scale;
        } else {
            out[off..off + na].iter_mut().for_each(|o| *o -= scale);
        }
    }

    /// Adds `scale · ∂ζ_z̄(z, y, u)/∂θ` into `out`.
    #[inline]
    pub fn add_grad_zeta(&self, z: usize, y: usize, u: usize, z_next: usize, scale: f64, out: &mut [f64]) {
        if self.n_internal == 1 {
            return;
        }
        match self.tie_mode {
            TieMode::Free => {
                let off = self.zeta_offset(z, y, u);
                let nz = self.n_internal - 1;
                if z_next < nz {
                    out[off + z_next] += scale;
                } else {
                    out[off..off + nz].iter_mut().for_each(|o| *o -= scale);
                }
            }
            TieMode::TiedMemory => {
                let d = f64::from(u8::from(z_next == z)) - f64::from(u8::from(z_next == y));
                out[self.n_mu_params()] += scale * d;
            }
        }
    }

    /// Adds `scale · ∇ log μ_u(z, y)` into `out`; structurally zero probabilities add nothing.
    #[inline]
    pub fn add_score_mu(&self, z: usize, y: usize, u: usize, scale: f64, out: &mut [f64]) {
        let m = self.mu(z, y, u);
        if m != 0.0 {
            self.add_grad_mu(z, y, u, scale / m, out);
        }
    }

    /// Adds `scale · ∇ log ζ_z̄(z, y, u)` into `out`.
    #[inline]
    pub fn add_score_zeta(&self, z: usize, y: usize, u: usize, z_next: usize, scale: f64, out: &mut [f64]) {
        let q = self.zeta(z, y, u, z_next);
        if q != 0.0 {
            self.add_grad_zeta(z, y, u, z_next, scale / q, out);
        }
    }

    pub fn score_mu(&self, z: usize, y: usize, u: usize) -> ScoreVector {
        let mut v = vec![0.0; self.dim()];
        self.add_score_mu(z, y, u, 1.0, &mut v);
        ScoreVector(v)
    }

    pub fn score_zeta(&self, z: usize, y: usize, u: usize, z_next: usize) -> ScoreVector {
        let mut v = vec![0.0; self.dim()];
        self.add_score_zeta(z, y, u, z_next, 1.0, &mut v);
        ScoreVector(v)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, z: usize, y: usize, rng: &mut R) -> usize {
        let r: f64 = rng.random();
        categorical(r, self.n_actions, |u| self.mu(z, y, u))
    }

    pub fn sample_internal<R: Rng + ?Sized>(&self, z: usize, y: usize, u: usize, rng: &mut R) -> usize {
        let r: f64 = rng.random();
        categorical(r, self.n_internal, |zn| self.zeta(z, y, u, zn))
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            tie_mode: self.tie_mode,
            n_obs: self.n_obs,
            n_actions: self.n_actions,
            n_internal: self.n_internal,
            theta: self.theta.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            residual_bounds: self.residual_bounds,
        }
    }

    pub fn from_checkpoint(c: &PolicyCheckpoint) -> Result<Self> {
        let mut p = make_direct_fsc(c.n_obs, c.n_actions, c.n_internal, c.tie_mode)?;
        p.set_bounds(c.lower.clone(), c.upper.clone(), c.residual_bounds)?;
        p.set_theta(&c.theta)?;
        if !p.is_feasible(1e-9) {
            return Err(Error::InvalidParameter("checkpoint θ lies outside its bounds".into()));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(text)?)
    }
}

/// Inverse-CDF draw from `n` outcomes with probabilities `p(i)`, given `r ∈ [0, 1)`.
pub(crate) fn categorical(r: f64, n: usize, p: impl Fn(usize) -> f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for i in 0..n {
        let pi = p(i);
        if pi > 0.0 {
            last_positive = i;
            acc += pi;
            if r < acc {
                return i;
            }
        }
    }
    // rounding left r above the accumulated mass
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_counts() {
        assert_eq!(make_direct_fsc(3, 9, 3, TieMode::TiedMemory).unwrap().dim(), 73);
        let reactive = make_direct_fsc(2, 2, 1, TieMode::Free).unwrap();
        assert_eq!(reactive.dim(), 2);
        assert_eq!(reactive.zeta(0, 1, 1, 0), 1.0);
        assert_eq!(make_direct_fsc(2, 2, 2, TieMode::Free).unwrap().dim(), 12);
    }

    #[test]
    fn tied_memory_requires_matching_sizes() {
        assert!(make_direct_fsc(3, 2, 2, TieMode::TiedMemory).is_err());
    }

    #[test]
    fn uniform_initialization() {
        let p = make_direct_fsc(3, 9, 3, TieMode::TiedMemory).unwrap();
        for u in 0..9 {
            assert!((p.mu(2, 1, u) - 1.0 / 9.0).abs() < 1e-15);
        }
        assert!(p.is_feasible(0.0));
    }

    #[test]
    fn tied_memory_transitions() {
        let p = make_direct_fsc(3, 2, 3, TieMode::TiedMemory).unwrap();
        assert_eq!(p.zeta(0, 1, 0, 0), 0.2);
        assert_eq!(p.zeta(0, 1, 0, 1), 0.8);
        assert_eq!(p.zeta(0, 1, 0, 2), 0.0);
        assert_eq!(p.zeta(1, 1, 0, 1), 1.0);
    }

    #[test]
    fn residual_action_probability() {
        let p = make_direct_fsc(1, 2, 1, TieMode::Free)
            .unwrap()
            .with_theta(&[0.3])
            .unwrap();
        assert_eq!(p.mu(0, 0, 0), 0.3);
        assert_eq!(p.mu(0, 0, 1), 0.7);
        assert_eq!(p.score_mu(0, 0, 0).0, vec![1.0 / 0.3]);
        assert_eq!(p.score_mu(0, 0, 1).0, vec![-1.0 / 0.7]);
    }

    #[test]
    fn reactive_internal_sampling_is_trivial() {
        let p = make_direct_fsc(2, 3, 1, TieMode::Free).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| p.sample_internal(0, 1, 2, &mut rng) == 0));
    }

    #[test]
    fn dominant_action_frequency() {
        // μ = (0.999, 0.001): frequency of action 0 within 3σ of 0.999
        let p = make_direct_fsc(1, 2, 1, TieMode::Free)
            .unwrap()
            .with_theta(&[0.999])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| p.sample_action(0, 0, &mut rng) == 0).count();
        let freq = hits as f64 / n as f64;
        let sigma = (0.999 * 0.001 / n as f64).sqrt();
        assert!((freq - 0.999).abs() <= 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn uniform_nine_actions_chi_square() {
        let p = make_direct_fsc(1, 9, 1, TieMode::Free).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            counts[p.sample_action(0, 0, &mut rng)] += 1;
        }
        let expected = n as f64 / 9.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // χ²(8) critical value at α = 0.01
        assert!(chi2 < 20.090, "χ² = {chi2}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = make_direct_fsc(2, 3, 2, TieMode::TiedMemory).unwrap();
        let back = FscPolicy::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
    }

    fn random_policy(seed: u64, tie: TieMode) -> FscPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = make_direct_fsc(2, 3, 2, tie).unwrap();
        let theta: Vec<f64> = p
            .blocks()
            .iter()
            .flat_map(|b| {
                if !b.has_residual {
                    return (0..b.len).map(|_| rng.random_range(0.2..0.8)).collect::<Vec<_>>();
                }
                let w: Vec<f64> = (0..b.len + 1).map(|_| rng.random_range(0.2..1.0)).collect();
                let s: f64 = w.iter().sum();
                w[..b.len].iter().map(|v| v / s).collect::<Vec<_>>()
            })
            .collect();
        p.set_theta(&theta).unwrap();
        p
    }

    #[test]
    fn scores_match_finite_differences() {
        for tie in [TieMode::Free, TieMode::TiedMemory] {
            let p = random_policy(7, tie);
            let h = 1e-6;
            for (z, y, u, zn) in [(0, 0, 0, 0), (1, 0, 2, 1), (0, 1, 1, 1), (1, 1, 2, 0)] {
                let s_mu = p.score_mu(z, y, u).0;
                let s_zeta = p.score_zeta(z, y, u, zn).0;
                for i in 0..p.dim() {
                    let mut tp = p.theta().to_vec();
                    let mut tm = tp.clone();
                    tp[i] += h;
                    tm[i] -= h;
                    let (pp, pm) = (p.with_theta(&tp).unwrap(), p.with_theta(&tm).unwrap());
                    let fd_mu = (pp.mu(z, y, u).ln() - pm.mu(z, y, u).ln()) / (2.0 * h);
                    assert!(
                        (fd_mu - s_mu[i]).abs() <= 1e-6 * s_mu[i].abs().max(1.0),
                        "{tie:?} mu {i}"
                    );
                    let (a, b) = (pp.zeta(z, y, u, zn), pm.zeta(z, y, u, zn));
                    if a > 0.0 && b > 0.0 {
                        let fd = (a.ln() - b.ln()) / (2.0 * h);
                        assert!(
                            (fd - s_zeta[i]).abs() <= 1e-6 * s_zeta[i].abs().max(1.0),
                            "{tie:?} zeta {i}"
                        );
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn action_simplex_holds_for_any_theta(theta in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let p = make_direct_fsc(2, 2, 2, TieMode::Free).unwrap().with_theta(&theta).unwrap();
            for z in 0..2 { for y in 0..2 {
                let s: f64 = (0..2).map(|u| p.mu(z, y, u)).sum();
                prop_assert!((s - 1.0).abs() <= 1e-15);
                for u in 0..2 {
                    let s: f64 = (0..2).map(|zn| p.zeta(z, y, u, zn)).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-15);
                }
            }}
        }

        #[test]
        fn scores_bounded_on_feasible_set(seed in 0u64..500) {
            for tie in [TieMode::Free, TieMode::TiedMemory] {
                let p = random_policy(seed, tie);
                prop_assume!(p.is_feasible(0.0));
                for z in 0..2 { for y in 0..2 { for u in 0..3 {
                    for v in p.score_mu(z, y, u).0 { prop_assert!(v.abs() <= 1000.0); }
                    for zn in 0..2 {
                        for v in p.score_zeta(z, y, u, zn).0 { prop_assert!(v.abs() <= 1000.0); }
                    }
                }}}
            }
        }
    }
}
