//! Semi-Markov extension: random sojourn times between decision epochs.
//!
//! The average cost per unit time is η = E₀{g} / E₀{τ̄}. Its gradient is the gradient of the
//! embedded problem with per-stage cost g − τ̄η (η held fixed), divided by E₀{τ̄}.
//! Controllers never see sojourn times; only the estimators below take them.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::actor::{estimate_with_costs, EstimatorConfig, GradientEstimate};
use crate::chain::{build_joint_chain, ChainLevel};
use crate::critic::StepSchedule;
use crate::error::{Error, Result};
use crate::model::PomdpModel;
use crate::oracle::exact::{refine_xyzu, GradientVector};
use crate::oracle::markov::{solve_poisson, stationary_distribution};
use crate::oracle::{exact_gradient, ExactSolution};
use crate::policy::FscPolicy;
use crate::sim::{rng_for, simulate, HiddenView, InitialState, Trajectory};

/// Stream used for sojourn draws, separate from the trajectory stream.
pub const SOJOURN_STREAM: u64 = 0x50_4a;

/// Sojourn-time distribution of one (x, y, u) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Sojourn {
    Deterministic {
        value: f64,
    },
    Exponential {
        mean: f64,
    },
    /// `high` with probability `p_high`, else `low`.
    TwoPoint {
        low: f64,
        high: f64,
        p_high: f64,
    },
}

impl Sojourn {
    pub fn mean(&self) -> f64 {
        match *self {
            Sojourn::Deterministic { value } => value,
            Sojourn::Exponential { mean } => mean,
            Sojourn::TwoPoint { low, high, p_high } => low + p_high * (high - low),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Sojourn::Deterministic { .. } => 0.0,
            Sojourn::Exponential { mean } => mean * mean,
            Sojourn::TwoPoint { low, high, p_high } => p_high * (1.0 - p_high) * (high - low).powi(2),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Sojourn::Deterministic { value } => value,
            Sojourn::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
            Sojourn::TwoPoint { low, high, p_high } => {
                if rng.random::<f64>() < p_high {
                    high
                } else {
                    low
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Sojourn::Deterministic { value } => value > 0.0 && value.is_finite(),
            Sojourn::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            Sojourn::TwoPoint { low, high, p_high } => {
                low >= 0.0 && high >= low && high.is_finite() && (0.0..=1.0).contains(&p_high) && self.mean() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "sojourn {self:?} needs a finite positive mean"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosmdpModel {
    base: PomdpModel,
    /// Indexed (x·|Y| + y)·|U| + u.
    sojourn: Vec<Sojourn>,
    /// Realized cost g·τ/τ̄ instead of g; the conditional mean is g either way.
    pub cost_scales_with_time: bool,
}

impl PosmdpModel {
    pub fn new(base: PomdpModel, sojourn: Vec<Sojourn>) -> Result<Self> {
        let n = base.n_states() * base.n_obs() * base.n_actions();
        if sojourn.len() != n {
            return Err(Error::DimensionMismatch(format!("{n} sojourn distributions expected")));
        }
        sojourn.iter().try_for_each(Sojourn::validate)?;
        Ok(Self {
            base,
            sojourn,
            cost_scales_with_time: false,
        })
    }

    /// The same sojourn distribution everywhere.
    pub fn uniform(base: PomdpModel, s: Sojourn) -> Result<Self> {
        let n = base.n_states() * base.n_obs() * base.n_actions();
        Self::new(base, vec![s; n])
    }

    /// Sojourn distribution per (x, y, u) from a function.
    pub fn from_fn(base: PomdpModel, f: impl Fn(usize, usize, usize) -> Sojourn) -> Result<Self> {
        let (ns, no, na) = (base.n_states(), base.n_obs(), base.n_actions());
        let mut v = Vec::with_capacity(ns * no * na);
        for x in 0..ns {
            for y in 0..no {
                for u in 0..na {
                    v.push(f(x, y, u));
                }
            }
        }
        Self::new(base, v)
    }

    pub fn base(&self) -> &PomdpModel {
        &self.base
    }

    #[inline]
    pub fn sojourn(&self, x: usize, y: usize, u: usize) -> &Sojourn {
        &self.sojourn[(x * self.base.n_obs() + y) * self.base.n_actions() + u]
    }

    #[inline]
    pub fn mean_sojourn(&self, x: usize, y: usize, u: usize) -> f64 {
        self.sojourn(x, y, u).mean()
    }

    /// Copy with every mean sojourn multiplied by `c` (families kept).
    pub fn scale_time(&self, c: f64) -> Result<Self> {
        let sojourn = self
            .sojourn
            .iter()
            .map(|s| match *s {
                Sojourn::Deterministic { value } => Sojourn::Deterministic { value: c * value },
                Sojourn::Exponential { mean } => Sojourn::Exponential { mean: c * mean },
                Sojourn::TwoPoint { low, high, p_high } => Sojourn::TwoPoint {
                    low: c * low,
                    high: c * high,
                    p_high,
                },
            })
            .collect();
        let mut m = Self::new(self.base.clone(), sojourn)?;
        m.cost_scales_with_time = self.cost_scales_with_time;
        Ok(m)
    }

    /// The embedded problem with per-stage cost g − τ̄η.
    pub fn transformed(&self, eta: f64) -> PomdpModel {
        self.base.map_costs(|x, y, u, g| g - self.mean_sojourn(x, y, u) * eta)
    }
}

/// E₀{τ̄} under the stationary distribution of the embedded chain.
pub fn mean_sojourn(model: &PosmdpModel, policy: &FscPolicy) -> Result<f64> {
    Ok(ratio_parts(model, policy)?.1)
}

fn ratio_parts(model: &PosmdpModel, policy: &FscPolicy) -> Result<(f64, f64)> {
    let chain = build_joint_chain(&model.base, policy, ChainLevel::Xyz)?;
    let pi = stationary_distribution(&chain.p)?;
    let pi_u = refine_xyzu(&chain.dims, policy, &pi);
    let d = chain.dims;
    let (mut g, mut tau) = (0.0, 0.0);
    for (i, &p) in pi_u.iter().enumerate() {
        if p > 0.0 {
            let s = d.decode(ChainLevel::Xyzu, i);
            let u = s.u.unwrap();
            g += p * model.base.cost(s.x, s.y, u);
            tau += p * model.mean_sojourn(s.x, s.y, u);
        }
    }
    Ok((g, tau))
}

/// η = E₀{g} / E₀{τ̄}.
pub fn posmdp_average_cost(model: &PosmdpModel, policy: &FscPolicy) -> Result<f64> {
    let (g, tau) = ratio_parts(model, policy)?;
    Ok(g / tau)
}

/// Bias over (x, y, z, u) solving h = g − τ̄η + P h with π·h = 0.
pub fn posmdp_bias(model: &PosmdpModel, policy: &FscPolicy, eta: f64) -> Result<Vec<f64>> {
    let chain = build_joint_chain(&model.transformed(eta), policy, ChainLevel::Xyzu)?;
    let pi = stationary_distribution(&chain.p)?;
    let (resid, h) = solve_poisson(&chain.p, &pi, &chain.cost)?;
    if resid.abs() > 1e-9 * (1.0 + eta.abs()) {
        log::warn!("η does not zero the transformed average cost (residual {resid:e})");
    }
    Ok(h)
}

/// Exact ∇η of the average cost per unit time.
pub fn posmdp_gradient_exact(model: &PosmdpModel, policy: &FscPolicy) -> Result<GradientVector> {
    let (g, tau) = ratio_parts(model, policy)?;
    let eta = g / tau;
    let grad = exact_gradient(&model.transformed(eta), policy)?;
    Ok(GradientVector(grad.0.into_iter().map(|v| v / tau).collect()))
}

/// Exact solution of the transformed embedded problem, for dumps.
pub fn posmdp_solution(model: &PosmdpModel, policy: &FscPolicy) -> Result<(f64, ExactSolution)> {
    let eta = posmdp_average_cost(model, policy)?;
    Ok((eta, ExactSolution::compute(&model.transformed(eta), policy, None)?))
}

/// A trajectory plus the sojourn that followed each decision. The `g` of every step is the
/// realized cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTrajectory {
    pub traj: Trajectory,
    pub sojourn: Vec<f64>,
}

/// Hidden view with sojourn times, for estimators only.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedView {
    pub view: HiddenView,
    pub sojourn: Vec<f64>,
}

impl TimedTrajectory {
    pub fn timed_view(&self) -> TimedView {
        TimedView {
            view: self.traj.hidden_view(),
            sojourn: self.sojourn.clone(),
        }
    }

    /// Total cost over total time.
    pub fn empirical_average_cost(&self) -> f64 {
        self.traj.steps.iter().map(|s| s.g).sum::<f64>() / self.sojourn.iter().sum::<f64>()
    }

    /// Columns t,x,y,z,u,g,tau,sojourn where tau is the epoch time of the decision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let t = &self.traj;
        writeln!(out, "# seed={} tail={},{},{}", t.seed, t.tail.0, t.tail.1, t.tail.2)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "z", "u", "g", "tau", "sojourn"])?;
        let mut clock = 0.0;
        for (i, (s, d)) in t.steps.iter().zip(&self.sojourn).enumerate() {
            w.write_record([
                i.to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.z.to_string(),
                s.u.to_string(),
                format!("{:?}", s.g),
                format!("{clock:?}"),
                format!("{d:?}"),
            ])?;
            clock += d;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates the embedded process exactly as [`simulate`] does and draws sojourns from a
/// separate stream, so the decision path does not depend on the sojourn family.
pub fn simulate_posmdp(
    model: &PosmdpModel,
    policy: &FscPolicy,
    len: usize,
    seed: u64,
    init: &InitialState,
) -> Result<TimedTrajectory> {
    let mut traj = simulate(&model.base, policy, len, seed, init)?;
    let mut rng = rng_for(seed, SOJOURN_STREAM);
    let mut sojourn = Vec::with_capacity(len);
    for s in traj.steps.iter_mut() {
        let dist = model.sojourn(s.x, s.y, s.u);
        let tau = dist.sample(&mut rng);
        if model.cost_scales_with_time {
            s.g = s.g * tau / dist.mean();
        }
        sojourn.push(tau);
    }
    Ok(TimedTrajectory { traj, sojourn })
}

/// Online estimate of η used in the transformed costs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EtaTracking {
    /// η̂_n = (c_0 + … + c_{n−1}) / (τ_0 + … + τ_{n−1}), η̂_0 = 0.
    #[default]
    RatioOfSums,
    /// η̂ ← η̂ + ρ_n (c_n − τ_n η̂), starting from 0.
    Stepwise(StepSchedule),
}

/// Costs c_n − τ_n η̂_n with η̂_n formed from epochs before n.
pub fn transformed_costs(view: &TimedView, tracking: EtaTracking) -> Vec<f64> {
    let steps = view.view.steps().iter().zip(&view.sojourn).enumerate();
    match tracking {
        EtaTracking::RatioOfSums => {
            let (mut cs, mut ts) = (0.0, 0.0);
            steps
                .map(|(n, (s, &tau))| {
                    let eta = if n == 0 { 0.0 } else { cs / ts };
                    cs += s.g;
                    ts += tau;
                    s.g - tau * eta
                })
                .collect()
        }
        EtaTracking::Stepwise(sched) => {
            let mut eta = 0.0;
            steps
                .map(|(n, (s, &tau))| {
                    let c = s.g - tau * eta;
                    eta += sched.rho(n) * c;
                    c
                })
                .collect()
        }
    }
}

/// Gradient estimate from a timed trajectory: the configured estimator on the transformed
/// costs, divided by the empirical mean sojourn.
pub fn posmdp_td_estimate(
    view: &TimedView,
    policy: &FscPolicy,
    cfg: &EstimatorConfig,
    tracking: EtaTracking,
) -> Result<GradientEstimate> {
    if view.sojourn.len() != view.view.len() {
        return Err(Error::DimensionMismatch("one sojourn per step is required".into()));
    }
    let costs = transformed_costs(view, tracking);
    let mut est = estimate_with_costs(&view.view, policy, cfg, &costs)?;
    let mean_tau = view.sojourn.iter().sum::<f64>() / view.sojourn.len() as f64;
    est.value.iter_mut().for_each(|v| *v /= mean_tau);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{make_direct_fsc, TieMode};

    fn two_cycle() -> PomdpModel {
        PomdpModel::from_flat(2, 1, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0], None).unwrap()
    }

    #[test]
    fn two_cycle_ratio_and_bias() {
        let m = PosmdpModel::from_fn(two_cycle(), |x, _, _| Sojourn::Deterministic {
            value: if x == 0 { 1.0 } else { 3.0 },
        })
        .unwrap();
        let p = make_direct_fsc(1, 1, 1, TieMode::Free).unwrap();
        let eta = posmdp_average_cost(&m, &p).unwrap();
        assert!((eta - 0.5).abs() < 1e-15);
        let h = posmdp_bias(&m, &p, eta).unwrap();
        assert!((h[0] + 0.25).abs() < 1e-12 && (h[1] - 0.25).abs() < 1e-12, "{h:?}");
    }

    #[test]
    fn zero_effective_cost_has_zero_bias() {
        let base = two_cycle().map_costs(|x, _, _, _| if x == 0 { 1.0 } else { 3.0 });
        let m = PosmdpModel::from_fn(base, |x, _, _| Sojourn::Exponential {
            mean: if x == 0 { 1.0 } else { 3.0 },
        })
        .unwrap();
        let p = make_direct_fsc(1, 1, 1, TieMode::Free).unwrap();
        let eta = posmdp_average_cost(&m, &p).unwrap();
        assert!((eta - 1.0).abs() < 1e-15);
        assert!(posmdp_bias(&m, &p, eta).unwrap().iter().all(|h| h.abs() < 1e-12));
    }

    #[test]
    fn sojourn_moments() {
        let s = Sojourn::TwoPoint {
            low: 1.0,
            high: 3.0,
            p_high: 0.25,
        };
        assert_eq!(s.mean(), 1.5);
        assert_eq!(s.variance(), 0.75);
        assert!(Sojourn::Exponential { mean: 0.0 }.validate().is_err());
    }
}
