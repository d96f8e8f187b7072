//! Gradient estimators, feasible-direction projection and the training loop.
//!
//! GPOMDP recursion (cost at step t is weighted by everything that influenced it):
//!
//! ```text
//! e_t = β e_{t−1} + ∇log μ_{u_t}(z_t, y_t) + ∇log ζ_{z_{t+1}}(z_t, y_t, u_t)
//! estimate = (1/T) Σ_t (g_t − η̂_t) e_t
//! ```
//!
//! Actor-critic: (1/T) Σ_t [∇log μ · φ₁'r₁ + ∇log ζ · φ₂'r₂] with critics fitted by LSPE(λ)
//! on the same trajectory. B-TD uses the final coefficients, OL-TD the coefficients
//! available at time t.

use serde::{Deserialize, Serialize};

use crate::critic::features::{FeatureLevel, FeatureMap};
use crate::critic::lspe::{lspe_batch, LspeOutput};
use crate::critic::td::Criterion;
use crate::error::{Error, Result};
use crate::model::PomdpModel;
use crate::oracle::exact::{cosine, ExactSolution};
use crate::policy::FscPolicy;
use crate::sim::{rng_for, simulate, simulate_with_rng, HiddenView, InitialState};
use crate::stats::centered_costs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "gpomdp", alias = "GPOMDP")]
    Gpomdp,
    #[serde(rename = "b-td", alias = "B-TD")]
    BTd,
    #[serde(rename = "ol-td", alias = "OL-TD")]
    OlTd,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::BTd, EstimatorKind::OlTd, EstimatorKind::Gpomdp];

    pub fn tag(self) -> &'static str {
        match self {
            EstimatorKind::Gpomdp => "GPOMDP",
            EstimatorKind::BTd => "B-TD",
            EstimatorKind::OlTd => "OL-TD",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gpomdp" => Ok(EstimatorKind::Gpomdp),
            "b-td" | "btd" => Ok(EstimatorKind::BTd),
            "ol-td" | "oltd" => Ok(EstimatorKind::OlTd),
            _ => Err(Error::InvalidParameter(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Criterion the critics are fitted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    Discounted,
    AverageCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub beta: f64,
    pub lambda: f64,
    pub critic: CriticKind,
    /// Subtract the running average cost from the per-stage cost.
    pub centering: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::BTd,
            beta: 0.9,
            lambda: 0.9,
            critic: CriticKind::Discounted,
            centering: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!("β = {} must lie in [0, 1)", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "λ = {} must lie in [0, 1]",
                self.lambda
            )));
        }
        if self.critic == CriticKind::AverageCost && self.lambda >= 1.0 && self.kind != EstimatorKind::Gpomdp {
            return Err(Error::InvalidParameter("average-cost critics need λ < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub value: Vec<f64>,
    pub kind: EstimatorKind,
    pub len: usize,
    pub beta: f64,
    pub lambda: Option<f64>,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// GPOMDP with online-centered costs.
pub fn gpomdp_estimate(view: &HiddenView, policy: &FscPolicy, beta: f64) -> Result<GradientEstimate> {
    let costs = centered_costs(view.steps().iter().map(|s| s.g));
    gpomdp_with_costs(view, policy, beta, &costs)
}

/// GPOMDP weighting each step by the given per-stage cost.
pub fn gpomdp_with_costs(view: &HiddenView, policy: &FscPolicy, beta: f64, costs: &[f64]) -> Result<GradientEstimate> {
    let n = view.len();
    if n < 2 {
        return Err(Error::InvalidParameter("GPOMDP needs at least two steps".into()));
    }
    if costs.len() != n {
        return Err(Error::DimensionMismatch("one cost per step is required".into()));
    }
    let k = policy.dim();
    let mut e = vec![0.0; k];
    let mut acc = vec![0.0; k];
    let reactive = policy.is_reactive();
    for (t, &c) in costs.iter().enumerate() {
        let s = view.get(t);
        e.iter_mut().for_each(|v| *v *= beta);
        policy.add_score_mu(s.z, s.y, s.u, 1.0, &mut e);
        if !reactive {
            policy.add_score_zeta(s.z, s.y, s.u, view.z_next(t), 1.0, &mut e);
        }
        acc.iter_mut().zip(&e).for_each(|(a, v)| *a += c * v);
    }
    Ok(GradientEstimate {
        value: acc.into_iter().map(|v| v / n as f64).collect(),
        kind: EstimatorKind::Gpomdp,
        len: n,
        beta,
        lambda: None,
    })
}

/// A fitted linear critic.
#[derive(Debug, Clone, Copy)]
pub struct Critic<'a> {
    pub features: &'a FeatureMap,
    pub fit: &'a LspeOutput,
}

/// Assembles the actor-critic estimate from fitted critics.
///
/// `critic2` must be given exactly when the controller has internal transitions to learn.
pub fn actor_critic_estimate(
    view: &HiddenView,
    policy: &FscPolicy,
    critic1: Critic<'_>,
    critic2: Option<Critic<'_>>,
    mode: EstimatorKind,
) -> Result<GradientEstimate> {
    if mode == EstimatorKind::Gpomdp {
        return Err(Error::InvalidParameter("GPOMDP is not an actor-critic mode".into()));
    }
    let ok1 = match critic1.features.level() {
        FeatureLevel::Yu => policy.is_reactive(),
        FeatureLevel::Yzu => true,
        FeatureLevel::Yzuz => false,
    };
    if !ok1 {
        return Err(Error::DimensionMismatch(
            "first critic must be over (y, u) or (y, z, u)".into(),
        ));
    }
    if let Some(c2) = critic2 {
        if c2.features.level() != FeatureLevel::Yzuz {
            return Err(Error::DimensionMismatch(
                "second critic must be over (y, z, u, z̄)".into(),
            ));
        }
    }
    let online = mode == EstimatorKind::OlTd;
    for c in std::iter::once(critic1).chain(critic2) {
        if online && c.fit.snapshots.is_none() {
            return Err(Error::InvalidParameter("OL-TD needs per-step critic snapshots".into()));
        }
    }
    let n = view.len();
    let mut acc = vec![0.0; policy.dim()];
    for t in 0..n {
        let s = view.get(t);
        let zn = view.z_next(t);
        let r1 = if online {
            critic1.fit.snapshot(t).unwrap()
        } else {
            &critic1.fit.r[..]
        };
        let v1 = critic1.features.value(critic1.features.cell(s.y, s.z, s.u, zn), r1);
        policy.add_score_mu(s.z, s.y, s.u, v1, &mut acc);
        if let Some(c2) = critic2 {
            let r2 = if online {
                c2.fit.snapshot(t).unwrap()
            } else {
                &c2.fit.r[..]
            };
            let v2 = c2.features.value(c2.features.cell(s.y, s.z, s.u, zn), r2);
            policy.add_score_zeta(s.z, s.y, s.u, zn, v2, &mut acc);
        }
    }
    Ok(GradientEstimate {
        value: acc.into_iter().map(|v| v / n as f64).collect(),
        kind: mode,
        len: n,
        beta: 0.0,
        lambda: None,
    })
}

/// Minimum-basis feature maps for a controller: (y, u) or (y, z, u), and (y, z, u, z̄) when
/// the controller has internal transitions.
pub fn critic_features(policy: &FscPolicy) -> Result<(FeatureMap, Option<FeatureMap>)> {
    let l1 = if policy.is_reactive() {
        FeatureLevel::Yu
    } else {
        FeatureLevel::Yzu
    };
    let f1 = FeatureMap::minimum_basis(policy, l1)?;
    let f2 = if policy.is_reactive() || policy.n_zeta_params() == 0 {
        None
    } else {
        Some(FeatureMap::minimum_basis(policy, FeatureLevel::Yzuz)?)
    };
    Ok((f1, f2))
}

/// Runs the configured estimator on a trajectory.
pub fn estimate(view: &HiddenView, policy: &FscPolicy, cfg: &EstimatorConfig) -> Result<GradientEstimate> {
    let costs = if cfg.centering || cfg.critic == CriticKind::AverageCost {
        centered_costs(view.steps().iter().map(|s| s.g))
    } else {
        view.steps().iter().map(|s| s.g).collect()
    };
    estimate_with_costs(view, policy, cfg, &costs)
}

/// Runs the configured estimator with caller-prepared per-stage costs; `cfg.centering` is
/// not applied again.
pub fn estimate_with_costs(
    view: &HiddenView,
    policy: &FscPolicy,
    cfg: &EstimatorConfig,
    costs: &[f64],
) -> Result<GradientEstimate> {
    cfg.validate()?;
    if cfg.kind == EstimatorKind::Gpomdp {
        return gpomdp_with_costs(view, policy, cfg.beta, costs);
    }
    let criterion = match cfg.critic {
        CriticKind::Discounted => Criterion::Discounted(cfg.beta),
        CriticKind::AverageCost => Criterion::AverageCost,
    };
    let online = cfg.kind == EstimatorKind::OlTd;
    let (f1, f2) = critic_features(policy)?;
    let fit1 = lspe_batch(view, &f1, criterion, cfg.lambda, costs, online)?;
    let fit2 = match &f2 {
        Some(f) => Some(lspe_batch(view, f, criterion, cfg.lambda, costs, online)?),
        None => None,
    };
    let c2 = f2
        .as_ref()
        .zip(fit2.as_ref())
        .map(|(features, fit)| Critic { features, fit });
    let mut est = actor_critic_estimate(
        view,
        policy,
        Critic {
            features: &f1,
            fit: &fit1,
        },
        c2,
        cfg.kind,
    )?;
    est.beta = cfg.beta;
    est.lambda = Some(cfg.lambda);
    Ok(est)
}

/// How [`alignment`] compares two gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMode {
    /// Cosine of the raw vectors.
    Plain,
    /// Cosine of the projections of the descent directions onto the feasible directions.
    Projected,
}

/// Cosine similarity in [−1, 1]; NaN when either (projected) vector is zero.
pub fn alignment(estimate: &[f64], reference: &[f64], policy: &FscPolicy, mode: AlignmentMode) -> f64 {
    match mode {
        AlignmentMode::Plain => cosine(estimate, reference),
        AlignmentMode::Projected => {
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            let a = project_direction(policy, &neg(estimate));
            let b = project_direction(policy, &neg(reference));
            cosine(&a, &b)
        }
    }
}

/// A bound counts as active within this distance.
pub const ACTIVE_TOLERANCE: f64 = 1e-12;

/// Euclidean projection of `dir` onto the tangent cone of the feasible set at the current θ.
///
/// Per block the feasible set is a box plus the residual-probability constraint
/// `1 − hi_r ≤ Σθ ≤ 1 − lo_r`.
pub fn project_direction(policy: &FscPolicy, dir: &[f64]) -> Vec<f64> {
    let theta = policy.theta();
    let (lo, hi) = (policy.lower(), policy.upper());
    let (rl, rh) = policy.residual_bounds();
    let mut out = dir.to_vec();
    for b in policy.blocks() {
        let range = b.range();
        let v = &dir[range.clone()];
        let l: Vec<f64> = range
            .clone()
            .map(|i| {
                if theta[i] <= lo[i] + ACTIVE_TOLERANCE {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let u: Vec<f64> = range
            .clone()
            .map(|i| {
                if theta[i] >= hi[i] - ACTIVE_TOLERANCE {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let (sl, su) = if b.has_residual {
            let s: f64 = theta[range.clone()].iter().sum();
            let sl = if s <= 1.0 - rh + ACTIVE_TOLERANCE {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            let su = if s >= 1.0 - rl - ACTIVE_TOLERANCE {
                0.0
            } else {
                f64::INFINITY
            };
            (sl, su)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        let d = project_box_sum(v, &l, &u, sl, su);
        out[range].copy_from_slice(&d);
    }
    out
}

/// Euclidean projection of θ onto the feasible set of the controller.
pub fn project_feasible(policy: &FscPolicy, theta: &[f64]) -> Vec<f64> {
    let (lo, hi) = (policy.lower(), policy.upper());
    let (rl, rh) = policy.residual_bounds();
    let mut out = theta.to_vec();
    for b in policy.blocks() {
        let range = b.range();
        let (sl, su) = if b.has_residual {
            (1.0 - rh, 1.0 - rl)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        let d = project_box_sum(&theta[range.clone()], &lo[range.clone()], &hi[range.clone()], sl, su);
        out[range].copy_from_slice(&d);
    }
    out
}

/// argmin ‖d − v‖² subject to l ≤ d ≤ u and sl ≤ Σd ≤ su.
///
/// The minimizer is d(ν) = clip(v − ν, l, u) for the multiplier ν of the sum constraint,
/// found by bisection on the nonincreasing map ν ↦ Σ d(ν).
pub(crate) fn project_box_sum(v: &[f64], l: &[f64], u: &[f64], sl: f64, su: f64) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> {
        v.iter()
            .zip(l.iter().zip(u))
            .map(|(x, (a, b))| (x - nu).clamp(*a, *b))
            .collect()
    };
    let sum = |nu: f64| at(nu).iter().sum::<f64>();
    let s0 = sum(0.0);
    let target = if s0 > su {
        su
    } else if s0 < sl {
        sl
    } else {
        return at(0.0);
    };
    // bracket [a, b] with sum(a) ≥ target ≥ sum(b)
    let scale = v.iter().map(|x| x.abs()).fold(1.0, f64::max);
    let (mut a, mut b) = if s0 > target { (0.0, scale) } else { (-scale, 0.0) };
    for _ in 0..200 {
        if s0 > target && sum(b) > target {
            a = b;
            b *= 2.0;
        } else if s0 < target && sum(a) < target {
            b = a;
            a *= 2.0;
        } else {
            break;
        }
    }
    loop {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if sum(mid) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    // the side that satisfies the sum constraint
    if s0 > target {
        at(b)
    } else {
        at(a)
    }
}

/// Alignment with `reference` of each estimator in `kinds`, all computed from one trajectory
/// of length `len` simulated with `seed`. `cfg.kind` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn alignment_trial(
    model: &PomdpModel,
    policy: &FscPolicy,
    reference: &[f64],
    cfg: &EstimatorConfig,
    kinds: &[EstimatorKind],
    len: usize,
    seed: u64,
    mode: AlignmentMode,
) -> Result<Vec<f64>> {
    let traj = simulate(model, policy, len, seed, &InitialState::Model)?;
    let view = traj.hidden_view();
    kinds
        .iter()
        .map(|&kind| {
            let est = estimate(&view, policy, &EstimatorConfig { kind, ..cfg.clone() })?;
            Ok(alignment(&est.value, reference, policy, mode))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub estimator: EstimatorConfig,
    pub iterations: usize,
    pub trajectory_len: usize,
    pub step: f64,
    pub seed: u64,
    /// Index of the first iteration; each iteration draws trajectory stream `iter`.
    pub first_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            iterations: 200,
            trajectory_len: 20_000,
            step: 0.01,
            seed: 0,
            first_iter: 0,
        }
    }
}

/// One iteration of [`train`]: θ_i, its exact average cost and the estimate taken there.
/// The last record (after the final update) has no estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub eta: f64,
    pub grad_norm: f64,
    /// Projected alignment of the estimate with the exact gradient.
    pub alignment: f64,
    pub theta: Vec<f64>,
}

/// Projected constant-step descent with a fresh trajectory and estimate every iteration.
pub fn train(
    model: &PomdpModel,
    policy0: &FscPolicy,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<(FscPolicy, Vec<TrainRecord>)> {
    cfg.estimator.validate()?;
    if !policy0.is_feasible(1e-12) {
        return Err(Error::InvalidParameter("initial parameters are infeasible".into()));
    }
    let mut policy = policy0.clone();
    let mut log = Vec::with_capacity(cfg.iterations + 1);
    for i in cfg.first_iter..cfg.first_iter + cfg.iterations {
        let sol = ExactSolution::compute(model, &policy, None)?;
        let exact = sol.gradient(&policy);
        let mut rng = rng_for(cfg.seed, i as u64);
        let traj = simulate_with_rng(model, &policy, cfg.trajectory_len, &InitialState::Model, &mut rng)?;
        let est = estimate(&traj.hidden_view(), &policy, &cfg.estimator)?;
        let rec = TrainRecord {
            iter: i,
            eta: sol.eta,
            grad_norm: est.norm(),
            alignment: alignment(&est.value, &exact.0, &policy, AlignmentMode::Projected),
            theta: policy.theta().to_vec(),
        };
        on_record(&rec);
        log.push(rec);

        let neg: Vec<f64> = est.value.iter().map(|v| -v).collect();
        let d = project_direction(&policy, &neg);
        let next: Vec<f64> = policy.theta().iter().zip(&d).map(|(t, d)| t + cfg.step * d).collect();
        policy.set_theta(&project_feasible(&policy, &next))?;
    }
    let rec = TrainRecord {
        iter: cfg.first_iter + cfg.iterations,
        eta: ExactSolution::compute(model, &policy, None)?.eta,
        grad_norm: f64::NAN,
        alignment: f64::NAN,
        theta: policy.theta().to_vec(),
    };
    on_record(&rec);
    log.push(rec);
    Ok((policy, log))
}
