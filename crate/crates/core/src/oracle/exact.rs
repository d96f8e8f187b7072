//! Exact average-cost and discounted quantities for a model under a fixed controller.
//!
//! The finer chains over (x, y, z, u) and (x, y, z, u, z̄) are never solved directly here.
//! Their values follow from the (x, y, z) solution through
//! `W_f[x][u][z̄] = Σ_{x̄,ȳ} p(x̄|x,u) p(ȳ|x̄,u) f(x̄,ȳ,z̄)`:
//!
//! - Q(x,y,z,u)      = g(x,y,u) + Σ_z̄ ζ_z̄(z,y,u) W_h[x][u][z̄]
//! - h̃(x,y,z,u,z̄)    = g(x,y,u) − η + W_h[x][u][z̄]   (bias of the finest chain, π·h̃ = 0)
//! - Q_β(x,y,z,u)    = g(x,y,u) + β Σ_z̄ ζ_z̄ W_J[x][u][z̄]
//! - Q̃_β(x,y,z,u,z̄)  = g(x,y,u) + β W_J[x][u][z̄]
//!
//! [`gradient_via_chains`] solves the finer chains explicitly and serves as an independent
//! route on small models.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::chain::{build_joint_chain, ChainLevel, JointChain, JointDims};
use crate::critic::features::{weighted_projection, FeatureMap};
use crate::error::{Error, Result};
use crate::model::PomdpModel;
use crate::oracle::markov::{discounted_value, solve_average_cost};
use crate::policy::FscPolicy;

/// A gradient with respect to the controller parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Plain cosine similarity; NaN if either vector is zero.
    pub fn cosine(&self, other: &GradientVector) -> f64 {
        cosine(&self.0, &other.0)
    }
}

impl std::ops::Add for GradientVector {
    type Output = GradientVector;

    fn add(mut self, rhs: GradientVector) -> GradientVector {
        self.0.iter_mut().zip(rhs.0).for_each(|(a, b)| *a += b);
        self
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    c.clamp(-1.0, 1.0)
}

/// Conditional mean of a function of the hidden tuple given the observable cell.
///
/// Cells are `(y, z, u)` or `(y, z, u, z̄)` in the dense order of [`JointDims::yzu`] /
/// [`JointDims::yzuz`]. Cells with zero stationary mass have value NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CondMean {
    pub mass: Vec<f64>,
    pub value: Vec<f64>,
}

impl CondMean {
    /// Groups `values` (indexed like `weights`, on the (x, …) level) by the trailing
    /// observable cell. Every fine index is `x · n_cells + cell`.
    pub fn from_fine(n_cells: usize, weights: &[f64], values: &[f64]) -> Self {
        let mut mass = vec![0.0; n_cells];
        let mut acc = vec![0.0; n_cells];
        for (i, (&w, &v)) in weights.iter().zip(values).enumerate() {
            if w > 0.0 {
                mass[i % n_cells] += w;
                acc[i % n_cells] += w * v;
            }
        }
        let value = mass
            .iter()
            .zip(&acc)
            .map(|(&m, &a)| if m > 0.0 { a / m } else { f64::NAN })
            .collect();
        Self { mass, value }
    }

    pub fn n_cells(&self) -> usize {
        self.mass.len()
    }

    pub fn is_defined(&self, cell: usize) -> bool {
        self.mass[cell] > 0.0
    }
}

/// Discounted quantities at a fixed β.
#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub beta: f64,
    /// J_β over (x, y, z).
    pub j: Vec<f64>,
    /// Q_β over (x, y, z, u).
    pub q: Vec<f64>,
    /// Q̃_β over (x, y, z, u, z̄).
    pub q_tilde: Vec<f64>,
    /// E{Q_β | y, z, u}
    pub v1: CondMean,
    /// E{Q̃_β | y, z, u, z̄}
    pub v2: CondMean,
}

/// Everything the oracle knows about one (model, controller) pair.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub dims: JointDims,
    /// Stationary distribution over (x, y, z).
    pub pi: Vec<f64>,
    /// Stationary distribution over (x, y, z, u).
    pub pi_xyzu: Vec<f64>,
    /// Stationary distribution over (x, y, z, u, z̄).
    pub pi_xyzuz: Vec<f64>,
    pub eta: f64,
    /// Bias over (x, y, z), normalized by π·h = 0.
    pub h: Vec<f64>,
    /// Q over (x, y, z, u).
    pub q: Vec<f64>,
    /// Bias of the (x, y, z, u, z̄) chain.
    pub h_tilde: Vec<f64>,
    /// E{Q | y, z, u}; for reactive controllers this is v(y, u).
    pub v1: CondMean,
    /// E{h̃ | y, z, u, z̄}
    pub v2: CondMean,
    pub discounted: Option<DiscountedSolution>,
}

impl ExactSolution {
    /// Solves the average-cost problem, and the discounted one too if `beta` is given.
    pub fn compute(model: &PomdpModel, policy: &FscPolicy, beta: Option<f64>) -> Result<Self> {
        let chain = build_joint_chain(model, policy, ChainLevel::Xyz)?;
        let d = chain.dims;
        let (eta, h) = solve_average_cost(&chain.p, &chain.cost)?;
        let pi = crate::oracle::markov::stationary_distribution(&chain.p)?;
        let pi_xyzu = refine_xyzu(&d, policy, &pi);
        let pi_xyzuz = refine_xyzuz(&d, policy, &pi_xyzu);

        let w_h = next_expectation(model, &d, &h);
        let q = q_from_next(model, policy, &d, &w_h, 1.0);
        let h_tilde = tilde_from_next(model, &d, &w_h, 1.0, -eta);
        let n1 = d.n_obs * d.n_internal * d.n_actions;
        let v1 = CondMean::from_fine(n1, &pi_xyzu, &q);
        let v2 = CondMean::from_fine(n1 * d.n_internal, &pi_xyzuz, &h_tilde);

        let discounted = match beta {
            Some(b) => {
                let j = discounted_value(&chain.p, &chain.cost, b)?;
                let w_j = next_expectation(model, &d, &j);
                let q = q_from_next(model, policy, &d, &w_j, b);
                let q_tilde = tilde_from_next(model, &d, &w_j, b, 0.0);
                Some(DiscountedSolution {
                    beta: b,
                    v1: CondMean::from_fine(n1, &pi_xyzu, &q),
                    v2: CondMean::from_fine(n1 * d.n_internal, &pi_xyzuz, &q_tilde),
                    j,
                    q,
                    q_tilde,
                })
            }
            None => None,
        };
        Ok(Self {
            dims: d,
            pi,
            pi_xyzu,
            pi_xyzuz,
            eta,
            h,
            q,
            h_tilde,
            v1,
            v2,
            discounted,
        })
    }

    /// Σ π_xyzu ∇log μ · Q + Σ π_xyzuz ∇log ζ · h̃, split into its two terms.
    pub fn gradient_terms(&self, policy: &FscPolicy) -> (GradientVector, GradientVector) {
        assemble(
            policy,
            &self.dims,
            &self.pi_xyzu,
            &self.pi_xyzuz,
            &self.q,
            &self.h_tilde,
        )
    }

    pub fn gradient(&self, policy: &FscPolicy) -> GradientVector {
        let (a, b) = self.gradient_terms(policy);
        a + b
    }

    /// The discounted approximation with Q_β and Q̃_β in place of Q and h̃.
    pub fn beta_gradient(&self, policy: &FscPolicy) -> Option<GradientVector> {
        let ds = self.discounted.as_ref()?;
        let (a, b) = assemble(policy, &self.dims, &self.pi_xyzu, &self.pi_xyzuz, &ds.q, &ds.q_tilde);
        Some(a + b)
    }

    /// Writes one row per (x, y, z, u) tuple. η is recorded in a leading comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# eta={:.17e}", self.eta)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x", "y", "z", "u", "pi_xyz", "pi_xyzu", "h", "q", "v1"];
        if self.discounted.is_some() {
            header.extend(["j_beta", "q_beta", "v1_beta"]);
        }
        w.write_record(&header)?;
        let d = &self.dims;
        let n1 = d.n_obs * d.n_internal * d.n_actions;
        for i in 0..d.size(ChainLevel::Xyzu) {
            let s = d.decode(ChainLevel::Xyzu, i);
            let xyz = i / d.n_actions;
            let cell = i % n1;
            let mut row = vec![
                s.x.to_string(),
                s.y.to_string(),
                s.z.to_string(),
                s.u.unwrap().to_string(),
                fmt(self.pi[xyz]),
                fmt(self.pi_xyzu[i]),
                fmt(self.h[xyz]),
                fmt(self.q[i]),
                fmt(self.v1.value[cell]),
            ];
            if let Some(ds) = &self.discounted {
                row.extend([fmt(ds.j[xyz]), fmt(ds.q[i]), fmt(ds.v1.value[cell])]);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// π_xyzu = π_xyz · μ_u(z, y).
pub fn refine_xyzu(d: &JointDims, policy: &FscPolicy, pi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.size(ChainLevel::Xyzu)];
    for x in 0..d.n_states {
        for y in 0..d.n_obs {
            for z in 0..d.n_internal {
                let p = pi[d.xyz(x, y, z)];
                for u in 0..d.n_actions {
                    out[d.xyzu(x, y, z, u)] = p * policy.mu(z, y, u);
                }
            }
        }
    }
    out
}

/// π_xyzuz = π_xyzu · ζ_z̄(z, y, u).
pub fn refine_xyzuz(d: &JointDims, policy: &FscPolicy, pi_xyzu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.size(ChainLevel::Xyzuz)];
    for (i, &p) in pi_xyzu.iter().enumerate() {
        let s = d.decode(ChainLevel::Xyzu, i);
        for zn in 0..d.n_internal {
            out[i * d.n_internal + zn] = p * policy.zeta(s.z, s.y, s.u.unwrap(), zn);
        }
    }
    out
}

/// W_f[(x·|U| + u)·|Z| + z̄] = Σ_{x̄,ȳ} p(x̄|x,u) p(ȳ|x̄,u) f(x̄,ȳ,z̄).
pub fn next_expectation(model: &PomdpModel, d: &JointDims, f: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; d.n_states * d.n_actions * d.n_internal];
    for x in 0..d.n_states {
        for u in 0..d.n_actions {
            let base = (x * d.n_actions + u) * d.n_internal;
            for (xn, &t) in model.transition_row(x, u).iter().enumerate() {
                if t == 0.0 {
                    continue;
                }
                for (yn, &o) in model.observation_row(u, xn).iter().enumerate() {
                    if o == 0.0 {
                        continue;
                    }
                    for zn in 0..d.n_internal {
                        w[base + zn] += t * o * f[d.xyz(xn, yn, zn)];
                    }
                }
            }
        }
    }
    w
}

fn q_from_next(model: &PomdpModel, policy: &FscPolicy, d: &JointDims, w: &[f64], scale: f64) -> Vec<f64> {
    let mut q = vec![0.0; d.size(ChainLevel::Xyzu)];
    for (i, qi) in q.iter_mut().enumerate() {
        let s = d.decode(ChainLevel::Xyzu, i);
        let u = s.u.unwrap();
        let base = (s.x * d.n_actions + u) * d.n_internal;
        let cont: f64 = (0..d.n_internal)
            .map(|zn| policy.zeta(s.z, s.y, u, zn) * w[base + zn])
            .sum();
        *qi = model.cost(s.x, s.y, u) + scale * cont;
    }
    q
}

fn tilde_from_next(model: &PomdpModel, d: &JointDims, w: &[f64], scale: f64, shift: f64) -> Vec<f64> {
    let mut out = vec![0.0; d.size(ChainLevel::Xyzuz)];
    for (i, v) in out.iter_mut().enumerate() {
        let s = d.decode(ChainLevel::Xyzuz, i);
        let u = s.u.unwrap();
        let zn = s.z_next.unwrap();
        *v = model.cost(s.x, s.y, u) + shift + scale * w[(s.x * d.n_actions + u) * d.n_internal + zn];
    }
    out
}

/// Σ π_xyzu ∇log μ · a  and  Σ π_xyzuz ∇log ζ · b.
fn assemble(
    policy: &FscPolicy,
    d: &JointDims,
    pi_xyzu: &[f64],
    pi_xyzuz: &[f64],
    a: &[f64],
    b: &[f64],
) -> (GradientVector, GradientVector) {
    let k = policy.dim();
    let mut t1 = vec![0.0; k];
    for (i, &p) in pi_xyzu.iter().enumerate() {
        if p > 0.0 {
            let s = d.decode(ChainLevel::Xyzu, i);
            policy.add_score_mu(s.z, s.y, s.u.unwrap(), p * a[i], &mut t1);
        }
    }
    let mut t2 = vec![0.0; k];
    if !policy.is_reactive() {
        for (i, &p) in pi_xyzuz.iter().enumerate() {
            if p > 0.0 {
                let s = d.decode(ChainLevel::Xyzuz, i);
                policy.add_score_zeta(s.z, s.y, s.u.unwrap(), s.z_next.unwrap(), p * b[i], &mut t2);
            }
        }
    }
    (GradientVector(t1), GradientVector(t2))
}

/// Exact ∇η for the controller.
pub fn exact_gradient(model: &PomdpModel, policy: &FscPolicy) -> Result<GradientVector> {
    Ok(ExactSolution::compute(model, policy, None)?.gradient(policy))
}

/// The discounted approximation ∇_β η.
pub fn exact_beta_gradient(model: &PomdpModel, policy: &FscPolicy, beta: f64) -> Result<GradientVector> {
    let sol = ExactSolution::compute(model, policy, Some(beta))?;
    Ok(sol.beta_gradient(policy).expect("discounted solution requested"))
}

/// Exact average cost η.
pub fn average_cost(model: &PomdpModel, policy: &FscPolicy) -> Result<f64> {
    let chain = build_joint_chain(model, policy, ChainLevel::Xyz)?;
    Ok(solve_average_cost(&chain.p, &chain.cost)?.0)
}

/// Gradient assembled from observable conditional means only:
/// Σ_{y,z,u} π(y,z,u) ∇log μ · v1 + Σ_{y,z,u,z̄} π(y,z,u,z̄) ∇log ζ · v2.
pub fn gradient_from_conditional_means(policy: &FscPolicy, v1: &CondMean, v2: &CondMean) -> GradientVector {
    let (nz, na) = (policy.n_internal(), policy.n_actions());
    let mut g = vec![0.0; policy.dim()];
    for c in 0..v1.n_cells() {
        if v1.is_defined(c) {
            let (u, z, y) = (c % na, (c / na) % nz, c / (na * nz));
            policy.add_score_mu(z, y, u, v1.mass[c] * v1.value[c], &mut g);
        }
    }
    if !policy.is_reactive() {
        for c in 0..v2.n_cells() {
            if v2.is_defined(c) {
                let zn = c % nz;
                let r = c / nz;
                let (u, z, y) = (r % na, (r / na) % nz, r / (na * nz));
                policy.add_score_zeta(z, y, u, zn, v2.mass[c] * v2.value[c], &mut g);
            }
        }
    }
    GradientVector(g)
}

/// Q(s) = g(s) + Σ_{s'} P[s, s'] h(x̄, ȳ, z̄) on an (x, y, z, u) chain.
pub fn q_function(chain_xyzu: &JointChain, h: &[f64]) -> Result<Vec<f64>> {
    if chain_xyzu.level != ChainLevel::Xyzu {
        return Err(Error::DimensionMismatch(
            "q_function needs an (x, y, z, u) chain".into(),
        ));
    }
    let na = chain_xyzu.dims.n_actions;
    Ok((0..chain_xyzu.n())
        .map(|i| chain_xyzu.cost[i] + chain_xyzu.p.row(i).map(|(j, w)| w * h[j / na]).sum::<f64>())
        .collect())
}

/// J_β on the (x, y, z) chain and Q_β(s) = g(s) + β Σ P[s, ·] J_β on the (x, y, z, u) chain.
pub fn discounted_values(chain_xyz: &JointChain, chain_xyzu: &JointChain, beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if chain_xyz.level != ChainLevel::Xyz || chain_xyzu.level != ChainLevel::Xyzu {
        return Err(Error::DimensionMismatch(
            "discounted_values needs (x,y,z) and (x,y,z,u) chains".into(),
        ));
    }
    let j = discounted_value(&chain_xyz.p, &chain_xyz.cost, beta)?;
    let na = chain_xyzu.dims.n_actions;
    let q = (0..chain_xyzu.n())
        .map(|i| chain_xyzu.cost[i] + beta * chain_xyzu.p.row(i).map(|(s, w)| w * j[s / na]).sum::<f64>())
        .collect();
    Ok((j, q))
}

/// Solves the (x, y, z, u) and (x, y, z, u, z̄) chains explicitly and assembles
/// Σ π ∇log μ Q + Σ π ∇log ζ h̃ from their own stationary distributions and biases.
///
/// Dense and cubic in the finest chain size; meant for small models.
pub fn gradient_via_chains(model: &PomdpModel, policy: &FscPolicy) -> Result<GradientVector> {
    let cu = build_joint_chain(model, policy, ChainLevel::Xyzu)?;
    let pi_u = crate::oracle::markov::stationary_distribution(&cu.p)?;
    let (eta, h_u) = crate::oracle::markov::solve_poisson(&cu.p, &pi_u, &cu.cost)?;
    // the bias of the (x, y, z, u) chain is Q − η
    let q: Vec<f64> = h_u.iter().map(|v| v + eta).collect();
    let (pi_uz, h_tilde) = if policy.is_reactive() {
        (vec![], vec![])
    } else {
        let cz = build_joint_chain(model, policy, ChainLevel::Xyzuz)?;
        let pi = crate::oracle::markov::stationary_distribution(&cz.p)?;
        let (_, h) = crate::oracle::markov::solve_poisson(&cz.p, &pi, &cz.cost)?;
        (pi, h)
    };
    let (a, b) = assemble(policy, &cu.dims, &pi_u, &pi_uz, &q, &h_tilde);
    Ok(a + b)
}

/// The three quantities of the Pythagorean decomposition for a coefficient vector r:
/// E{(Q − φ'r)²}, E{Q² − v²} and E{(v − φ'r)²}, all under the stationary distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub total: f64,
    pub hidden_variance: f64,
    pub projection_error: f64,
}

/// `weights` and `values` live on the (x, …) level whose trailing index is the feature cell.
pub fn squared_error_decomposition(features: &FeatureMap, weights: &[f64], values: &[f64], r: &[f64]) -> Decomposition {
    let n_cells = features.n_cells();
    let v = CondMean::from_fine(n_cells, weights, values);
    let mut total = 0.0;
    let mut q2 = 0.0;
    for (i, (&w, &q)) in weights.iter().zip(values).enumerate() {
        if w > 0.0 {
            total += w * (q - features.value(i % n_cells, r)).powi(2);
            q2 += w * q * q;
        }
    }
    let mut v2 = 0.0;
    let mut proj = 0.0;
    for c in 0..n_cells {
        if v.is_defined(c) {
            v2 += v.mass[c] * v.value[c].powi(2);
            proj += v.mass[c] * (v.value[c] - features.value(c, r)).powi(2);
        }
    }
    Decomposition {
        total,
        hidden_variance: q2 - v2,
        projection_error: proj,
    }
}

/// π-weighted projection coefficients of a conditional mean onto the feature span.
pub fn project_conditional_mean(features: &FeatureMap, v: &CondMean) -> Result<Vec<f64>> {
    weighted_projection(features, &v.mass, &v.value)
}

/// min_c E{(v + c − φ'r)²} over the cells with positive mass.
pub fn shifted_sq_error(features: &FeatureMap, v: &CondMean, r: &[f64]) -> f64 {
    let cells: Vec<usize> = (0..v.n_cells()).filter(|&c| v.is_defined(c)).collect();
    let e: Vec<f64> = cells.iter().map(|&c| v.value[c] - features.value(c, r)).collect();
    let m: f64 = cells.iter().map(|&c| v.mass[c]).sum();
    let mean = cells.iter().zip(&e).map(|(&c, e)| v.mass[c] * e).sum::<f64>() / m;
    cells.iter().zip(&e).map(|(&c, e)| v.mass[c] * (e - mean).powi(2)).sum()
}

/// Limit of TD(λ) with linear features on `chain`, whose trailing index is the feature cell.
///
/// Solves Φ'D M(βP − I)Φ r = −Φ'D M g with M = (I − λβP)⁻¹ and D = diag(π). Pass
/// `beta = 1` with an already centered `cost` (g − η) and λ < 1 for the average-cost critic.
pub fn td_fixed_point(
    chain: &JointChain,
    pi: &[f64],
    features: &FeatureMap,
    cost: &[f64],
    beta: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) || !(0.0..=1.0).contains(&lambda) || beta * lambda >= 1.0 {
        return Err(Error::InvalidParameter(format!("β = {beta}, λ = {lambda}")));
    }
    let n = chain.n();
    let k = features.dim();
    let n_cells = features.n_cells();
    if !n.is_multiple_of(n_cells) {
        return Err(Error::DimensionMismatch("feature cells do not tile the chain".into()));
    }
    let phi = DMatrix::from_fn(n, k, |i, j| features.phi(i % n_cells)[j]);
    let p = chain.p.to_dense();
    let m_inv = DMatrix::<f64>::identity(n, n) - &p * (lambda * beta);
    let lu = m_inv.lu();
    let rhs_a = (&p * beta - DMatrix::<f64>::identity(n, n)) * &phi;
    let ma = lu.solve(&rhs_a).ok_or_else(|| Error::Singular("I − λβP".into()))?;
    let mg = lu
        .solve(&DVector::from_column_slice(cost))
        .ok_or_else(|| Error::Singular("I − λβP".into()))?;
    let dphi = DMatrix::from_fn(n, k, |i, j| pi[i] * phi[(i, j)]);
    let a = dphi.transpose() * ma;
    let b = dphi.transpose() * mg;
    let r = a
        .lu()
        .solve(&(-b))
        .ok_or_else(|| Error::Singular("TD fixed-point system".into()))?;
    Ok(r.iter().copied().collect())
}

/// π-norm of (1 − λ) P (I − λP)⁻¹ on functions with zero π-mean, over the support of π.
pub fn td_contraction_factor(chain: &JointChain, pi: &[f64], lambda: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must lie in [0, 1)")));
    }
    let support: Vec<usize> = (0..chain.n()).filter(|&i| pi[i] > 0.0).collect();
    let m = support.len();
    let p = DMatrix::from_fn(m, m, |i, j| chain.p.get(support[i], support[j]));
    let inv = (DMatrix::<f64>::identity(m, m) - &p * lambda)
        .try_inverse()
        .ok_or_else(|| Error::Singular("I − λP".into()))?;
    let l = p * inv * (1.0 - lambda);
    let s: Vec<f64> = support.iter().map(|&i| pi[i].sqrt()).collect();
    let k = DMatrix::from_fn(m, m, |i, j| s[i] * l[(i, j)] / s[j]);
    let sv = DVector::from_vec(s);
    let proj = DMatrix::<f64>::identity(m, m) - &sv * sv.transpose();
    Ok((k * proj).singular_values().max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{make_direct_fsc, TieMode};
    use crate::testing::{random_model, random_policy};

    fn fd_gradient(model: &PomdpModel, policy: &FscPolicy, step: f64) -> Vec<f64> {
        (0..policy.dim())
            .map(|i| {
                let mut tp = policy.theta().to_vec();
                let mut tm = tp.clone();
                tp[i] += step;
                tm[i] -= step;
                let ep = average_cost(model, &policy.with_theta(&tp).unwrap()).unwrap();
                let em = average_cost(model, &policy.with_theta(&tm).unwrap()).unwrap();
                (ep - em) / (2.0 * step)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, tie) in [(1, TieMode::Free), (2, TieMode::TiedMemory)] {
            let m = random_model(seed, 3, 2, 2);
            let p = random_policy(seed + 10, 2, 2, 2, tie);
            let g = exact_gradient(&m, &p).unwrap();
            assert!(rel_err(&g.0, &fd_gradient(&m, &p, 1e-5)) < 1e-6);
        }
    }

    #[test]
    fn structured_and_chain_routes_agree() {
        let m = random_model(4, 3, 2, 3);
        for (nz, tie) in [(1, TieMode::Free), (2, TieMode::Free), (2, TieMode::TiedMemory)] {
            let p = random_policy(5, 2, 3, nz, tie);
            let a = exact_gradient(&m, &p).unwrap();
            let b = gradient_via_chains(&m, &p).unwrap();
            assert!(rel_err(&a.0, &b.0) < 1e-10, "{nz} {tie:?}");
        }
    }

    #[test]
    fn constant_cost_has_zero_gradient() {
        let m = random_model(3, 3, 2, 2).map_costs(|_, _, _, _| 1.5);
        let p = random_policy(3, 2, 2, 2, TieMode::Free);
        let sol = ExactSolution::compute(&m, &p, None).unwrap();
        assert!((sol.eta - 1.5).abs() < 1e-12);
        assert!(sol.gradient(&p).norm() < 1e-12);
    }

    #[test]
    fn h_tilde_is_normalized_bias_of_finest_chain() {
        let m = random_model(6, 2, 2, 2);
        let p = random_policy(6, 2, 2, 2, TieMode::Free);
        let sol = ExactSolution::compute(&m, &p, None).unwrap();
        let cz = build_joint_chain(&m, &p, ChainLevel::Xyzuz).unwrap();
        let (eta, h) = solve_average_cost(&cz.p, &cz.cost).unwrap();
        assert!((eta - sol.eta).abs() < 1e-12);
        for (a, b) in h.iter().zip(&sol.h_tilde) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn q_function_on_chain_matches_structured_q() {
        let m = random_model(8, 3, 2, 2);
        let p = random_policy(8, 2, 2, 2, TieMode::Free);
        let sol = ExactSolution::compute(&m, &p, Some(0.8)).unwrap();
        let cxyz = build_joint_chain(&m, &p, ChainLevel::Xyz).unwrap();
        let cu = build_joint_chain(&m, &p, ChainLevel::Xyzu).unwrap();
        let q = q_function(&cu, &sol.h).unwrap();
        let (_, qb) = discounted_values(&cxyz, &cu, 0.8).unwrap();
        for i in 0..q.len() {
            assert!((q[i] - sol.q[i]).abs() < 1e-12);
            assert!((qb[i] - sol.discounted.as_ref().unwrap().q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_zero_uses_cost_only() {
        let m = random_model(9, 2, 2, 2);
        let p = random_policy(9, 2, 2, 1, TieMode::Free);
        let sol = ExactSolution::compute(&m, &p, Some(0.0)).unwrap();
        let ds = sol.discounted.unwrap();
        for i in 0..ds.q.len() {
            let s = sol.dims.decode(ChainLevel::Xyzu, i);
            assert_eq!(ds.q[i], m.cost(s.x, s.y, s.u.unwrap()));
        }
    }

    #[test]
    fn conditional_mean_of_two_states() {
        // π(x | y, u) uniform over two states with Q = (1, 3)
        let v = CondMean::from_fine(1, &[0.25, 0.25], &[1.0, 3.0]);
        assert_eq!(v.value, vec![2.0]);
        assert_eq!(v.mass, vec![0.5]);
        let empty = CondMean::from_fine(2, &[0.5, 0.0], &[1.0, 1.0]);
        assert!(empty.value[1].is_nan());
    }

    #[test]
    fn reactive_bellman_consistency() {
        let m = random_model(11, 3, 2, 2);
        let p = make_direct_fsc(2, 2, 1, TieMode::Free)
            .unwrap()
            .with_theta(&[0.3, 0.6])
            .unwrap();
        let sol = ExactSolution::compute(&m, &p, None).unwrap();
        for x in 0..3 {
            for y in 0..2 {
                let lhs: f64 = (0..2).map(|u| p.mu(0, y, u) * sol.q[sol.dims.xyzu(x, y, 0, u)]).sum();
                assert!((lhs - sol.h[sol.dims.xyz(x, y, 0)] - sol.eta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contraction_factor_vanishes_as_lambda_grows() {
        let m = random_model(12, 3, 2, 2);
        let p = random_policy(12, 2, 2, 1, TieMode::Free);
        let c = build_joint_chain(&m, &p, ChainLevel::Xyzu).unwrap();
        let pi = crate::oracle::markov::stationary_distribution(&c.p).unwrap();
        let a: Vec<f64> = [0.0, 0.5, 0.9, 0.99]
            .iter()
            .map(|&l| td_contraction_factor(&c, &pi, l).unwrap())
            .collect();
        assert!(a[0] < 1.0);
        assert!(a.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{a:?}");
        assert!(a[3] < 0.1);
    }
}
