//! Markov chains induced by a model and a controller.
//!
//! All tuples of the product space are kept and indexed densely:
//! `xyz = (x·|Y| + y)·|Z| + z`, `xyzu = xyz·|U| + u`, `xyzuz = xyzu·|Z| + z̄`.
//! Tuples that cannot occur keep well-formed rows; the stationary solver restricts
//! itself to the recurrent class.

use crate::error::{Error, Result};
use crate::model::PomdpModel;
use crate::policy::FscPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainLevel {
    /// (x, y, z)
    Xyz,
    /// (x, y, z, u)
    Xyzu,
    /// (x, y, z, u, z̄)
    Xyzuz,
}

/// Sizes of the component spaces and the dense index arithmetic over them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointDims {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_internal: usize,
    pub n_actions: usize,
}

/// One tuple of a joint chain. `u` and `z_next` are present at the finer levels only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointState {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub u: Option<usize>,
    pub z_next: Option<usize>,
}

impl JointDims {
    pub fn new(model: &PomdpModel, policy: &FscPolicy) -> Result<Self> {
        if model.n_obs() != policy.n_obs() || model.n_actions() != policy.n_actions() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} observations / {} actions, policy expects {} / {}",
                model.n_obs(),
                model.n_actions(),
                policy.n_obs(),
                policy.n_actions()
            )));
        }
        Ok(Self {
            n_states: model.n_states(),
            n_obs: model.n_obs(),
            n_internal: policy.n_internal(),
            n_actions: model.n_actions(),
        })
    }

    pub fn size(&self, level: ChainLevel) -> usize {
        let base = self.n_states * self.n_obs * self.n_internal;
        match level {
            ChainLevel::Xyz => base,
            ChainLevel::Xyzu => base * self.n_actions,
            ChainLevel::Xyzuz => base * self.n_actions * self.n_internal,
        }
    }

    #[inline]
    pub fn xyz(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.n_obs + y) * self.n_internal + z
    }

    #[inline]
    pub fn xyzu(&self, x: usize, y: usize, z: usize, u: usize) -> usize {
        self.xyz(x, y, z) * self.n_actions + u
    }

    #[inline]
    pub fn xyzuz(&self, x: usize, y: usize, z: usize, u: usize, zn: usize) -> usize {
        self.xyzu(x, y, z, u) * self.n_internal + zn
    }

    pub fn decode(&self, level: ChainLevel, mut i: usize) -> JointState {
        let mut z_next = None;
        let mut u = None;
        if level == ChainLevel::Xyzuz {
            z_next = Some(i % self.n_internal);
            i /= self.n_internal;
        }
        if level != ChainLevel::Xyz {
            u = Some(i % self.n_actions);
            i /= self.n_actions;
        }
        let z = i % self.n_internal;
        i /= self.n_internal;
        JointState {
            x: i / self.n_obs,
            y: i % self.n_obs,
            z,
            u,
            z_next,
        }
    }

    /// Index of the (y, z, u) cell, used by conditional means and features.
    #[inline]
    pub fn yzu(&self, y: usize, z: usize, u: usize) -> usize {
        (y * self.n_internal + z) * self.n_actions + u
    }

    #[inline]
    pub fn yzuz(&self, y: usize, z: usize, u: usize, zn: usize) -> usize {
        self.yzu(y, z, u) * self.n_internal + zn
    }
}

/// Row-stochastic sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut b = Builder::new(n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch("transition matrix must be square".into()));
            }
            b.scratch.copy_from_slice(row);
            b.touched = (0..n).collect();
            b.flush();
        }
        Ok(b.finish())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzero entries of row `i` as `(column, probability)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// `(P f)(i) = Σ_j P[i, j] f(j)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, p)| p * f[j]).sum()).collect()
    }

    /// `(π P)(j) = Σ_i π(i) P[i, j]`.
    pub fn apply_left(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &w) in pi.iter().enumerate() {
            if w != 0.0 {
                for (j, p) in self.row(i) {
                    out[j] += w * p;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, p) in self.row(i) {
                m[(i, j)] += p;
            }
        }
        m
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

struct Builder {
    scratch: Vec<f64>,
    touched: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Self {
            scratch: vec![0.0; n],
            touched: Vec::new(),
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, j: usize, p: f64) {
        if self.scratch[j] == 0.0 {
            self.touched.push(j);
        }
        self.scratch[j] += p;
    }

    fn flush(&mut self) {
        self.touched.sort_unstable();
        self.touched.dedup();
        for &j in &self.touched {
            let v = self.scratch[j];
            if v != 0.0 {
                self.cols.push(j);
                self.vals.push(v);
            }
            self.scratch[j] = 0.0;
        }
        self.touched.clear();
        self.row_ptr.push(self.cols.len());
    }

    fn finish(self) -> TransitionMatrix {
        TransitionMatrix {
            n: self.row_ptr.len() - 1,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

/// The chain over joint tuples together with its expected per-stage cost.
#[derive(Debug, Clone)]
pub struct JointChain {
    pub level: ChainLevel,
    pub dims: JointDims,
    pub p: TransitionMatrix,
    pub cost: Vec<f64>,
}

impl JointChain {
    pub fn n(&self) -> usize {
        self.p.n()
    }

    pub fn state(&self, i: usize) -> JointState {
        self.dims.decode(self.level, i)
    }
}

/// Builds the joint chain at `level`.
///
/// At the `Xyz` level, P[(x,y,z),(x̄,ȳ,z̄)] = Σ_u μ_u(z,y)·ζ_z̄(z,y,u)·p(x̄|x,u)·p(ȳ|x̄,u) and the
/// cost is Σ_u μ_u g(x,y,u). The finer levels carry the chosen `u` (and `z̄`) in the state
/// with cost g(x,y,u).
pub fn build_joint_chain(model: &PomdpModel, policy: &FscPolicy, level: ChainLevel) -> Result<JointChain> {
    let d = JointDims::new(model, policy)?;
    let n = d.size(level);
    let mut b = Builder::new(n);
    let mut cost = Vec::with_capacity(n);

    for i in 0..n {
        let s = d.decode(level, i);
        match level {
            ChainLevel::Xyz => {
                let mut g = 0.0;
                for u in 0..d.n_actions {
                    let m = policy.mu(s.z, s.y, u);
                    if m == 0.0 {
                        continue;
                    }
                    g += m * model.cost(s.x, s.y, u);
                    for zn in 0..d.n_internal {
                        let c = m * policy.zeta(s.z, s.y, u, zn);
                        if c == 0.0 {
                            continue;
                        }
                        emit(&mut b, model, &d, s.x, u, c, |xn, yn| d.xyz(xn, yn, zn));
                    }
                }
                cost.push(g);
            }
            ChainLevel::Xyzu => {
                let u = s.u.unwrap();
                cost.push(model.cost(s.x, s.y, u));
                for zn in 0..d.n_internal {
                    let c = policy.zeta(s.z, s.y, u, zn);
                    if c == 0.0 {
                        continue;
                    }
                    for xn in 0..d.n_states {
                        let t = model.transition(s.x, u, xn);
                        if t == 0.0 {
                            continue;
                        }
                        for yn in 0..d.n_obs {
                            let o = model.observation(u, xn, yn);
                            if o == 0.0 {
                                continue;
                            }
                            for un in 0..d.n_actions {
                                let m = policy.mu(zn, yn, un);
                                if m != 0.0 {
                                    b.add(d.xyzu(xn, yn, zn, un), c * t * o * m);
                                }
                            }
                        }
                    }
                }
            }
            ChainLevel::Xyzuz => {
                let u = s.u.unwrap();
                let zn = s.z_next.unwrap();
                cost.push(model.cost(s.x, s.y, u));
                for xn in 0..d.n_states {
                    let t = model.transition(s.x, u, xn);
                    if t == 0.0 {
                        continue;
                    }
                    for yn in 0..d.n_obs {
                        let o = model.observation(u, xn, yn);
                        if o == 0.0 {
                            continue;
                        }
                        for un in 0..d.n_actions {
                            let m = policy.mu(zn, yn, un);
                            if m == 0.0 {
                                continue;
                            }
                            for znn in 0..d.n_internal {
                                let c = policy.zeta(zn, yn, un, znn);
                                if c != 0.0 {
                                    b.add(d.xyzuz(xn, yn, zn, un, znn), t * o * m * c);
                                }
                            }
                        }
                    }
                }
            }
        }
        b.flush();
    }
    Ok(JointChain {
        level,
        dims: d,
        p: b.finish(),
        cost,
    })
}

/// Spreads `weight` over the next (x̄, ȳ) pairs reached from `x` under action `u`.
#[inline]
fn emit(
    b: &mut Builder,
    model: &PomdpModel,
    d: &JointDims,
    x: usize,
    u: usize,
    weight: f64,
    index: impl Fn(usize, usize) -> usize,
) {
    for xn in 0..d.n_states {
        let t = model.transition(x, u, xn);
        if t == 0.0 {
            continue;
        }
        for yn in 0..d.n_obs {
            let o = model.observation(u, xn, yn);
            if o != 0.0 {
                b.add(index(xn, yn), weight * t * o);
            }
        }
    }
}
