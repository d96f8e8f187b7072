//! Linear features over observable cells.
//!
//! A cell is `(y, z, u)` for the action critic and `(y, z, u, z̄)` for the
//! internal-transition critic; the hidden state never enters. The minimum basis uses the
//! score coordinates themselves as columns.

use nalgebra::DMatrix;

use crate::chain::JointState;
use crate::error::{Error, Result};
use crate::policy::FscPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureLevel {
    /// (y, u), reactive controllers only.
    Yu,
    /// (y, z, u)
    Yzu,
    /// (y, z, u, z̄)
    Yzuz,
}

impl FeatureLevel {
    /// Number of indices in a cell tuple.
    pub fn arity(self) -> usize {
        match self {
            FeatureLevel::Yu => 2,
            FeatureLevel::Yzu => 3,
            FeatureLevel::Yzuz => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    level: FeatureLevel,
    n_obs: usize,
    n_internal: usize,
    n_actions: usize,
    k: usize,
    /// θ coordinate each column was taken from, for minimum-basis maps.
    columns: Vec<Option<usize>>,
    table: Vec<f64>,
}

impl FeatureMap {
    /// Features φ(cell)_i = ∂ log μ / ∂θ_i (cells `Yu`/`Yzu`) or ∂ log ζ / ∂θ_i (`Yzuz`),
    /// with identically zero columns dropped.
    pub fn minimum_basis(policy: &FscPolicy, level: FeatureLevel) -> Result<Self> {
        if level == FeatureLevel::Yu && !policy.is_reactive() {
            return Err(Error::InvalidParameter(
                "(y, u) features need a reactive controller".into(),
            ));
        }
        let (no, nz, na) = (policy.n_obs(), policy.n_internal(), policy.n_actions());
        let n_cells = cell_count(level, no, nz, na);
        let k_full = policy.dim();
        let mut full = vec![0.0; n_cells * k_full];
        for y in 0..no {
            for z in 0..nz {
                for u in 0..na {
                    match level {
                        FeatureLevel::Yu | FeatureLevel::Yzu => {
                            let c = (y * nz + z) * na + u;
                            policy.add_score_mu(z, y, u, 1.0, &mut full[c * k_full..(c + 1) * k_full]);
                        }
                        FeatureLevel::Yzuz => {
                            for zn in 0..nz {
                                let c = ((y * nz + z) * na + u) * nz + zn;
                                policy.add_score_zeta(z, y, u, zn, 1.0, &mut full[c * k_full..(c + 1) * k_full]);
                            }
                        }
                    }
                }
            }
        }
        let keep: Vec<usize> = (0..k_full)
            .filter(|&i| (0..n_cells).any(|c| full[c * k_full + i] != 0.0))
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyFeatureMap);
        }
        let k = keep.len();
        let mut table = vec![0.0; n_cells * k];
        for c in 0..n_cells {
            for (j, &i) in keep.iter().enumerate() {
                table[c * k + j] = full[c * k_full + i];
            }
        }
        Ok(Self {
            level,
            n_obs: no,
            n_internal: nz,
            n_actions: na,
            k,
            columns: keep.into_iter().map(Some).collect(),
            table,
        })
    }

    /// Arbitrary features given as a row-major `cells × k` table.
    pub fn from_table(
        level: FeatureLevel,
        n_obs: usize,
        n_internal: usize,
        n_actions: usize,
        k: usize,
        table: Vec<f64>,
    ) -> Result<Self> {
        if level == FeatureLevel::Yu && n_internal != 1 {
            return Err(Error::InvalidParameter(
                "(y, u) features need one internal state".into(),
            ));
        }
        let n_cells = cell_count(level, n_obs, n_internal, n_actions);
        if k == 0 || table.len() != n_cells * k {
            return Err(Error::DimensionMismatch(format!(
                "feature table needs {n_cells} × {k} entries, got {}",
                table.len()
            )));
        }
        Ok(Self {
            level,
            n_obs,
            n_internal,
            n_actions,
            k,
            columns: vec![None; k],
            table,
        })
    }

    pub fn level(&self) -> FeatureLevel {
        self.level
    }

    /// Number of columns k_f.
    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn n_cells(&self) -> usize {
        self.table.len() / self.k
    }

    /// θ coordinate behind column `j`, if the map is a minimum basis.
    pub fn theta_index(&self, j: usize) -> Option<usize> {
        self.columns[j]
    }

    #[inline]
    pub fn cell(&self, y: usize, z: usize, u: usize, z_next: usize) -> usize {
        let c = (y * self.n_internal + z) * self.n_actions + u;
        match self.level {
            FeatureLevel::Yzuz => c * self.n_internal + z_next,
            _ => c,
        }
    }

    /// Cell of a joint-chain tuple. The hidden `x` is dropped.
    pub fn cell_of(&self, s: &JointState) -> usize {
        self.cell(s.y, s.z, s.u.unwrap_or(0), s.z_next.unwrap_or(0))
    }

    #[inline]
    pub fn phi(&self, cell: usize) -> &[f64] {
        &self.table[cell * self.k..(cell + 1) * self.k]
    }

    /// Features of an observable tuple `(y, u)`, `(y, z, u)` or `(y, z, u, z̄)`.
    ///
    /// Tuples of the wrong arity, such as ones carrying a hidden state, are rejected.
    pub fn phi_tuple(&self, tuple: &[usize]) -> Result<&[f64]> {
        if tuple.len() != self.level.arity() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} features take {}-tuples, got {}",
                self.level,
                self.level.arity(),
                tuple.len()
            )));
        }
        let (y, z, u, zn) = match *tuple {
            [y, u] => (y, 0, u, 0),
            [y, z, u] => (y, z, u, 0),
            [y, z, u, zn] => (y, z, u, zn),
            _ => unreachable!(),
        };
        if y >= self.n_obs || z >= self.n_internal || u >= self.n_actions || zn >= self.n_internal {
            return Err(Error::DimensionMismatch(format!("tuple {tuple:?} out of range")));
        }
        Ok(self.phi(self.cell(y, z, u, zn)))
    }

    #[inline]
    pub fn value(&self, cell: usize, r: &[f64]) -> f64 {
        self.phi(cell).iter().zip(r).map(|(a, b)| a * b).sum()
    }

    /// `D^{1/2}Φ` restricted to cells with positive mass.
    fn weighted_matrix(&self, mass: &[f64]) -> DMatrix<f64> {
        let support: Vec<usize> = (0..self.n_cells()).filter(|&c| mass[c] > 0.0).collect();
        DMatrix::from_fn(support.len(), self.k, |i, j| {
            mass[support[i]].sqrt() * self.phi(support[i])[j]
        })
    }

    /// Smallest singular value of the π-weighted feature matrix over the support.
    pub fn min_singular_value(&self, mass: &[f64]) -> f64 {
        let m = self.weighted_matrix(mass);
        if m.nrows() < self.k {
            return 0.0;
        }
        m.singular_values().min()
    }

    /// Numerical rank of the π-weighted feature matrix.
    pub fn rank(&self, mass: &[f64], tol: f64) -> usize {
        self.weighted_matrix(mass).rank(tol)
    }

    /// π-norm of the residual of projecting the constant function onto the span.
    /// Zero means the constants lie in the feature space.
    pub fn constant_residual(&self, mass: &[f64]) -> Result<f64> {
        let ones = vec![1.0; self.n_cells()];
        let r = weighted_projection(self, mass, &ones)?;
        Ok((0..self.n_cells())
            .filter(|&c| mass[c] > 0.0)
            .map(|c| mass[c] * (1.0 - self.value(c, &r)).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

fn cell_count(level: FeatureLevel, no: usize, nz: usize, na: usize) -> usize {
    match level {
        FeatureLevel::Yu | FeatureLevel::Yzu => no * nz * na,
        FeatureLevel::Yzuz => no * nz * na * nz,
    }
}

/// Coefficients of the `mass`-weighted least-squares fit of `values` by the features.
/// Cells with zero mass (or undefined values) are ignored.
pub fn weighted_projection(features: &FeatureMap, mass: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let k = features.dim();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = nalgebra::DVector::<f64>::zeros(k);
    for c in 0..features.n_cells() {
        if mass[c] <= 0.0 || !values[c].is_finite() {
            continue;
        }
        let phi = features.phi(c);
        for i in 0..k {
            b[i] += mass[c] * phi[i] * values[c];
            for j in 0..k {
                a[(i, j)] += mass[c] * phi[i] * phi[j];
            }
        }
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("feature Gram matrix".into()))?;
    Ok(sol.iter().copied().collect())
}

/// π-weighted squared distance between two coefficient vectors' value functions.
pub fn weighted_sq_distance(features: &FeatureMap, mass: &[f64], r1: &[f64], r2: &[f64]) -> f64 {
    (0..features.n_cells())
        .filter(|&c| mass[c] > 0.0)
        .map(|c| mass[c] * (features.value(c, r1) - features.value(c, r2)).powi(2))
        .sum()
}
