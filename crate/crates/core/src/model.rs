//! Finite POMDP models.
//!
//! Conventions used throughout the crate:
//! - `transition(x, u, x_next)` is p(x̄ | x, u);
//! - `observation(u, x_next, y)` is p(y | x̄, u), i.e. the observation is emitted by the
//!   *destination* state under the action that led there;
//! - `cost(x, y, u)` is the expected per-stage cost. Rewards are negated at load time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose sum is off by more than this are rejected.
pub const INPUT_ROW_TOLERANCE: f64 = 1e-9;
/// Rows within `INPUT_ROW_TOLERANCE` but off by more than this are renormalized.
pub const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PomdpModel {
    n_states: usize,
    n_obs: usize,
    n_actions: usize,
    transition: Vec<f64>,
    observation: Vec<f64>,
    cost: Vec<f64>,
    initial_dist: Option<Vec<f64>>,
    pub(crate) discount: Option<f64>,
    pub(crate) names: Names,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Names {
    pub states: Option<Vec<String>>,
    pub actions: Option<Vec<String>>,
    pub observations: Option<Vec<String>>,
}

/// Nested-array form of a model, used for the JSON interchange format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelTables {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    /// `transition[u][x][x_next]`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `observation[u][x_next][y]`
    pub observation: Vec<Vec<Vec<f64>>>,
    /// `cost[x][y][u]`
    pub cost: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_dist: Option<Vec<f64>>,
}

impl PomdpModel {
    /// Builds a model from flat row-major tables, validating and (within tolerance)
    /// renormalizing every probability row.
    pub fn from_flat(
        n_states: usize,
        n_obs: usize,
        n_actions: usize,
        mut transition: Vec<f64>,
        mut observation: Vec<f64>,
        cost: Vec<f64>,
        initial_dist: Option<Vec<f64>>,
    ) -> Result<Self> {
        if n_states == 0 || n_obs == 0 || n_actions == 0 {
            return Err(Error::DimensionMismatch(
                "state, observation and action counts must be positive".into(),
            ));
        }
        check_len("transition", &transition, n_actions * n_states * n_states)?;
        check_len("observation", &observation, n_actions * n_states * n_obs)?;
        check_len("cost", &cost, n_states * n_obs * n_actions)?;

        for u in 0..n_actions {
            for x in 0..n_states {
                let start = (u * n_states + x) * n_states;
                normalize_row("transition", &mut transition[start..start + n_states], &[u, x])?;
                let start = (u * n_states + x) * n_obs;
                normalize_row("observation", &mut observation[start..start + n_obs], &[u, x])?;
            }
        }
        for (i, &c) in cost.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::InvalidEntry {
                    table: "cost",
                    index: vec![i],
                    value: c,
                    what: "finite cost",
                });
            }
        }
        let initial_dist = match initial_dist {
            Some(mut d) => {
                check_len("initial_dist", &d, n_states)?;
                normalize_row("initial_dist", &mut d, &[])?;
                Some(d)
            }
            None => None,
        };
        Ok(Self {
            n_states,
            n_obs,
            n_actions,
            transition,
            observation,
            cost,
            initial_dist,
            discount: None,
            names: Names::default(),
        })
    }

    pub fn from_tables(t: &ModelTables) -> Result<Self> {
        let (s, o, a) = (t.n_states, t.n_obs, t.n_actions);
        let transition = flatten3("transition", &t.transition, [a, s, s])?;
        let observation = flatten3("observation", &t.observation, [a, s, o])?;
        let cost = flatten3("cost", &t.cost, [s, o, a])?;
        Self::from_flat(s, o, a, transition, observation, cost, t.initial_dist.clone())
    }

    pub fn to_tables(&self) -> ModelTables {
        let (s, o, a) = (self.n_states, self.n_obs, self.n_actions);
        ModelTables {
            n_states: s,
            n_obs: o,
            n_actions: a,
            transition: nest3(&self.transition, [a, s, s]),
            observation: nest3(&self.observation, [a, s, o]),
            cost: nest3(&self.cost, [s, o, a]),
            initial_dist: self.initial_dist.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tables: ModelTables = serde_json::from_str(text)?;
        Self::from_tables(&tables)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_tables())?)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn transition(&self, x: usize, u: usize, x_next: usize) -> f64 {
        self.transition[(u * self.n_states + x) * self.n_states + x_next]
    }

    #[inline]
    pub fn transition_row(&self, x: usize, u: usize) -> &[f64] {
        let start = (u * self.n_states + x) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn observation(&self, u: usize, x_next: usize, y: usize) -> f64 {
        self.observation[(u * self.n_states + x_next) * self.n_obs + y]
    }

    #[inline]
    pub fn observation_row(&self, u: usize, x_next: usize) -> &[f64] {
        let start = (u * self.n_states + x_next) * self.n_obs;
        &self.observation[start..start + self.n_obs]
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize, u: usize) -> f64 {
        self.cost[(x * self.n_obs + y) * self.n_actions + u]
    }

    pub fn initial_dist(&self) -> Option<&[f64]> {
        self.initial_dist.as_deref()
    }

    /// Discount declared in a `.pomdp` file. Average-cost analysis ignores it.
    pub fn declared_discount(&self) -> Option<f64> {
        self.discount
    }

    /// Copy of the model with every cost replaced by `f(x, y, u, old)`.
    pub fn map_costs(&self, mut f: impl FnMut(usize, usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for x in 0..self.n_states {
            for y in 0..self.n_obs {
                for u in 0..self.n_actions {
                    let i = (x * self.n_obs + y) * self.n_actions + u;
                    out.cost[i] = f(x, y, u, self.cost[i]);
                }
            }
        }
        out
    }

    /// True if `cost(x, y, u)` does not depend on `y`.
    pub fn cost_ignores_observation(&self) -> bool {
        (0..self.n_states)
            .all(|x| (1..self.n_obs).all(|y| (0..self.n_actions).all(|u| self.cost(x, y, u) == self.cost(x, 0, u))))
    }
}

fn check_len(table: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{table} has {} entries, expected {expected}",
            v.len()
        )));
    }
    Ok(())
}

/// Validates a probability row; renormalizes rows that are off by less than
/// `INPUT_ROW_TOLERANCE`.
pub(crate) fn normalize_row(table: &'static str, row: &mut [f64], index: &[usize]) -> Result<()> {
    for (j, &p) in row.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            let mut idx = index.to_vec();
            idx.push(j);
            return Err(Error::InvalidEntry {
                table,
                index: idx,
                value: p,
                what: "probability",
            });
        }
    }
    let sum: f64 = row.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > INPUT_ROW_TOLERANCE {
        return Err(Error::NonStochasticRow {
            table,
            row: index.to_vec(),
            sum,
        });
    }
    if dev > ROW_TOLERANCE {
        log::warn!("{table} row {index:?} sums to {sum}; renormalizing");
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

fn flatten3(table: &'static str, v: &[Vec<Vec<f64>>], dims: [usize; 3]) -> Result<Vec<f64>> {
    let bad = || Error::DimensionMismatch(format!("{table} must have shape {dims:?}"));
    if v.len() != dims[0] {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(dims.iter().product());
    for a in v {
        if a.len() != dims[1] {
            return Err(bad());
        }
        for b in a {
            if b.len() != dims[2] {
                return Err(bad());
            }
            out.extend_from_slice(b);
        }
    }
    Ok(out)
}

fn nest3(v: &[f64], dims: [usize; 3]) -> Vec<Vec<Vec<f64>>> {
    v.chunks(dims[1] * dims[2])
        .map(|a| a.chunks(dims[2]).map(|b| b.to_vec()).collect())
        .collect()
}
