//! Seeded sample paths of the joint process.
//!
//! Generator: `ChaCha8Rng` from `rand_chacha`, seeded with `seed_from_u64(seed)`. Batch
//! drivers use one stream per trajectory via [`rng_for`]. Every categorical draw consumes
//! exactly one `f64` uniform, in the order: u_t, z_{t+1}, x_{t+1}, y_{t+1}.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::PomdpModel;
use crate::policy::{categorical, FscPolicy};

/// Generator for trajectory `stream` of an experiment seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One period of the joint process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub u: usize,
    pub g: f64,
}

/// What a controller-side estimator is allowed to see of one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedStep {
    pub y: usize,
    pub z: usize,
    pub u: usize,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// (x_T, y_T, z_T), the state reached after the last recorded step.
    pub tail: (usize, usize, usize),
    pub seed: u64,
}

/// The x-free projection of a trajectory. Estimators take this type only.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenView {
    steps: Vec<ObservedStep>,
    tail: (usize, usize),
}

impl HiddenView {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    #[inline]
    pub fn get(&self, t: usize) -> ObservedStep {
        self.steps[t]
    }

    pub fn steps(&self) -> &[ObservedStep] {
        &self.steps
    }

    /// z_{t+1}; for the last step this is the internal state after it.
    #[inline]
    pub fn z_next(&self, t: usize) -> usize {
        if t + 1 < self.steps.len() {
            self.steps[t + 1].z
        } else {
            self.tail.1
        }
    }

    /// (y_T, z_T)
    pub fn tail(&self) -> (usize, usize) {
        self.tail
    }
}

/// Where the hidden state starts.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialState {
    /// The model's initial distribution, uniform if it has none.
    #[default]
    Model,
    State(usize),
    Dist(Vec<f64>),
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden_view(&self) -> HiddenView {
        HiddenView {
            steps: self
                .steps
                .iter()
                .map(|s| ObservedStep {
                    y: s.y,
                    z: s.z,
                    u: s.u,
                    g: s.g,
                })
                .collect(),
            tail: (self.tail.1, self.tail.2),
        }
    }

    /// Mean of the recorded costs.
    pub fn mean_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.g).sum::<f64>() / self.steps.len() as f64
    }

    /// CSV with columns t,x,y,z,u,g and a leading comment carrying the seed and the tail.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# seed={} tail={},{},{}",
            self.seed, self.tail.0, self.tail.1, self.tail.2
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "z", "u", "g"])?;
        for (t, s) in self.steps.iter().enumerate() {
            w.write_record([
                t.to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.z.to_string(),
                s.u.to_string(),
                format!("{:?}", s.g),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let bad = |m: &str| Error::Syntax {
            line: 1,
            message: m.to_string(),
        };
        let rest = first
            .trim()
            .strip_prefix("# seed=")
            .ok_or_else(|| bad("missing seed comment"))?;
        let (seed, tail) = rest.split_once(" tail=").ok_or_else(|| bad("missing tail"))?;
        let seed: u64 = seed.parse().map_err(|_| bad("bad seed"))?;
        let tail: Vec<usize> = tail
            .split(',')
            .map(|v| v.parse().map_err(|_| bad("bad tail")))
            .collect::<Result<_>>()?;
        if tail.len() != 3 {
            return Err(bad("tail needs three indices"));
        }
        let mut r = csv::Reader::from_reader(input);
        let mut steps = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Syntax {
                    line: rec.position().map_or(0, |p| p.line() as usize + 1),
                    message: "short row".into(),
                })
            };
            let idx = |i: usize| -> Result<usize> {
                field(i)?.parse().map_err(|_| Error::Syntax {
                    line: rec.position().map_or(0, |p| p.line() as usize + 1),
                    message: "bad index".into(),
                })
            };
            steps.push(Step {
                x: idx(1)?,
                y: idx(2)?,
                z: idx(3)?,
                u: idx(4)?,
                g: field(5)?.parse().map_err(|_| Error::Syntax {
                    line: rec.position().map_or(0, |p| p.line() as usize + 1),
                    message: "bad cost".into(),
                })?,
            });
        }
        Ok(Self {
            steps,
            tail: (tail[0], tail[1], tail[2]),
            seed,
        })
    }
}

/// Simulates `len` periods with a fresh generator seeded by `seed`.
pub fn simulate(
    model: &PomdpModel,
    policy: &FscPolicy,
    len: usize,
    seed: u64,
    init: &InitialState,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = simulate_with_rng(model, policy, len, init, &mut rng)?;
    t.seed = seed;
    Ok(t)
}

/// Simulates with a caller-owned generator. The returned `seed` field is 0.
///
/// x_0 is drawn from the initial distribution, y_0 from p(· | x_0, u = 0) and z_0 = 0.
pub fn simulate_with_rng<R: Rng + ?Sized>(
    model: &PomdpModel,
    policy: &FscPolicy,
    len: usize,
    init: &InitialState,
    rng: &mut R,
) -> Result<Trajectory> {
    if model.n_obs() != policy.n_obs() || model.n_actions() != policy.n_actions() {
        return Err(Error::DimensionMismatch("policy does not match model".into()));
    }
    let ns = model.n_states();
    let mut x = match init {
        InitialState::State(s) if *s < ns => *s,
        InitialState::State(s) => return Err(Error::DimensionMismatch(format!("initial state {s}"))),
        InitialState::Dist(d) if d.len() == ns => categorical(rng.random(), ns, |i| d[i]),
        InitialState::Dist(_) => return Err(Error::DimensionMismatch("initial distribution length".into())),
        InitialState::Model => match model.initial_dist() {
            Some(d) => categorical(rng.random(), ns, |i| d[i]),
            None => rng.random_range(0..ns),
        },
    };
    let no = model.n_obs();
    let mut y = {
        let row = model.observation_row(0, x);
        categorical(rng.random(), no, |i| row[i])
    };
    let mut z = 0;
    let mut steps = Vec::with_capacity(len);
    for _ in 0..len {
        let u = policy.sample_action(z, y, rng);
        steps.push(Step {
            x,
            y,
            z,
            u,
            g: model.cost(x, y, u),
        });
        let zn = policy.sample_internal(z, y, u, rng);
        let row = model.transition_row(x, u);
        let xn = categorical(rng.random(), ns, |i| row[i]);
        let row = model.observation_row(u, xn);
        let yn = categorical(rng.random(), no, |i| row[i]);
        (x, y, z) = (xn, yn, zn);
    }
    Ok(Trajectory {
        steps,
        tail: (x, y, z),
        seed: 0,
    })
}
