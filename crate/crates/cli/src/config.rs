//! Experiment configuration: one TOML file plus flag overrides.

use std::path::{Path, PathBuf};

use fscgrad::actor::{AlignmentMode, CriticKind, EstimatorConfig, EstimatorKind, TrainConfig};
use fscgrad::posmdp::{EtaTracking, PosmdpModel, Sojourn};
use fscgrad::toy::{load_model, load_policy, toy2_controller};
use fscgrad::{make_direct_fsc, FscPolicy, PomdpModel, TieMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `toy2`, or a path to a `.pomdp` or `.json` model.
    pub model: String,
    pub seed: u64,
    /// Output directory. Not part of the config hash.
    pub out: PathBuf,
    pub policy: PolicySpec,
    pub estimator: EstimatorSpec,
    pub train: TrainSpec,
    pub posmdp: PosmdpSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "toy2".into(),
            seed: 0,
            out: PathBuf::from("out"),
            policy: PolicySpec::default(),
            estimator: EstimatorSpec::default(),
            train: TrainSpec::default(),
            posmdp: PosmdpSpec::default(),
        }
    }
}

/// Starting controller. With no checkpoint, a tied-memory controller with one internal
/// state per observation is built; `n_internal = 1` gives a reactive one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    /// `toy2-near-min`, `toy2-best` or a JSON checkpoint path.
    pub checkpoint: Option<String>,
    pub tie_mode: Option<TieMode>,
    pub n_internal: Option<usize>,
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    /// Used by `estimate` and `train`; `compare` and `posmdp` run all three.
    pub kind: EstimatorKind,
    pub beta: f64,
    pub lambda: f64,
    pub critic: CriticKind,
    pub centering: bool,
    pub trajectory_len: usize,
    /// Number of trajectories; trajectory i is simulated with seed `seed + i`.
    pub seeds: usize,
    pub alignment: AlignmentMode,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        let e = EstimatorConfig::default();
        Self {
            kind: e.kind,
            beta: e.beta,
            lambda: e.lambda,
            critic: e.critic,
            centering: e.centering,
            trajectory_len: 20_000,
            seeds: 5,
            alignment: AlignmentMode::Plain,
        }
    }
}

impl EstimatorSpec {
    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            kind: self.kind,
            beta: self.beta,
            lambda: self.lambda,
            critic: self.critic,
            centering: self.centering,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub iterations: usize,
    pub step: f64,
    /// Iteration index to start from when resuming from a checkpoint.
    pub first_iter: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            step: t.step,
            first_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosmdpSpec {
    /// Applied to every (x, y, u).
    pub sojourn: Sojourn,
    pub cost_scales_with_time: bool,
    pub tracking: EtaTracking,
}

impl Default for PosmdpSpec {
    fn default() -> Self {
        Self {
            sojourn: Sojourn::Exponential { mean: 1.0 },
            cost_scales_with_time: false,
            tracking: EtaTracking::RatioOfSums,
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A validated configuration with relative paths resolved against the config file.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: ExperimentConfig,
    pub hash: String,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Resolved, CliError> {
        let (mut cfg, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let cfg: ExperimentConfig =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ExperimentConfig::default(), PathBuf::new()),
        };
        // flag paths are relative to the working directory
        let mut base_model = base.clone();
        if let Some(m) = &over.model {
            cfg.model = m.clone();
            base_model = PathBuf::new();
        }
        if let Some(s) = over.seed {
            cfg.seed = s;
        }
        if let Some(o) = &over.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        let hash = cfg.hash();
        if cfg.model != "toy2" {
            cfg.model = resolve(&base_model, &cfg.model);
        }
        if let Some(c) = &cfg.policy.checkpoint {
            if !c.starts_with("toy2-") {
                cfg.policy.checkpoint = Some(resolve(&base, c));
            }
        }
        for f in [Some(&cfg.model), cfg.policy.checkpoint.as_ref()].into_iter().flatten() {
            if !f.starts_with("toy2") && !Path::new(f).exists() {
                return Err(CliError::Config(format!("{f} does not exist")));
            }
        }
        Ok(Resolved { cfg, hash })
    }

    fn validate(&self) -> Result<(), CliError> {
        let e = &self.estimator;
        e.estimator()
            .validate()
            .map_err(|err| CliError::Config(err.to_string()))?;
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if e.seeds == 0 {
            return bad("estimator.seeds must be at least 1");
        }
        if e.trajectory_len < 2 {
            return bad("estimator.trajectory_len must be at least 2");
        }
        if !(self.train.step.is_finite() && self.train.step > 0.0) {
            return bad("train.step must be positive");
        }
        if let Some(0) = self.policy.n_internal {
            return bad("policy.n_internal must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form with the output directory removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let text = toml::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn resolve(base: &Path, p: &str) -> String {
    let path = Path::new(p);
    if path.is_absolute() {
        p.to_string()
    } else {
        base.join(path).to_string_lossy().into_owned()
    }
}

impl Resolved {
    pub fn model(&self) -> Result<PomdpModel, CliError> {
        Ok(load_model(&self.cfg.model)?)
    }

    pub fn policy(&self, model: &PomdpModel) -> Result<FscPolicy, CliError> {
        let spec = &self.cfg.policy;
        let mut p = match &spec.checkpoint {
            Some(c) => load_policy(c).map_err(|e| CliError::Config(format!("checkpoint {c}: {e}")))?,
            None if self.cfg.model == "toy2" && spec.tie_mode.is_none() && spec.n_internal.is_none() => {
                toy2_controller()
            }
            None => {
                let nz = spec.n_internal.unwrap_or(model.n_obs());
                let tie = spec.tie_mode.unwrap_or(if nz == model.n_obs() && nz > 1 {
                    TieMode::TiedMemory
                } else {
                    TieMode::Free
                });
                make_direct_fsc(model.n_obs(), model.n_actions(), nz, tie)
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        if p.n_obs() != model.n_obs() || p.n_actions() != model.n_actions() {
            return Err(CliError::Config("controller does not match the model".into()));
        }
        if let Some(t) = &spec.theta {
            p.set_theta(t).map_err(|e| CliError::Config(e.to_string()))?;
            if !p.is_feasible(1e-12) {
                return Err(CliError::Config("policy.theta is infeasible".into()));
            }
        }
        Ok(p)
    }

    pub fn posmdp(&self, model: PomdpModel) -> Result<PosmdpModel, CliError> {
        let mut m =
            PosmdpModel::uniform(model, self.cfg.posmdp.sojourn).map_err(|e| CliError::Config(e.to_string()))?;
        m.cost_scales_with_time = self.cfg.posmdp.cost_scales_with_time;
        Ok(m)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            estimator: self.cfg.estimator.estimator(),
            iterations: self.cfg.train.iterations,
            trajectory_len: self.cfg.estimator.trajectory_len,
            step: self.cfg.train.step,
            seed: self.cfg.seed,
            first_iter: self.cfg.train.first_iter,
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.cfg.out.clone();
        std::fs::create_dir_all(&dir)?;
        log::info!("writing to {} (config {})", dir.display(), &self.hash[..12]);
        Ok(dir)
    }
}
