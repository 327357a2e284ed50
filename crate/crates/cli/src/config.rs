//! Run configuration: file schema, flag overrides, and conversion to core types.
//!
//! Precedence is flags > file > defaults. The config hash is the SHA-256 of
//! the canonical JSON form of the merged configuration, minus `[io]`.

use std::path::{Path, PathBuf};

use mfbd::measure::{DistN, DEFAULT_TAIL_TOL};
use mfbd::rates::{Interaction, RateModel, Tail};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub init: LawConfig,
    /// Second initial law for `couple`.
    pub init_y: LawConfig,
    pub experiment: ExperimentConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelConfig::default(),
            init: LawConfig::Uniform { lo: 0, hi: 4 },
            init_y: LawConfig::Delta { k: 0 },
            experiment: ExperimentConfig::default(),
            io: IoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `b_k = p·k^a`, `d_k = q·k^a`.
    Power,
    /// `b_k = p`, `d_k = q·k`.
    MmInf,
    /// `b_k = p·k + c`, `d_k = q·k`.
    Linear,
    /// `birth`/`death` tables extended by `birth_tail`/`death_tail`.
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TailConfig {
    Constant,
    Linear { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionConfig {
    None,
    /// `q⁺ = s·(m−k)₊`, `q⁻ = s·(k−m)₊`.
    Attractive {
        strength: f64,
    },
    /// `q⁺ = s·m`, `q⁻ = 0`.
    MeanBirth {
        strength: f64,
    },
    Quadratic {
        a: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub birth: Option<Vec<f64>>,
    #[serde(default)]
    pub death: Option<Vec<f64>>,
    #[serde(default)]
    pub birth_tail: Option<TailConfig>,
    #[serde(default)]
    pub death_tail: Option<TailConfig>,
    #[serde(default = "no_interaction")]
    pub interaction: InteractionConfig,
    #[serde(default)]
    pub declared_lambda: Option<f64>,
    #[serde(default)]
    pub declared_alpha: Option<f64>,
}

fn no_interaction() -> InteractionConfig {
    InteractionConfig::None
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Power,
            p: Some(1.0),
            q: Some(5.0),
            a: Some(1.0),
            c: None,
            birth: None,
            death: None,
            birth_tail: None,
            death_tail: None,
            interaction: InteractionConfig::Attractive { strength: 1.0 },
            declared_lambda: None,
            declared_alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Delta {
        k: usize,
    },
    Uniform {
        lo: usize,
        hi: usize,
    },
    Poisson {
        mean: f64,
    },
    /// `k,mass` file; relative paths resolve against the config file.
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n: usize,
    pub n_list: Vec<usize>,
    pub t_max: f64,
    pub grid_steps: usize,
    pub n_replicas: usize,
    pub dt: f64,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub scan_max: u64,
    /// Box side for the exact audits.
    pub k_max: u64,
    pub n_states: usize,
    pub max_coord: u64,
    pub burn_in: f64,
    pub n_samples: usize,
    pub spacing: f64,
    pub n_chains: usize,
    pub tol: f64,
    pub max_events: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 10,
            n_list: vec![8, 16, 32, 64],
            t_max: 3.0,
            grid_steps: 30,
            n_replicas: 1000,
            dt: 0.01,
            epsilons: vec![0.1, 0.2],
            delta: 0.5,
            scan_max: 200,
            k_max: 4,
            n_states: 10_000,
            max_coord: 100,
            burn_in: 5.0,
            n_samples: 50,
            spacing: 1.0,
            n_chains: 16,
            tol: 1e-12,
            max_events: 50_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Vec<f64> {
        let steps = self.grid_steps.max(1);
        (0..=steps).map(|j| self.t_max * j as f64 / steps as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Parses TOML, or JSON when the extension is `.json`. Parser messages carry
/// line and column.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for law in [&mut cfg.init, &mut cfg.init_y] {
        if let LawConfig::Csv { path } = law {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
    Ok(cfg)
}

impl RunConfig {
    /// Output settings are not part of the hash.
    pub fn hash(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        doc.as_object_mut().expect("config is a table").remove("io");
        let canonical = serde_json::to_vec(&doc).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        let bad = |m: &str| Err(CliError::Config(m.to_owned()));
        if e.n == 0 || e.n_list.contains(&0) {
            return bad("particle counts must be at least 1");
        }
        if !(e.t_max >= 0.0) || !e.t_max.is_finite() {
            return bad("t_max must be finite and nonnegative");
        }
        if e.n_replicas == 0 {
            return bad("n_replicas must be at least 1");
        }
        if !(e.dt > 0.0) || !(e.delta > 0.0) || !(e.tol > 0.0) {
            return bad("dt, delta and tol must be positive");
        }
        if e.epsilons.iter().any(|x| !(*x > 0.0)) {
            return bad("epsilons must be positive");
        }
        self.model()?
            .validate(e.scan_max.max(1), &mfbd::rates::default_mean_grid(e.scan_max as f64))
            .map_err(|err| CliError::Config(err.to_string()))?;
        self.law(&self.init)?;
        Ok(())
    }

    pub fn model(&self) -> Result<RateModel, CliError> {
        let m = &self.model;
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| CliError::Config(format!("model.{key} is required for family {:?}", m.family)))
        };
        let base = match m.family {
            Family::Power => RateModel::power(need(m.p, "p")?, need(m.q, "q")?, need(m.a, "a")?),
            Family::MmInf => RateModel::mm_inf(need(m.p, "p")?, need(m.q, "q")?),
            Family::Linear => RateModel::linear(need(m.p, "p")?, need(m.q, "q")?, m.c.unwrap_or(0.0)),
            Family::Tabulated => {
                let table = |v: &Option<Vec<f64>>, key: &str| {
                    v.clone().ok_or_else(|| CliError::Config(format!("model.{key} is required for family tabulated")))
                };
                let tail = |t: &Option<TailConfig>| match t {
                    None | Some(TailConfig::Constant) => Tail::Constant,
                    Some(TailConfig::Linear { slope }) => Tail::Linear { slope: *slope },
                };
                RateModel::tabulated(
                    table(&m.birth, "birth")?,
                    tail(&m.birth_tail),
                    table(&m.death, "death")?,
                    tail(&m.death_tail),
                )
                .map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        let interaction = match &m.interaction {
            InteractionConfig::None => Interaction::None,
            InteractionConfig::Attractive { strength } => Interaction::attractive(*strength),
            InteractionConfig::MeanBirth { strength } => Interaction::mean_birth(*strength),
            InteractionConfig::Quadratic { a } => Interaction::QuadraticPairwise { a: *a },
        };
        Ok(base.with_interaction(interaction).with_declared(m.declared_lambda, m.declared_alpha))
    }

    pub fn law(&self, law: &LawConfig) -> Result<DistN, CliError> {
        let r = match law {
            LawConfig::Delta { k } => Ok(DistN::delta(*k)),
            LawConfig::Uniform { lo, hi } => DistN::uniform(*lo, *hi),
            LawConfig::Poisson { mean } => DistN::poisson(*mean, DEFAULT_TAIL_TOL),
            LawConfig::Csv { path } => {
                let f = std::fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                DistN::from_csv(f, 1e-9)
            }
        };
        r.map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
seed = 9
[model]
family = "linear"
p = 1.0
q = 6.0
c = 1.0
interaction = { kind = "attractive", strength = 1.0 }
[init]
law = "poisson"
mean = 0.5
[experiment]
n_list = [8, 16]
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.family, Family::Linear);
        assert_eq!(cfg.model.c, Some(1.0));
        assert_eq!(cfg.experiment.n_list, vec![8, 16]);
        assert_eq!(cfg.experiment.n, 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = toml::from_str::<RunConfig>("seed = 1\nbogus = 2\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
