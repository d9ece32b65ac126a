use std::path::{Path, PathBuf};

use multiea::metrics::{CandidatePool, EvalOptions};
use multiea::training::TrainConfig;
use multiea::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub infer: bool,
    /// First-order weight; the rest is split evenly across two-hop paths.
    pub gamma: f64,
    pub pool: Pool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 10, 20],
            infer: true,
            gamma: 0.2,
            pool: Pool::Test,
        }
    }
}

impl EvalSection {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.ks.is_empty() {
            out.push("eval.ks must not be empty".into());
        }
        if self.ks.contains(&0) {
            out.push("eval.ks entries must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            out.push(format!(
                "eval.gamma must lie in [0, 1] so the enhancement weights sum to 1, got {}",
                self.gamma
            ));
        }
        out
    }

    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.ks.clone(),
            gamma: self.infer.then_some(self.gamma),
            pool: match self.pool {
                Pool::Test => CandidatePool::TestLabels,
                Pool::All => CandidatePool::AllEntities,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Every problem across all sections.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = self
            .train
            .problems()
            .into_iter()
            .map(|p| format!("train.{p}"))
            .collect();
        problems.extend(self.eval.problems());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}
