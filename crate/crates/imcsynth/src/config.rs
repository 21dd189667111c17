//! Run configuration shared by the command-line front end.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth_continuous::{ContinuousConfig, GridConfig};
use crate::synth_finite::{FiniteConfig, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Finite,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub system: Option<PathBuf>,
    /// Automaton of the specification.
    pub dra: Option<PathBuf>,
    /// Automaton of the negated specification, used when minimizing.
    pub dra_complement: Option<PathBuf>,
    pub objective: Objective,
    pub pipeline: Pipeline,
    pub eps_thr: f64,
    /// Defaults to the pipeline's own value when unset.
    pub score_frac: Option<f64>,
    pub max_iters: usize,
    pub eps_conv: Option<f64>,
    pub grid: GridConfig,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub horizon: usize,
    pub runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: None,
            dra: None,
            dra_complement: None,
            objective: Objective::Maximize,
            pipeline: Pipeline::Finite,
            eps_thr: 0.3,
            score_frac: None,
            max_iters: 6,
            eps_conv: None,
            grid: GridConfig::default(),
            out: None,
            seed: 0,
            horizon: 100,
            runs: 10_000,
        }
    }
}

impl RunConfig {
    /// Reads a run file; relative paths inside it resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.system,
            &mut cfg.dra,
            &mut cfg.dra_complement,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps_thr) {
            return Err(Error::Config(format!(
                "eps_thr {} outside [0, 1]",
                self.eps_thr
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("iteration cap must be at least 1".into()));
        }
        if self.horizon < 1 || self.runs < 1 {
            return Err(Error::Config("horizon and runs must be positive".into()));
        }
        self.finite().validate()?;
        self.continuous().validate()
    }

    /// Automaton the synthesis maximizes over.
    pub fn automaton_path(&self) -> Option<&Path> {
        match self.objective {
            Objective::Minimize => self.dra_complement.as_deref().or(self.dra.as_deref()),
            Objective::Maximize => self.dra.as_deref(),
        }
    }

    pub fn finite(&self) -> FiniteConfig {
        let d = FiniteConfig::default();
        FiniteConfig {
            eps_thr: self.eps_thr,
            score_frac: self.score_frac.unwrap_or(d.score_frac),
            max_iters: self.max_iters,
            eps_conv: self.eps_conv.unwrap_or(d.eps_conv),
            objective: self.objective,
            ..d
        }
    }

    pub fn continuous(&self) -> ContinuousConfig {
        let d = ContinuousConfig::default();
        ContinuousConfig {
            eps_thr: self.eps_thr,
            score_frac: self.score_frac.unwrap_or(d.score_frac),
            max_iters: self.max_iters,
            eps_conv: self.eps_conv.unwrap_or(d.eps_conv),
            objective: self.objective,
            grid: self.grid.clone(),
            ..d
        }
    }
}
