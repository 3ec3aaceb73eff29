//! Experiment configuration: a flat TOML file with one section per module.
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use shiftseq::design::{InitScheme, StopOn, WeightScheme};
use shiftseq::estimator::{Kernel, StepSchedule};
use shiftseq::fluctuation::MeanTerm;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Design,
    Run,
    Fluctuate,
    Bound,
    Estimate,
    Sparsify,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentSection,
    pub graph: GraphSection,
    pub target: TargetSection,
    pub design: DesignSection,
    pub signal: SignalSection,
    pub fluctuation: FluctuationSection,
    pub estimator: EstimatorSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub task: Option<Task>,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            task: None,
            seed: 0,
            out: PathBuf::from("out"),
            workers: 0,
        }
    }
}

/// Either a graph file or Erdős–Rényi parameters. Generated graphs are
/// redrawn until connected.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub file: Option<PathBuf>,
    pub nodes: usize,
    pub p_edge: f64,
    pub directed: bool,
    pub max_attempts: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            file: None,
            nodes: 10,
            p_edge: 0.4,
            directed: false,
            max_attempts: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    #[default]
    Consensus,
    Identity,
    RandomProjection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub file: Option<PathBuf>,
    pub builtin: Builtin,
    /// Rank of the random projection.
    pub rank: usize,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            file: None,
            builtin: Builtin::Consensus,
            rank: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Uniform,
    #[default]
    Geometric,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    /// Load a saved shift directory instead of designing.
    pub shifts: Option<PathBuf>,
    pub rounds: usize,
    pub weights: WeightKind,
    pub ratio: f64,
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub init: InitScheme,
    pub ridge: f64,
    pub stop_on: StopOn,
}

impl Default for DesignSection {
    fn default() -> Self {
        DesignSection {
            shifts: None,
            rounds: 6,
            weights: WeightKind::Geometric,
            ratio: 2.0,
            epsilon: 1e-6,
            max_sweeps: 200,
            init: InitScheme::ScaledRandom,
            ridge: 0.0,
            stop_on: StopOn::Unweighted,
        }
    }
}

impl DesignSection {
    pub fn scheme(&self) -> WeightScheme {
        match self.weights {
            WeightKind::Uniform => WeightScheme::Uniform,
            WeightKind::Geometric => WeightScheme::Geometric { ratio: self.ratio },
        }
    }
}

/// Input signal: a vector file, or i.i.d. normal entries.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub file: Option<PathBuf>,
    pub mean: f64,
    pub std: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        SignalSection {
            file: None,
            mean: 1.0,
            std: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctuationSection {
    /// One CSV row per value, unless `probabilities` is given.
    pub p_active: Vec<f64>,
    pub probabilities: Option<PathBuf>,
    pub trials: u64,
    pub rho: Option<f64>,
    pub mean_term: MeanTerm,
}

impl Default for FluctuationSection {
    fn default() -> Self {
        FluctuationSection {
            p_active: vec![0.8, 0.9, 0.95],
            probabilities: None,
            trials: 10_000,
            rho: None,
            mean_term: MeanTerm::OuterProduct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    Gaussian,
    Laplacian,
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    InvSqrt,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub kernel: KernelKind,
    pub bandwidth: f64,
    pub median_heuristic: bool,
    pub features: usize,
    pub lambda: f64,
    /// Defaults to `0.1/√D`.
    pub eta: Option<f64>,
    pub schedule: ScheduleKind,
    pub samples: usize,
    /// Fit `β` offline before the run; otherwise estimators start at `β = 0`.
    pub pretrain: bool,
    pub online: bool,
    /// Number of independent scenarios (one CSV row each).
    pub seeds: u64,
    pub p_active: f64,
    pub drop_rate: f64,
    pub freeze_after: Option<usize>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            kernel: KernelKind::Gaussian,
            bandwidth: 1.0,
            median_heuristic: true,
            features: 100,
            lambda: 1e-4,
            eta: None,
            schedule: ScheduleKind::Constant,
            samples: 500,
            pretrain: true,
            online: true,
            seeds: 50,
            p_active: 0.8,
            drop_rate: 0.3,
            freeze_after: None,
        }
    }
}

impl EstimatorSection {
    pub fn kernel(&self) -> Kernel {
        match self.kernel {
            KernelKind::Gaussian => Kernel::Gaussian { sigma: self.bandwidth },
            KernelKind::Laplacian => Kernel::Laplacian { scale: self.bandwidth },
            KernelKind::Cauchy => Kernel::Cauchy { gamma: self.bandwidth },
        }
    }

    pub fn schedule(&self) -> StepSchedule {
        let eta = self.eta.unwrap_or(0.1 / (self.features.max(1) as f64).sqrt());
        match self.schedule {
            ScheduleKind::Constant => StepSchedule::Constant { eta },
            ScheduleKind::InvSqrt => StepSchedule::InvSqrt { eta0: eta },
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.graph.file);
        fix(&mut self.target.file);
        fix(&mut self.design.shifts);
        fix(&mut self.signal.file);
        fix(&mut self.fluctuation.probabilities);
        if self.experiment.out.is_relative() {
            self.experiment.out = base.join(&self.experiment.out);
        }
    }
}
