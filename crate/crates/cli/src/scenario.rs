//! Builds the graph, target, shift sequence and input signal of one
//! experiment from the configuration and a seed.

use shiftseq::design::{bcd_design, DesignConfig, ShiftSequence};
use shiftseq::estimator::{EstimatorConfig, SignalModel};
use shiftseq::graph::Topology;
use shiftseq::io::{read_matrix, read_vector};
use shiftseq::{rng, Matrix, Vector};

use crate::config::{Builtin, Config};
use crate::error::CliError;

pub struct Scenario {
    pub topology: Topology,
    pub target: Matrix,
    pub sequence: ShiftSequence,
}

pub fn topology(cfg: &Config, seed: u64) -> Result<Topology, CliError> {
    if let Some(path) = &cfg.graph.file {
        return Ok(Topology::read(path)?);
    }
    let g = &cfg.graph;
    let base = rng::substream(seed, "graph");
    for attempt in 0..g.max_attempts.max(1) {
        let t = Topology::random_er(g.nodes, g.p_edge, g.directed, rng::child(base, attempt as u64))?;
        if t.is_connected() {
            return Ok(t);
        }
    }
    Err(CliError::Input(format!(
        "no connected graph with {} nodes and edge probability {} after {} attempts",
        g.nodes, g.p_edge, g.max_attempts
    )))
}

/// `Q Qᵀ` for the orthonormal basis `Q` of a Gaussian `n × rank` matrix.
fn random_projection(n: usize, rank: usize, seed: u64) -> Result<Matrix, CliError> {
    if rank == 0 || rank > n {
        return Err(CliError::Input(format!(
            "projection rank must lie in 1..={n}, got {rank}"
        )));
    }
    let g = SignalModel { mean: 0.0, std: 1.0 }.sample(n * rank, seed)?;
    let q = Matrix::from_column_slice(n, rank, g.as_slice()).qr().q();
    Ok(&q * q.transpose())
}

pub fn target(cfg: &Config, n: usize, seed: u64) -> Result<Matrix, CliError> {
    if let Some(path) = &cfg.target.file {
        let t = read_matrix(path)?;
        if t.shape() != (n, n) {
            return Err(CliError::Input(format!(
                "{}: target is {}x{} but the graph has {n} nodes",
                path.display(),
                t.nrows(),
                t.ncols()
            )));
        }
        return Ok(t);
    }
    match cfg.target.builtin {
        Builtin::Consensus => Ok(Matrix::from_element(n, n, 1.0 / n as f64)),
        Builtin::Identity => Ok(Matrix::identity(n, n)),
        Builtin::RandomProjection => random_projection(n, cfg.target.rank, rng::substream(seed, "target")),
    }
}

pub fn design_config(cfg: &Config, seed: u64) -> Result<DesignConfig, CliError> {
    let d = &cfg.design;
    let mut dc = DesignConfig::new(d.rounds)?.with_scheme(d.scheme())?;
    dc.epsilon = d.epsilon;
    dc.max_sweeps = d.max_sweeps;
    dc.init = d.init;
    dc.ridge = d.ridge;
    dc.stop_on = d.stop_on;
    dc.seed = rng::substream(seed, "design-init");
    Ok(dc)
}

/// Loads the configured shift directory or designs a new sequence.
pub fn build(cfg: &Config, seed: u64) -> Result<Scenario, CliError> {
    if let Some(dir) = &cfg.design.shifts {
        let sequence = ShiftSequence::load(dir)?;
        let topology = sequence.topology.clone();
        let target = target(cfg, topology.n_nodes(), seed)?;
        return Ok(Scenario {
            topology,
            target,
            sequence,
        });
    }
    let topology = topology(cfg, seed)?;
    let target = target(cfg, topology.n_nodes(), seed)?;
    let sequence = bcd_design(&target, &topology, &design_config(cfg, seed)?)?;
    Ok(Scenario {
        topology,
        target,
        sequence,
    })
}

pub fn signal_model(cfg: &Config) -> SignalModel {
    SignalModel {
        mean: cfg.signal.mean,
        std: cfg.signal.std,
    }
}

pub fn signal(cfg: &Config, n: usize, seed: u64) -> Result<Vector, CliError> {
    if let Some(path) = &cfg.signal.file {
        let x = read_vector(path)?;
        if x.len() != n {
            return Err(CliError::Input(format!(
                "{}: signal has {} entries but the graph has {n} nodes",
                path.display(),
                x.len()
            )));
        }
        return Ok(x);
    }
    Ok(signal_model(cfg).sample(n, rng::substream(seed, "data"))?)
}

pub fn estimator_config(cfg: &Config, seed: u64) -> EstimatorConfig {
    let e = &cfg.estimator;
    EstimatorConfig {
        kernel: e.kernel(),
        median_heuristic: e.median_heuristic,
        n_features: e.features,
        lambda: e.lambda,
        schedule: e.schedule(),
        samples: e.samples,
        signal: signal_model(cfg),
        seed: rng::substream(seed, "estimator"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_idempotent_with_given_rank() {
        let p = random_projection(6, 2, 3).unwrap();
        assert!((&p * &p - &p).norm() < 1e-12);
        assert!((p.trace() - 2.0).abs() < 1e-12);
        assert!((&p - p.transpose()).norm() < 1e-12);
        assert!(random_projection(3, 4, 0).is_err());
    }

    #[test]
    fn generated_graph_is_connected() {
        let cfg = Config::default();
        let t = topology(&cfg, 5).unwrap();
        assert!(t.is_connected());
        assert_eq!(t.n_nodes(), 10);
    }

    #[test]
    fn consensus_target() {
        let t = target(&Config::default(), 4, 0).unwrap();
        assert_eq!(t, Matrix::from_element(4, 4, 0.25));
    }
}
