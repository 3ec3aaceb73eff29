//! Imputation of missing neighbor values during successive execution.
//!
//! In round `l` node `i` needs `x_j^{(l−1)}` from every in-neighbor `j`. When
//! the edge is down, `i` substitutes the prediction of its estimator for `j`,
//! evaluated on the feature vector
//! `u = [x̃_j^{(l−2)}, x_i^{(l−2)}, x̃_k^{(l−2)} for other neighbors k ascending]`,
//! where `x̃` is what `i` actually holds for that neighbor: the received value
//! or, if that was missed as well, the earlier estimate (0 before anything
//! arrived). For `l = 1` the own slot holds `x_i^{(0)}` and every neighbor
//! slot is cold. Received values are the supervision targets for one OGD
//! step per estimator and round; imputed values are never trained on.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::online::{NeighborEstimator, StepSchedule};
use super::rff::{median_bandwidth, ridge_closed_form, Kernel, RffModel};
use crate::filtering::{check_shifts, check_signal, RunTrace};
use crate::graph::Topology;
use crate::io::{read_json, read_matrix, write_json, write_matrix};
use crate::{rng, Error, Matrix, Result, Vector};

/// Distribution of the random input signals used for pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub mean: f64,
    pub std: f64,
}

impl Default for SignalModel {
    fn default() -> Self {
        SignalModel { mean: 1.0, std: 1.0 }
    }
}

impl SignalModel {
    /// I.i.d. `N(mean, std²)` entries.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vector> {
        if !(self.std >= 0.0) {
            return Err(Error::InvalidInput(format!("signal std must be ≥ 0, got {}", self.std)));
        }
        let dist = Normal::new(self.mean, self.std)
            .map_err(|e| Error::InvalidInput(format!("signal model: {e}")))?;
        let mut r = rng::rng(seed);
        Ok(Vector::from_fn(n, |_, _| dist.sample(&mut r)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Kernel family; its bandwidth is used as-is unless `median_heuristic`.
    pub kernel: Kernel,
    pub median_heuristic: bool,
    /// `D`.
    pub n_features: usize,
    pub lambda: f64,
    pub schedule: StepSchedule,
    /// Number of random signals `K` for offline pretraining.
    pub samples: usize,
    pub signal: SignalModel,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kernel: Kernel::Gaussian { sigma: 1.0 },
            median_heuristic: true,
            n_features: 100,
            lambda: 1e-4,
            schedule: StepSchedule::default_for(100),
            samples: 500,
            signal: SignalModel::default(),
            seed: 0,
        }
    }
}

/// What node `i` holds about round `l − 2` when it builds features for round `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeHistory {
    /// `x_i^{(l−2)}` (`x_i^{(0)}` in round 1).
    pub own: f64,
    /// Held value per in-neighbor, in ascending neighbor order.
    pub neighbors: Vec<f64>,
    /// Rounds of exchange completed so far.
    pub completed_rounds: usize,
}

/// Input of one estimator: missing neighbor first, own value second, the
/// remaining neighbors in ascending order. Length `|N_i| + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vector);

/// Assembles `u` for the neighbor at position `missing` of node `i`'s list.
/// Round `l` (1-based) needs two past iterates unless the estimators were
/// pretrained.
pub fn build_feature_vector(
    history: &NodeHistory,
    missing: usize,
    round: usize,
    pretrained: bool,
) -> Result<FeatureVector> {
    if round < 2 && !pretrained {
        return Err(Error::MissingHistory { iteration: round });
    }
    let nb = &history.neighbors;
    if missing >= nb.len() {
        return Err(Error::InvalidInput(format!(
            "neighbor position {missing} out of range for {} neighbors",
            nb.len()
        )));
    }
    let mut u = Vec::with_capacity(nb.len() + 1);
    u.push(nb[missing]);
    u.push(history.own);
    u.extend(
        nb.iter()
            .enumerate()
            .filter(|&(k, _)| k != missing)
            .map(|(_, v)| *v),
    );
    Ok(FeatureVector(Vector::from_vec(u)))
}

/// All estimators of a network: one RFF model per node, one regressor per
/// (node, in-neighbor) pair.
#[derive(Debug, Clone)]
pub struct EstimatorBank {
    pub topology: Topology,
    pub config: EstimatorConfig,
    pub models: Vec<Option<Arc<RffModel>>>,
    /// `estimators[i][k]` serves the `k`-th in-neighbor of node `i`.
    pub estimators: Vec<Vec<NeighborEstimator>>,
    pub pretrained: bool,
}

impl EstimatorBank {
    /// Fresh estimators with `β = 0`. Bandwidths come from the configured kernel.
    pub fn untrained(topology: &Topology, config: &EstimatorConfig) -> Result<Self> {
        let n = topology.n_nodes();
        let spectral = rng::substream(config.seed, "spectral");
        let mut models = Vec::with_capacity(n);
        let mut estimators = Vec::with_capacity(n);
        for i in 0..n {
            let nb = topology.in_neighbors(i);
            if nb.is_empty() {
                models.push(None);
                estimators.push(Vec::new());
                continue;
            }
            let model = Arc::new(RffModel::new(
                config.n_features,
                config.kernel,
                nb.len() + 1,
                rng::child(spectral, i as u64),
            )?);
            estimators.push(
                nb.iter()
                    .map(|&j| NeighborEstimator::new(i, j, model.clone(), config.lambda, config.schedule))
                    .collect(),
            );
            models.push(Some(model));
        }
        Ok(EstimatorBank {
            topology: topology.clone(),
            config: config.clone(),
            models,
            estimators,
            pretrained: false,
        })
    }

    pub fn estimator(&self, node: usize, neighbor: usize) -> Option<&NeighborEstimator> {
        self.estimators.get(node)?.iter().find(|e| e.target == neighbor)
    }

    pub fn n_estimators(&self) -> usize {
        self.estimators.iter().map(Vec::len).sum()
    }

    /// Zeroes every `β`.
    pub fn reset(&mut self) {
        for e in self.estimators.iter_mut().flatten() {
            e.beta.fill(0.0);
            e.last_received = None;
        }
    }

    /// Writes `rff_meta.json`, `W_<i>.mat` per node and `beta_<i>_<j>.mat`
    /// per pair (1-based).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = BankMeta {
            config: self.config.clone(),
            bandwidths: self
                .models
                .iter()
                .map(|m| m.as_ref().map(|m| m.kernel.bandwidth()))
                .collect(),
            pretrained: self.pretrained,
        };
        write_json(&dir.join("rff_meta.json"), &meta)?;
        for (i, m) in self.models.iter().enumerate() {
            if let Some(m) = m {
                write_matrix(dir.join(format!("W_{}.mat", i + 1)), &m.w)?;
            }
        }
        for e in self.estimators.iter().flatten() {
            write_matrix(
                dir.join(format!("beta_{}_{}.mat", e.owner + 1, e.target + 1)),
                &Matrix::from_column_slice(e.beta.len(), 1, e.beta.as_slice()),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, topology: &Topology) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: BankMeta = read_json(&dir.join("rff_meta.json"))?;
        let n = topology.n_nodes();
        if meta.bandwidths.len() != n {
            return Err(Error::dims("estimator bank nodes", n, meta.bandwidths.len()));
        }
        let cfg = meta.config;
        let mut models = Vec::with_capacity(n);
        let mut estimators = Vec::with_capacity(n);
        for i in 0..n {
            let nb = topology.in_neighbors(i);
            match (nb.is_empty(), meta.bandwidths[i]) {
                (true, _) => {
                    models.push(None);
                    estimators.push(Vec::new());
                }
                (false, Some(bw)) => {
                    let w = read_matrix(dir.join(format!("W_{}.mat", i + 1)))?;
                    if w.shape() != (nb.len() + 1, cfg.n_features) {
                        return Err(Error::dims(
                            "spectral sample file",
                            format!("{}x{}", nb.len() + 1, cfg.n_features),
                            format!("{}x{}", w.nrows(), w.ncols()),
                        ));
                    }
                    let model = Arc::new(RffModel {
                        w,
                        kernel: cfg.kernel.with_bandwidth(bw),
                        seed: cfg.seed,
                    });
                    let mut row = Vec::with_capacity(nb.len());
                    for &j in nb {
                        let b = read_matrix(dir.join(format!("beta_{}_{}.mat", i + 1, j + 1)))?;
                        if b.shape() != (2 * cfg.n_features, 1) {
                            return Err(Error::dims("coefficient file", 2 * cfg.n_features, b.nrows()));
                        }
                        let mut e = NeighborEstimator::new(i, j, model.clone(), cfg.lambda, cfg.schedule);
                        e.beta = Vector::from_column_slice(b.as_slice());
                        row.push(e);
                    }
                    models.push(Some(model));
                    estimators.push(row);
                }
                (false, None) => {
                    return Err(Error::InvalidInput(format!(
                        "estimator metadata lacks node {}",
                        i + 1
                    )))
                }
            }
        }
        Ok(EstimatorBank {
            topology: topology.clone(),
            config: cfg,
            models,
            estimators,
            pretrained: meta.pretrained,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BankMeta {
    config: EstimatorConfig,
    bandwidths: Vec<Option<f64>>,
    pretrained: bool,
}

/// Minimizes `(1/K) Σ (βᵀΔ(u_m) − y_m)² + λ‖β‖²` in closed form.
///
/// With `λ > 0` the primal system `(ΦᵀΦ + λK I) β = Φᵀy` is used when
/// `K ≥ 2D`, and the kernel form `β = Φᵀ(ΦΦᵀ + λK I)⁻¹ y` otherwise. With
/// `λ = 0` the minimum-norm least-squares solution is returned.
pub fn fit_ridge(model: &RffModel, inputs: &[Vector], targets: &[f64], lambda: f64) -> Result<Vector> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::dims("training set", inputs.len(), targets.len()));
    }
    let k = inputs.len();
    let two_d = 2 * model.n_features();
    let mut phi = Matrix::zeros(k, two_d);
    for (m, u) in inputs.iter().enumerate() {
        let f = model.features(u)?;
        phi.set_row(m, &f.transpose());
    }
    let y = Vector::from_column_slice(targets);
    if lambda > 0.0 {
        if k >= two_d {
            let phi_t = phi.transpose();
            let mut a = &phi_t * &phi;
            for d in 0..two_d {
                a[(d, d)] += lambda * k as f64;
            }
            let rhs = &phi_t * &y;
            a.cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or(Error::Singular("primal ridge fit"))
        } else {
            let gram = &phi * phi.transpose();
            let alpha = ridge_closed_form(&gram, lambda, k, &y)?;
            Ok(phi.tr_mul(&alpha))
        }
    } else if lambda == 0.0 {
        phi.svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|_| Error::Singular("least-squares fit"))
    } else {
        Err(Error::InvalidInput("ridge parameter must be ≥ 0".into()))
    }
}

/// Training pairs collected from clean executions.
struct PairData {
    inputs: Vec<Vector>,
    targets: Vec<f64>,
}

/// Clean execution with feature collection: calls `visit(i, k, u, y)` for
/// every node `i`, neighbor position `k` and round.
fn collect_clean(
    topology: &Topology,
    shifts: &[Matrix],
    x: &Vector,
    mut visit: impl FnMut(usize, usize, Vector, f64),
) {
    let n = topology.n_nodes();
    let mut histories: Vec<NodeHistory> = (0..n)
        .map(|i| NodeHistory {
            own: x[i],
            neighbors: vec![0.0; topology.in_neighbors(i).len()],
            completed_rounds: 0,
        })
        .collect();
    let mut prev = x.clone();
    for (l, s) in shifts.iter().enumerate() {
        let round = l + 1;
        for i in 0..n {
            let nb = topology.in_neighbors(i);
            for (k, &j) in nb.iter().enumerate() {
                let u = build_feature_vector(&histories[i], k, round, true)
                    .expect("pretraining features are always available");
                visit(i, k, u.0, prev[j]);
            }
        }
        let next = s * &prev;
        for i in 0..n {
            let h = &mut histories[i];
            h.own = prev[i];
            for (k, &j) in topology.in_neighbors(i).iter().enumerate() {
                h.neighbors[k] = prev[j];
            }
            h.completed_rounds = round;
        }
        prev = next;
    }
}

/// Offline training of every estimator on `K` clean executions with random
/// input signals drawn from `config.signal`.
pub fn offline_pretrain(topology: &Topology, shifts: &[Matrix], config: &EstimatorConfig) -> Result<EstimatorBank> {
    let n = topology.n_nodes();
    check_shifts(shifts, n)?;
    if config.samples == 0 {
        return Err(Error::InvalidInput("pretraining needs K ≥ 1 samples".into()));
    }
    let data_seed = rng::substream(config.seed, "data");
    let mut data: Vec<Vec<PairData>> = (0..n)
        .map(|i| {
            topology
                .in_neighbors(i)
                .iter()
                .map(|_| PairData {
                    inputs: Vec::new(),
                    targets: Vec::new(),
                })
                .collect()
        })
        .collect();
    for m in 0..config.samples {
        let x = config.signal.sample(n, rng::child(data_seed, m as u64))?;
        collect_clean(topology, shifts, &x, |i, k, u, y| {
            data[i][k].inputs.push(u);
            data[i][k].targets.push(y);
        });
    }

    let mut kernels = Vec::with_capacity(n);
    for row in &data {
        let kernel = match row.first() {
            Some(pd) if config.median_heuristic => config.kernel.with_bandwidth(median_bandwidth(&pd.inputs)),
            _ => config.kernel,
        };
        kernels.push(kernel);
    }
    let spectral = rng::substream(config.seed, "spectral");
    let models: Vec<Option<Arc<RffModel>>> = (0..n)
        .map(|i| {
            if topology.in_neighbors(i).is_empty() {
                Ok(None)
            } else {
                RffModel::new(
                    config.n_features,
                    kernels[i],
                    topology.in_neighbors(i).len() + 1,
                    rng::child(spectral, i as u64),
                )
                .map(|m| Some(Arc::new(m)))
            }
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..topology.in_neighbors(i).len()).map(move |k| (i, k)))
        .collect();
    let betas: Vec<Vector> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let model = models[i].as_ref().expect("node with neighbors has a model");
            fit_ridge(model, &data[i][k].inputs, &data[i][k].targets, config.lambda)
        })
        .collect::<Result<_>>()?;

    let mut estimators: Vec<Vec<NeighborEstimator>> = vec![Vec::new(); n];
    for (&(i, k), beta) in jobs.iter().zip(betas) {
        let model = models[i].clone().expect("model exists");
        let j = topology.in_neighbors(i)[k];
        let mut e = NeighborEstimator::new(i, j, model, config.lambda, config.schedule);
        e.beta = beta;
        estimators[i].push(e);
    }
    Ok(EstimatorBank {
        topology: topology.clone(),
        config: config.clone(),
        models,
        estimators,
        pretrained: true,
    })
}

/// How missing values are replaced.
#[derive(Debug)]
pub enum Imputer<'a> {
    /// Missing values count as zero.
    Zero,
    /// Random feature estimators; `online` enables OGD updates on received values.
    Rff { bank: &'a mut EstimatorBank, online: bool },
}

/// Result of an execution with missing values.
#[derive(Debug, Clone)]
pub struct EstimationTrace {
    pub trace: RunTrace,
    /// Per round, the `(dst, src)` edges whose value was imputed.
    pub imputed: Vec<Vec<(usize, usize)>>,
    /// Cross-edge messages actually delivered.
    pub messages_sent: u64,
    /// Messages of the full protocol, `L · |E|`.
    pub messages_full: u64,
}

impl EstimationTrace {
    pub fn savings(&self) -> f64 {
        if self.messages_full == 0 {
            0.0
        } else {
            1.0 - self.messages_sent as f64 / self.messages_full as f64
        }
    }
}

/// Draws the activation mask for one round: `mask[i][k]` is true when the
/// `k`-th in-neighbor of `i` delivers. Edges are visited in (dst, src) order.
fn draw_mask(topology: &Topology, r: &mut rng::Rng, prob: impl Fn(usize, usize) -> f64) -> Vec<Vec<bool>> {
    (0..topology.n_nodes())
        .map(|i| {
            topology
                .in_neighbors(i)
                .iter()
                .map(|&j| r.random::<f64>() < prob(i, j))
                .collect()
        })
        .collect()
}

/// Core loop shared by the fluctuation and sparsification modes.
fn execute(
    topology: &Topology,
    shifts: &[Matrix],
    x: &Vector,
    imputer: &mut Imputer<'_>,
    mut mask_for_round: impl FnMut(usize) -> Vec<Vec<bool>>,
) -> Result<EstimationTrace> {
    let n = topology.n_nodes();
    check_shifts(shifts, n)?;
    check_signal(x, n)?;
    if let Imputer::Rff { bank, .. } = imputer {
        if bank.topology != *topology {
            return Err(Error::InvalidInput(
                "estimator bank was built for a different topology".into(),
            ));
        }
    }
    let mut histories: Vec<NodeHistory> = (0..n)
        .map(|i| NodeHistory {
            own: x[i],
            neighbors: vec![0.0; topology.in_neighbors(i).len()],
            completed_rounds: 0,
        })
        .collect();
    let mut iterates = vec![x.clone()];
    let mut imputed = Vec::with_capacity(shifts.len());
    let mut sent = 0u64;

    for (l, s) in shifts.iter().enumerate() {
        let round = l + 1;
        let mask = mask_for_round(round);
        let prev = iterates.last().unwrap().clone();
        let mut next = Vector::zeros(n);
        let mut held: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut round_imputed = Vec::new();

        for i in 0..n {
            let nb = topology.in_neighbors(i);
            let mut values = vec![0.0; nb.len()];
            for (k, &j) in nb.iter().enumerate() {
                let delivered = mask[i][k];
                if delivered {
                    sent += 1;
                    values[k] = prev[j];
                } else {
                    round_imputed.push((i, j));
                }
                if let Imputer::Rff { bank, online } = imputer {
                    let pretrained = bank.pretrained;
                    let needs_features = !delivered || *online;
                    if !needs_features {
                        continue;
                    }
                    let u = match build_feature_vector(&histories[i], k, round, pretrained) {
                        Ok(u) => Some(u.0),
                        Err(Error::MissingHistory { .. }) => None,
                        Err(e) => return Err(e),
                    };
                    let est = &mut bank.estimators[i][k];
                    if delivered {
                        est.last_received = Some(prev[j]);
                        if let Some(u) = u {
                            let eta = est.schedule.step(round);
                            est.ogd_step(&u, prev[j], eta)?;
                        }
                    } else {
                        values[k] = match u {
                            Some(u) => est.predict(&u)?,
                            None => 0.0,
                        };
                    }
                }
            }
            let mut acc = s[(i, i)] * prev[i];
            for (k, &j) in nb.iter().enumerate() {
                acc += s[(i, j)] * values[k];
            }
            next[i] = acc;
            held.push(values);
        }

        for (i, values) in held.into_iter().enumerate() {
            let h = &mut histories[i];
            h.own = prev[i];
            h.neighbors = values;
            h.completed_rounds = round;
        }
        imputed.push(round_imputed);
        iterates.push(next);
    }

    Ok(EstimationTrace {
        trace: RunTrace {
            iterates,
            errors: None,
        },
        imputed,
        messages_sent: sent,
        messages_full: (shifts.len() * topology.n_edges()) as u64,
    })
}

/// Execution under random edge fluctuations with missing values imputed.
/// Round `l` draws its edges from stream `l` of `seed`, so runs with
/// different imputers see the same failures.
pub fn simulate_with_estimation(
    topology: &Topology,
    shifts: &[Matrix],
    p_active: &Matrix,
    x: &Vector,
    imputer: &mut Imputer<'_>,
    seed: u64,
) -> Result<EstimationTrace> {
    let n = topology.n_nodes();
    if p_active.shape() != (n, n) {
        return Err(Error::dims(
            "activation probabilities",
            format!("{n}x{n}"),
            format!("{}x{}", p_active.nrows(), p_active.ncols()),
        ));
    }
    execute(topology, shifts, x, imputer, |round| {
        let mut r = rng::stream(seed, round as u64);
        draw_mask(topology, &mut r, |i, j| p_active[(i, j)])
    })
}

/// Deliberate sparsification: each cross edge is skipped with probability
/// `drop_rate` per round; after `freeze_after` rounds (if set) no messages
/// are sent at all and every neighbor value is imputed.
pub fn sparsify_run(
    topology: &Topology,
    shifts: &[Matrix],
    drop_rate: f64,
    freeze_after: Option<usize>,
    x: &Vector,
    imputer: &mut Imputer<'_>,
    seed: u64,
) -> Result<EstimationTrace> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::InvalidInput(format!(
            "drop rate must lie in [0, 1), got {drop_rate}"
        )));
    }
    execute(topology, shifts, x, imputer, |round| {
        let mut r = rng::stream(seed, round as u64);
        let frozen = freeze_after.is_some_and(|h| round > h);
        let mask = draw_mask(topology, &mut r, |_, _| 1.0 - drop_rate);
        if frozen {
            mask.into_iter().map(|row| vec![false; row.len()]).collect()
        } else {
            mask
        }
    })
}
