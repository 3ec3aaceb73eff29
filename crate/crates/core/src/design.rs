//! Weighted successive-shift design by block coordinate descent.
//!
//! The cost is `Σ_l ω_l ‖T − S_l⋯S_1‖_F²` with every `S_i` restricted to the
//! topology's support. Fixing all shifts except `S_j` leaves a linear least
//! squares problem in the `E` supported entries of `S_j`; its normal matrix
//! is assembled entry by entry from two `N × N` Gram matrices, so the
//! `N² × N²` Kronecker product never exists in memory.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::fluctuation::spectral_norm;
use crate::graph::{SupportBasis, Topology};
use crate::io::{read_json, read_matrix, write_json, write_matrix};
use crate::{rng, Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum WeightScheme {
    Uniform,
    Geometric { ratio: f64 },
}

/// Nondecreasing round weights summing to one.
pub fn default_weights(rounds: usize, scheme: WeightScheme) -> Result<Vec<f64>> {
    if rounds == 0 {
        return Err(Error::InvalidInput("number of rounds must be positive".into()));
    }
    let raw: Vec<f64> = match scheme {
        WeightScheme::Uniform => vec![1.0; rounds],
        WeightScheme::Geometric { ratio } => {
            if !(ratio > 1.0) || !ratio.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "geometric weight ratio must be > 1, got {ratio}"
                )));
            }
            (1..=rounds).map(|l| ratio.powi(l as i32)).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform(−1, 1) on the support, rescaled to unit spectral norm.
    ScaledRandom,
    /// Identity when self-loops are allowed, otherwise in-neighbor averaging.
    IdentityLike,
}

/// Which cost drives the relative-change stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopOn {
    /// `Σ_l ‖T − S_l⋯S_1‖_F²` with equal weights.
    Unweighted,
    /// The weighted cost the blocks minimize.
    Weighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    rounds: usize,
    weights: Vec<f64>,
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub init: InitScheme,
    pub seed: u64,
    pub ridge: f64,
    pub stop_on: StopOn,
}

impl DesignConfig {
    /// Defaults: geometric weights with ratio 2, ε = 1e-6, 200 sweeps.
    pub fn new(rounds: usize) -> Result<Self> {
        let weights = default_weights(rounds, WeightScheme::Geometric { ratio: 2.0 })?;
        Ok(DesignConfig {
            rounds,
            weights,
            epsilon: 1e-6,
            max_sweeps: 200,
            init: InitScheme::ScaledRandom,
            seed: 0,
            ridge: 0.0,
            stop_on: StopOn::Unweighted,
        })
    }

    /// Replaces the weights. They must be nonnegative and nondecreasing with
    /// a positive sum; they are normalized to sum to one.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.rounds {
            return Err(Error::dims("design weights", self.rounds, weights.len()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        if weights.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidInput("weights must be nondecreasing".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights must not all be zero".into()));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(self)
    }

    pub fn with_scheme(self, scheme: WeightScheme) -> Result<Self> {
        let w = default_weights(self.rounds, scheme)?;
        self.with_weights(w)
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Designed shifts `S_1..S_L` plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct ShiftSequence {
    pub shifts: Vec<Matrix>,
    pub topology: Topology,
    pub weights: Vec<f64>,
    /// Weighted cost after each sweep.
    pub objective_history: Vec<f64>,
    /// `‖T − S_l⋯S_1‖_F` for `l = 1..L`.
    pub per_round_error: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub epsilon: f64,
    pub seed: u64,
    pub init: InitScheme,
    pub stop_on: StopOn,
}

impl ShiftSequence {
    pub fn rounds(&self) -> usize {
        self.shifts.len()
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::NAN)
    }

    /// `S_L⋯S_1`.
    pub fn product(&self) -> Matrix {
        let n = self.topology.n_nodes();
        self.shifts
            .iter()
            .fold(Matrix::identity(n, n), |acc, s| s * acc)
    }

    /// Writes `meta.json`, `graph.txt` and `S_1.mat … S_L.mat` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = SequenceMeta {
            rounds: self.rounds(),
            weights: self.weights.clone(),
            epsilon: self.epsilon,
            seed: self.seed,
            init: self.init,
            stop_on: self.stop_on,
            sweeps: self.sweeps,
            converged: self.converged,
            objective_history: self.objective_history.clone(),
            per_round_error: self.per_round_error.clone(),
        };
        write_json(&dir.join("meta.json"), &meta)?;
        self.topology.write(dir.join("graph.txt"))?;
        for (i, s) in self.shifts.iter().enumerate() {
            write_matrix(dir.join(format!("S_{}.mat", i + 1)), s)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SequenceMeta = read_json(&dir.join("meta.json"))?;
        let topology = Topology::read(dir.join("graph.txt"))?;
        let n = topology.n_nodes();
        let mut shifts = Vec::with_capacity(meta.rounds);
        for i in 1..=meta.rounds {
            let path = dir.join(format!("S_{i}.mat"));
            let s = read_matrix(&path)?;
            if s.shape() != (n, n) {
                return Err(Error::dims(
                    "shift matrix file",
                    format!("{n}x{n}"),
                    format!("{}x{}", s.nrows(), s.ncols()),
                ));
            }
            if !topology.respects_support(&s) {
                return Err(Error::InvalidInput(format!(
                    "{} has entries outside the graph support",
                    path.display()
                )));
            }
            shifts.push(s);
        }
        Ok(ShiftSequence {
            shifts,
            topology,
            weights: meta.weights,
            objective_history: meta.objective_history,
            per_round_error: meta.per_round_error,
            sweeps: meta.sweeps,
            converged: meta.converged,
            epsilon: meta.epsilon,
            seed: meta.seed,
            init: meta.init,
            stop_on: meta.stop_on,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceMeta {
    rounds: usize,
    weights: Vec<f64>,
    epsilon: f64,
    seed: u64,
    init: InitScheme,
    stop_on: StopOn,
    sweeps: usize,
    converged: bool,
    objective_history: Vec<f64>,
    per_round_error: Vec<f64>,
}

fn check_shapes(target: &Matrix, shifts: &[Matrix]) -> Result<usize> {
    let n = target.nrows();
    if target.ncols() != n {
        return Err(Error::dims(
            "target",
            "square matrix",
            format!("{}x{}", n, target.ncols()),
        ));
    }
    for s in shifts {
        if s.shape() != (n, n) {
            return Err(Error::dims(
                "shift matrix",
                format!("{n}x{n}"),
                format!("{}x{}", s.nrows(), s.ncols()),
            ));
        }
    }
    Ok(n)
}

/// Running products `S_1`, `S_2S_1`, …, `S_L⋯S_1`.
pub fn partial_products(shifts: &[Matrix]) -> Vec<Matrix> {
    let mut out: Vec<Matrix> = Vec::with_capacity(shifts.len());
    for s in shifts {
        let next = match out.last() {
            Some(prev) => s * prev,
            None => s.clone(),
        };
        out.push(next);
    }
    out
}

/// `Σ_l ω_l ‖T − S_l⋯S_1‖_F²`.
pub fn objective(target: &Matrix, shifts: &[Matrix], weights: &[f64]) -> Result<f64> {
    check_shapes(target, shifts)?;
    if weights.len() != shifts.len() {
        return Err(Error::dims("objective weights", shifts.len(), weights.len()));
    }
    Ok(partial_products(shifts)
        .iter()
        .zip(weights)
        .map(|(p, w)| w * (target - p).norm_squared())
        .sum())
}

/// Equal-weight cost `Σ_l ‖T − S_l⋯S_1‖_F²`.
pub fn unweighted_cost(target: &Matrix, shifts: &[Matrix]) -> Result<f64> {
    objective(target, shifts, &vec![1.0; shifts.len()])
}

/// `‖T − S_l⋯S_1‖_F` for every round.
pub fn per_round_error(target: &Matrix, shifts: &[Matrix]) -> Vec<f64> {
    partial_products(shifts)
        .iter()
        .map(|p| (target - p).norm())
        .collect()
}

/// Normal equations of one block subproblem.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub gram: Matrix,
    pub rhs: Vec<f64>,
}

impl BlockSystem {
    /// Assembles the normal equations for block `j` (0-based).
    ///
    /// With `A = S_{j−1}⋯S_1` and `B_l = S_l⋯S_{j+1}`, coefficient `k` of
    /// pair `(n, n′)` contributes `B_l[:, n] A[n′, :]` to round `l`, so
    /// `G[k, k′] = Σ_l ω_l (B_lᵀB_l)[n, m] (AAᵀ)[n′, m′]` and
    /// `b[k] = Σ_l ω_l (B_lᵀ T Aᵀ)[n, n′]`.
    pub fn assemble(
        block: usize,
        shifts: &[Matrix],
        target: &Matrix,
        weights: &[f64],
        basis: &SupportBasis,
    ) -> Result<Self> {
        let n = check_shapes(target, shifts)?;
        let rounds = shifts.len();
        if block >= rounds {
            return Err(Error::InvalidInput(format!(
                "block index {} out of range 1..={rounds}",
                block + 1
            )));
        }
        if weights.len() != rounds {
            return Err(Error::dims("block weights", rounds, weights.len()));
        }
        if basis.n_nodes() != n {
            return Err(Error::dims("support basis", n, basis.n_nodes()));
        }

        let left = shifts[..block]
            .iter()
            .fold(Matrix::identity(n, n), |acc, s| s * acc);
        let aat = &left * left.transpose();
        let t_at = target * left.transpose();

        let mut btb = Matrix::zeros(n, n);
        let mut bt_t_at = Matrix::zeros(n, n);
        let mut after = Matrix::identity(n, n);
        for l in block..rounds {
            if l > block {
                after = &shifts[l] * &after;
            }
            let w = weights[l];
            if w == 0.0 {
                continue;
            }
            let bt = after.transpose();
            btb += w * (&bt * &after);
            bt_t_at += w * (&bt * &t_at);
        }

        let pairs = basis.pairs();
        let e = pairs.len();
        let gram = Matrix::from_fn(e, e, |a, b| {
            let (na, ma) = pairs[a];
            let (nb, mb) = pairs[b];
            btb[(na, nb)] * aat[(ma, mb)]
        });
        let rhs = pairs.iter().map(|&(r, c)| bt_t_at[(r, c)]).collect();
        Ok(BlockSystem { gram, rhs })
    }

    /// Solves `(G + ridge·I) s = b` by Cholesky on the Jacobi-scaled system.
    /// Fails with [`Error::Singular`] when the system is numerically rank
    /// deficient.
    pub fn solve(&self, ridge: f64) -> Result<Vec<f64>> {
        let e = self.rhs.len();
        if e == 0 {
            return Ok(Vec::new());
        }
        let diag: Vec<f64> = (0..e).map(|i| self.gram[(i, i)] + ridge).collect();
        let scale = diag.iter().copied().fold(0.0f64, f64::max);
        if !(scale > 0.0) || diag.iter().any(|&d| !(d > 1e-300 * scale)) {
            return Err(Error::Singular("block subproblem"));
        }
        let inv_sqrt: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
        let g = Matrix::from_fn(e, e, |i, j| {
            let v = if i == j { diag[i] } else { self.gram[(i, j)] };
            v * inv_sqrt[i] * inv_sqrt[j]
        });
        let chol = g.cholesky().ok_or(Error::Singular("block subproblem"))?;
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d * d)
            .fold(f64::INFINITY, f64::min);
        if min_pivot < 1e-13 {
            return Err(Error::Singular("block subproblem"));
        }
        let b = nalgebra::DVector::from_fn(e, |i, _| self.rhs[i] * inv_sqrt[i]);
        let s = chol.solve(&b);
        let out: Vec<f64> = s.iter().zip(&inv_sqrt).map(|(v, d)| v * d).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("block subproblem solution".into()));
        }
        Ok(out)
    }

    /// Ridge used after a singular solve: `1e-10 · tr(G) / E`.
    pub fn fallback_ridge(&self) -> f64 {
        let e = self.rhs.len().max(1);
        1e-10 * self.gram.trace() / e as f64
    }
}

/// Minimizer over the supported entries of block `j` (0-based) of
/// `Σ_{l≥j} ω_l ‖T − S_l⋯S_{j+1} S_j S_{j−1}⋯S_1‖_F² + ridge·‖s‖²`.
pub fn solve_block(
    block: usize,
    shifts: &[Matrix],
    target: &Matrix,
    weights: &[f64],
    basis: &SupportBasis,
    ridge: f64,
) -> Result<Vec<f64>> {
    BlockSystem::assemble(block, shifts, target, weights, basis)?.solve(ridge)
}

fn initial_shift(topology: &Topology, basis: &SupportBasis, init: InitScheme, r: &mut rng::Rng) -> Matrix {
    let n = topology.n_nodes();
    match init {
        InitScheme::ScaledRandom => {
            let coeffs: Vec<f64> = (0..basis.e_count())
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            let m = basis.to_matrix(&coeffs);
            let norm = match spectral_norm(&m) {
                Ok(v) => v,
                Err(Error::NonConvergence { estimate }) => estimate,
                Err(_) => 0.0,
            };
            if norm > 0.0 {
                m / norm
            } else {
                m
            }
        }
        InitScheme::IdentityLike => {
            if topology.allow_self_loops() {
                Matrix::identity(n, n)
            } else {
                let mut m = Matrix::zeros(n, n);
                for row in 0..n {
                    let nb = topology.in_neighbors(row);
                    for &col in nb {
                        m[(row, col)] = 1.0 / nb.len() as f64;
                    }
                }
                m
            }
        }
    }
}

/// Block coordinate descent over `S_1..S_L`.
///
/// `S_1` starts at zero and is solved first; `S_2..S_L` are initialized per
/// `config.init` from the seed. Each sweep solves blocks `1..L` in order.
/// Iteration stops once `|f_new − f_old| / |f_old| < ε` for the cost picked
/// by `config.stop_on`, or after `max_sweeps`.
pub fn bcd_design(target: &Matrix, topology: &Topology, config: &DesignConfig) -> Result<ShiftSequence> {
    let n = topology.n_nodes();
    if target.shape() != (n, n) {
        return Err(Error::dims(
            "target",
            format!("{n}x{n}"),
            format!("{}x{}", target.nrows(), target.ncols()),
        ));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target matrix".into()));
    }
    if !(config.epsilon > 0.0) || config.max_sweeps == 0 || config.ridge < 0.0 {
        return Err(Error::InvalidInput(
            "epsilon must be > 0, max_sweeps ≥ 1 and ridge ≥ 0".into(),
        ));
    }
    let rounds = config.rounds();
    let weights = config.weights();
    let basis = topology.support_basis();

    let mut r = rng::rng(config.seed);
    let mut shifts = Vec::with_capacity(rounds);
    shifts.push(Matrix::zeros(n, n));
    for _ in 1..rounds {
        shifts.push(initial_shift(topology, &basis, config.init, &mut r));
    }

    let stop_metric = |shifts: &[Matrix]| -> Result<f64> {
        match config.stop_on {
            StopOn::Unweighted => unweighted_cost(target, shifts),
            StopOn::Weighted => objective(target, shifts, weights),
        }
    };
    let floor = f64::EPSILON * f64::EPSILON * target.norm_squared();

    let mut history = Vec::new();
    let mut f_prev = stop_metric(&shifts)?;
    let mut current = objective(target, &shifts, weights)?;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        for j in 0..rounds {
            let system = BlockSystem::assemble(j, &shifts, target, weights, &basis)?;
            let coeffs = match system.solve(config.ridge) {
                Ok(c) => Some(c),
                Err(Error::Singular(_)) => {
                    let ridge = config.ridge.max(system.fallback_ridge());
                    if ridge > 0.0 {
                        Some(system.solve(ridge)?)
                    } else {
                        // no weighted round depends on this block
                        None
                    }
                }
                Err(e) => return Err(e),
            };
            if let Some(c) = coeffs {
                // a numerically poor solve is rejected rather than allowed to raise the cost
                let previous = std::mem::replace(&mut shifts[j], basis.to_matrix(&c));
                let candidate = objective(target, &shifts, weights)?;
                if !candidate.is_finite() {
                    return Err(Error::NonFinite(format!("objective at block {} of sweep {sweeps}", j + 1)));
                }
                if candidate <= current {
                    current = candidate;
                } else {
                    shifts[j] = previous;
                }
            }
        }
        let obj = current;
        let f = stop_metric(&shifts)?;
        if !obj.is_finite() || !f.is_finite() {
            return Err(Error::NonFinite(format!("objective after sweep {sweeps}")));
        }
        history.push(obj);
        if f <= floor || (f - f_prev).abs() < config.epsilon * f_prev.abs() {
            converged = true;
            break;
        }
        f_prev = f;
    }

    let per_round_error = per_round_error(target, &shifts);
    Ok(ShiftSequence {
        shifts,
        topology: topology.clone(),
        weights: weights.to_vec(),
        objective_history: history,
        per_round_error,
        sweeps,
        converged,
        epsilon: config.epsilon,
        seed: config.seed,
        init: config.init,
        stop_on: config.stop_on,
    })
}
