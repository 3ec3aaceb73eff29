//! Random edge fluctuations.
//!
//! Each round every cross edge is active independently with probability
//! `P_ac[dst, src]`; a dropped edge zeroes the matching entry of the shift,
//! i.e. `Ŝ = S + S̃` with `S̃ = −S` on dropped entries. Diagonal entries never
//! fluctuate. Round `k` injects the deviation `z_k = S̃_k y^{(k−1)}`, and the
//! final output is `y = Hx + Σ_{i<L} (S_L⋯S_{i+1}) z_i + z_L`.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::filtering::{check_shifts, check_signal, RunTrace};
use crate::graph::Topology;
use crate::io::read_matrix;
use crate::mc::{self, Accumulator, ScalarStats, VectorStats};
use crate::{rng, Error, Matrix, Result, Vector};

/// Per-edge activation probabilities and the spectral-norm cap used by the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationModel {
    /// `P_ac[dst, src]`; entries off the support are ignored.
    pub p_active: Matrix,
    pub seed: u64,
    /// `None` means `max_i ‖S_i‖₂`.
    pub rho: Option<f64>,
}

impl FluctuationModel {
    pub fn new(p_active: Matrix, seed: u64) -> Result<Self> {
        check_probabilities(&p_active)?;
        Ok(FluctuationModel {
            p_active,
            seed,
            rho: None,
        })
    }

    pub fn uniform(n_nodes: usize, p: f64, seed: u64) -> Result<Self> {
        FluctuationModel::new(Matrix::from_element(n_nodes, n_nodes, p), seed)
    }

    /// Reads either a full matrix file (`rows cols` header) or an edge list
    /// of `src dst p` lines (1-based); unlisted edges are always active.
    pub fn read_probabilities(path: impl AsRef<Path>, n_nodes: usize) -> Result<Matrix> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .unwrap_or("");
        let m = if first.split_whitespace().count() == 3 {
            let mut m = Matrix::from_element(n_nodes, n_nodes, 1.0);
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let perr = |msg: String| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg,
                };
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(perr("expected `src dst p`".into()));
                }
                let idx = |t: &str| -> Result<usize> {
                    let v: usize = t.parse().map_err(|_| perr(format!("bad index {t:?}")))?;
                    if v == 0 || v > n_nodes {
                        return Err(Error::IndexOutOfRange { index: v, n_nodes });
                    }
                    Ok(v - 1)
                };
                let (src, dst) = (idx(toks[0])?, idx(toks[1])?);
                let p: f64 = toks[2]
                    .parse()
                    .map_err(|_| perr(format!("bad probability {:?}", toks[2])))?;
                m[(dst, src)] = p;
            }
            m
        } else {
            let m = read_matrix(path)?;
            if m.shape() != (n_nodes, n_nodes) {
                return Err(Error::dims(
                    "activation probability matrix",
                    format!("{n_nodes}x{n_nodes}"),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            m
        };
        check_probabilities(&m)?;
        Ok(m)
    }

    /// Checks the cap against the shifts and returns the effective `ρ`.
    pub fn effective_rho(&self, shifts: &[Matrix]) -> Result<f64> {
        validate_rho(self.rho, shifts)
    }
}

fn check_probabilities(p: &Matrix) -> Result<()> {
    if p.nrows() != p.ncols() {
        return Err(Error::dims(
            "activation probabilities",
            "square matrix",
            format!("{}x{}", p.nrows(), p.ncols()),
        ));
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "activation probability {bad} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Returns `rho` (or `max_i ‖S_i‖₂` when `None`) after checking it bounds every shift.
pub fn validate_rho(rho: Option<f64>, shifts: &[Matrix]) -> Result<f64> {
    let mut max_norm = 0.0f64;
    let mut norms = Vec::with_capacity(shifts.len());
    for s in shifts {
        let v = match spectral_norm(s) {
            Ok(v) => v,
            Err(Error::NonConvergence { estimate }) => estimate,
            Err(e) => return Err(e),
        };
        max_norm = max_norm.max(v);
        norms.push(v);
    }
    match rho {
        None => Ok(max_norm),
        Some(r) => {
            for (i, &v) in norms.iter().enumerate() {
                if r < v * (1.0 - 1e-9) {
                    return Err(Error::RhoTooSmall {
                        rho: r,
                        norm: v,
                        index: i + 1,
                    });
                }
            }
            Ok(r)
        }
    }
}

/// Largest singular value by power iteration on `SᵀS`.
pub fn spectral_norm(s: &Matrix) -> Result<f64> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 10_000;
    if s.is_empty() {
        return Ok(0.0);
    }
    let sts = s.transpose() * s;
    // fixed pseudo-random start so the result does not depend on caller state
    let mut r = rng::rng(0x5eed);
    let mut v = Vector::from_fn(sts.ncols(), |_, _| r.random_range(0.5..1.5));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..MAX_ITER {
        let w = &sts * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= TOL * next.abs() {
            return Ok(next.max(0.0).sqrt());
        }
        lambda = next;
    }
    Err(Error::NonConvergence {
        estimate: lambda.max(0.0).sqrt(),
    })
}

/// Whether entry `(r, c)` of a shift can be dropped.
#[inline]
fn fluctuates(s: &Matrix, r: usize, c: usize) -> bool {
    r != c && s[(r, c)] != 0.0
}

/// Draws `Ŝ`: each nonzero off-diagonal entry is kept with its own
/// Bernoulli(`P_ac[r, c]`) draw, visited in row-major order.
pub fn sample_perturbed_shift(s: &Matrix, p_active: &Matrix, r: &mut rng::Rng) -> Matrix {
    let mut out = s.clone();
    for row in 0..s.nrows() {
        for col in 0..s.ncols() {
            if fluctuates(s, row, col) && r.random::<f64>() >= p_active[(row, col)] {
                out[(row, col)] = 0.0;
            }
        }
    }
    out
}

/// `E[S̃] = (P_ac − 1) ∘ S` on fluctuating entries, zero on the diagonal.
pub fn mean_perturbation(s: &Matrix, p_active: &Matrix) -> Matrix {
    Matrix::from_fn(s.nrows(), s.ncols(), |r, c| {
        if fluctuates(s, r, c) {
            (p_active[(r, c)] - 1.0) * s[(r, c)]
        } else {
            0.0
        }
    })
}

/// Mean, covariance and second moment of a deviation term.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationMoments {
    pub mean: Vector,
    pub cov: Matrix,
    /// `cov + mean meanᵀ`.
    pub second_moment: Matrix,
}

impl DeviationMoments {
    fn from_parts(mean: Vector, cov: Matrix) -> Self {
        let second_moment = &cov + &mean * mean.transpose();
        DeviationMoments {
            mean,
            cov,
            second_moment,
        }
    }
}

fn check_p(p_active: &Matrix, n: usize) -> Result<()> {
    if p_active.shape() != (n, n) {
        return Err(Error::dims(
            "activation probabilities",
            format!("{n}x{n}"),
            format!("{}x{}", p_active.nrows(), p_active.ncols()),
        ));
    }
    check_probabilities(p_active)
}

/// Closed-form moments of `z_1 = S̃_1 x`.
///
/// `Σ[i, j] = tr(X C_{ji}) − m_i m_j` with `X = xxᵀ` and
/// `C_{ji}[a, b] = E[s̃_{j,a} s̃_{i,b}]`: the product of the two means for
/// distinct entries and `S[j, a]² q_{ja}` for a repeated one, `q = 1 − P_ac`.
pub fn z1_moments(s1: &Matrix, p_active: &Matrix, x: &Vector) -> Result<DeviationMoments> {
    let n = x.len();
    check_shifts(std::slice::from_ref(s1), n)?;
    check_p(p_active, n)?;
    let mean_s = mean_perturbation(s1, p_active);
    let mean = &mean_s * x;
    let drop_prob = |r: usize, c: usize| {
        if fluctuates(s1, r, c) {
            1.0 - p_active[(r, c)]
        } else {
            0.0
        }
    };

    let mut cov = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // tr(X C_ji) = Σ_{a,b} x_a x_b C_ji[b, a]
            let mut tr = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let c_ba = if (j, b) == (i, a) {
                        s1[(j, b)] * s1[(j, b)] * drop_prob(j, b)
                    } else {
                        mean_s[(j, b)] * mean_s[(i, a)]
                    };
                    tr += x[a] * x[b] * c_ba;
                }
            }
            cov[(i, j)] = tr - mean[i] * mean[j];
        }
    }
    Ok(DeviationMoments::from_parts(mean, cov))
}

/// Closed-form mean of `z_2`: `E[S̃_2] (S_1 + E[S̃_1]) x`.
pub fn z2_mean(s1: &Matrix, s2: &Matrix, p_active: &Matrix, x: &Vector) -> Vector {
    mean_perturbation(s2, p_active) * ((s1 + mean_perturbation(s1, p_active)) * x)
}

/// Monte-Carlo moments with their standard errors.
#[derive(Debug, Clone)]
pub struct McMoments {
    pub moments: DeviationMoments,
    pub mean_se: Vector,
    /// Standard error of each covariance entry.
    pub cov_se: Matrix,
    /// Standard error of each entry of `E[z zᵀ]`.
    pub second_moment_se: Matrix,
    /// Mean and standard error of `‖z‖²`.
    pub sq_norm: Estimate,
    pub trials: u64,
}

/// Runs one perturbed execution of the first `rounds` shifts and hands
/// `(k, z_k, y^{(k)})` to `visit` after every round (`k` is 1-based).
fn perturbed_rounds(
    shifts: &[Matrix],
    p_active: &Matrix,
    x: &Vector,
    r: &mut rng::Rng,
    mut visit: impl FnMut(usize, &Vector, &Vector),
) {
    let mut y = x.clone();
    for (k, s) in shifts.iter().enumerate() {
        let hat = sample_perturbed_shift(s, p_active, r);
        let z = (&hat - s) * &y;
        y = &hat * &y;
        visit(k + 1, &z, &y);
    }
}

/// Sample moments of `z_k` (1-based `k`) over independent trials. Trial `t`
/// uses stream `t` of `seed`; covariance standard errors come from a second
/// pass over the same streams.
pub fn deviation_moments_mc(
    shifts: &[Matrix],
    p_active: &Matrix,
    x: &Vector,
    k: usize,
    trials: u64,
    seed: u64,
) -> Result<McMoments> {
    let n = x.len();
    check_shifts(shifts, n)?;
    check_p(p_active, n)?;
    check_signal(x, n)?;
    if k == 0 || k > shifts.len() {
        return Err(Error::InvalidInput(format!(
            "deviation index {k} outside 1..={}",
            shifts.len()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be ≥ 1".into()));
    }
    let prefix = &shifts[..k];
    let sample = |t: u64| {
        let mut r = rng::stream(seed, t);
        let mut out = Vector::zeros(n);
        perturbed_rounds(prefix, p_active, x, &mut r, |round, z, _| {
            if round == k {
                out.copy_from(z);
            }
        });
        out
    };

    let (first, norms): (VectorStats, ScalarStats) = mc::run(
        trials,
        || (VectorStats::new(n), ScalarStats::default()),
        |acc, t| {
            let z = sample(t);
            acc.1.push(z.norm_squared());
            acc.0.push(&z);
        },
    );
    let nf = trials as f64;
    let mean = &first.sum / nf;
    let second = &first.outer / nf;
    let cov = &second - &mean * mean.transpose();

    // second pass: spread of the centered and raw products
    let spread = mc::run(
        trials,
        || SquareSums::new(n),
        |acc, t| {
            let z = sample(t);
            let c = &z - &mean;
            acc.push(&c, &z);
        },
    );
    let se_of = |sum_sq: &Matrix, centre: &Matrix| {
        Matrix::from_fn(n, n, |i, j| {
            if trials < 2 {
                return 0.0;
            }
            let var = (sum_sq[(i, j)] / nf - centre[(i, j)] * centre[(i, j)]).max(0.0);
            (var * nf / (nf - 1.0) / nf).sqrt()
        })
    };
    let cov_se = se_of(&spread.centered_sq, &cov);
    let second_moment_se = se_of(&spread.raw_sq, &second);
    let mean_se = Vector::from_fn(n, |i, _| {
        if trials < 2 {
            0.0
        } else {
            (cov[(i, i)].max(0.0) * nf / (nf - 1.0) / nf).sqrt()
        }
    });

    Ok(McMoments {
        moments: DeviationMoments {
            mean,
            cov,
            second_moment: second,
        },
        mean_se,
        cov_se,
        second_moment_se,
        sq_norm: Estimate::from_stats(&norms),
        trials,
    })
}

/// Sums of squared centered and raw products.
struct SquareSums {
    centered_sq: Matrix,
    raw_sq: Matrix,
}

impl SquareSums {
    fn new(n: usize) -> Self {
        SquareSums {
            centered_sq: Matrix::zeros(n, n),
            raw_sq: Matrix::zeros(n, n),
        }
    }

    fn push(&mut self, centered: &Vector, raw: &Vector) {
        let n = centered.len();
        for i in 0..n {
            for j in 0..n {
                let c = centered[i] * centered[j];
                let r = raw[i] * raw[j];
                self.centered_sq[(i, j)] += c * c;
                self.raw_sq[(i, j)] += r * r;
            }
        }
    }
}

impl Accumulator for SquareSums {
    fn merge(&mut self, other: Self) {
        self.centered_sq += other.centered_sq;
        self.raw_sq += other.raw_sq;
    }
}

/// One perturbed execution.
#[derive(Debug, Clone)]
pub struct FluctuatingRun {
    /// Iterates `y^{(0)} = x, …, y^{(L)}`.
    pub trace: RunTrace,
    /// `z_1..z_L`.
    pub deviations: Vec<Vector>,
    /// `Ω = y^{(L)} − (S_L⋯S_1) x`.
    pub omega: Vector,
}

/// Executes `y^{(l)} = Ŝ_l y^{(l−1)}` with fresh draws every round.
pub fn run_fluctuating(
    shifts: &[Matrix],
    p_active: &Matrix,
    x: &Vector,
    r: &mut rng::Rng,
) -> Result<FluctuatingRun> {
    let n = x.len();
    check_shifts(shifts, n)?;
    check_p(p_active, n)?;
    let mut iterates = vec![x.clone()];
    let mut deviations = Vec::with_capacity(shifts.len());
    perturbed_rounds(shifts, p_active, x, r, |_, z, y| {
        deviations.push(z.clone());
        iterates.push(y.clone());
    });
    let clean = shifts.iter().fold(x.clone(), |acc, s| s * acc);
    let omega = iterates.last().unwrap() - clean;
    Ok(FluctuatingRun {
        trace: RunTrace {
            iterates,
            errors: None,
        },
        deviations,
        omega,
    })
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl Estimate {
    fn from_stats(s: &ScalarStats) -> Self {
        Estimate {
            value: s.mean(),
            std_error: s.std_error(),
            trials: s.n,
        }
    }
}

/// Empirical `E‖Ω‖²` plus the mean deviation norm after every round.
#[derive(Debug, Clone)]
pub struct MseEstimate {
    pub mse: Estimate,
    /// Mean of `‖y^{(l)} − S_l⋯S_1 x‖₂` for `l = 1..L`.
    pub round_deviation_norms: Vec<f64>,
}

/// Average of `‖Ω‖²` over independent executions; trial `t` uses stream `t` of `seed`.
pub fn mse_empirical(
    shifts: &[Matrix],
    p_active: &Matrix,
    x: &Vector,
    trials: u64,
    seed: u64,
) -> Result<MseEstimate> {
    let n = x.len();
    check_shifts(shifts, n)?;
    check_p(p_active, n)?;
    check_signal(x, n)?;
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be ≥ 1".into()));
    }
    let mut clean = Vec::with_capacity(shifts.len());
    let mut c = x.clone();
    for s in shifts {
        c = s * c;
        clean.push(c.clone());
    }
    let rounds = shifts.len();
    let (mse, per_round): (ScalarStats, Vec<ScalarStats>) = mc::run(
        trials,
        || (ScalarStats::default(), vec![ScalarStats::default(); rounds]),
        |acc, t| {
            let mut r = rng::stream(seed, t);
            let mut last = 0.0;
            perturbed_rounds(shifts, p_active, x, &mut r, |k, _, y| {
                let d = (y - &clean[k - 1]).norm();
                acc.1[k - 1].push(d);
                last = d * d;
            });
            acc.0.push(last);
        },
    );
    Ok(MseEstimate {
        mse: Estimate::from_stats(&mse),
        round_deviation_norms: per_round.iter().map(ScalarStats::mean).collect(),
    })
}

/// How the mean enters the `tr(Σ + ·)` terms of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanTerm {
    /// `tr(Σ_z + m_z m_zᵀ) = E‖z‖²`.
    #[default]
    OuterProduct,
    /// `tr(Σ_z) + Σ_i (m_z)_i`, the mean vector added entrywise.
    Literal,
}

/// Components of the MSE upper bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: f64,
    /// Standard error of `bound`, combining its independent estimates.
    pub bound_se: f64,
    pub rho: f64,
    pub expected_trace_psi: Estimate,
    /// `tr(Σ_{z_k} + ·)` for `k = 1..L`, per `mean_term`.
    pub deviation_terms: Vec<f64>,
    pub mean_term: MeanTerm,
}

/// Evaluates
/// `E[tr Ψ] + 2 Σ_{j=2}^{L} ρ^{L−j+1} tr(Σ_{z_{j−1}} + M_{z_{j−1}}) + tr(Σ_{z_L} + M_{z_L})`.
///
/// `Ψ` collects the cross terms of `‖Ω‖²`: with `Υ_i = S_L⋯S_{i+1}`,
/// `tr Ψ = ‖Ω‖² − Σ_{i<L} ‖Υ_i z_i‖² − ‖z_L‖²`. It is averaged over joint
/// trajectories so correlations between the `z_i` are kept. The moment terms
/// use [`deviation_moments_mc`] with the same trial budget.
pub fn mse_bound(
    shifts: &[Matrix],
    p_active: &Matrix,
    x: &Vector,
    rho: Option<f64>,
    trials: u64,
    seed: u64,
    mean_term: MeanTerm,
) -> Result<BoundReport> {
    let n = x.len();
    check_shifts(shifts, n)?;
    check_p(p_active, n)?;
    check_signal(x, n)?;
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be ≥ 1".into()));
    }
    let rho = validate_rho(rho, shifts)?;
    let rounds = shifts.len();

    let mut deviation_terms = Vec::with_capacity(rounds);
    let mut term_se = Vec::with_capacity(rounds);
    for k in 1..=rounds {
        let m = deviation_moments_mc(
            shifts,
            p_active,
            x,
            k,
            trials,
            rng::child(rng::substream(seed, "moments"), k as u64),
        )?;
        let term = match mean_term {
            MeanTerm::OuterProduct => m.moments.second_moment.trace(),
            MeanTerm::Literal => m.moments.cov.trace() + m.moments.mean.sum(),
        };
        deviation_terms.push(term);
        term_se.push(m.sq_norm.std_error);
    }

    // Υ_i = S_L⋯S_{i+1}, Υ_L = I
    let mut upsilon = vec![Matrix::identity(n, n); rounds];
    for i in (0..rounds.saturating_sub(1)).rev() {
        upsilon[i] = &upsilon[i + 1] * &shifts[i + 1];
    }
    let psi_seed = rng::substream(seed, "psi");
    let psi: ScalarStats = mc::run(trials, ScalarStats::default, |acc, t| {
        let mut r = rng::stream(psi_seed, t);
        let mut omega = Vector::zeros(n);
        let mut diagonal = 0.0;
        perturbed_rounds(shifts, p_active, x, &mut r, |k, z, _| {
            let part = &upsilon[k - 1] * z;
            diagonal += part.norm_squared();
            omega += part;
        });
        acc.push(omega.norm_squared() - diagonal);
    });
    let expected_trace_psi = Estimate::from_stats(&psi);

    let mut bound = expected_trace_psi.value + deviation_terms[rounds - 1];
    let mut var = expected_trace_psi.std_error.powi(2) + term_se[rounds - 1].powi(2);
    for j in 2..=rounds {
        let coef = 2.0 * rho.powi((rounds - j + 1) as i32);
        bound += coef * deviation_terms[j - 2];
        var += (coef * term_se[j - 2]).powi(2);
    }

    Ok(BoundReport {
        bound,
        bound_se: var.sqrt(),
        rho,
        expected_trace_psi,
        deviation_terms,
        mean_term,
    })
}

/// Uniform activation probability `p` on every edge of `topology`.
pub fn uniform_probabilities(topology: &Topology, p: f64) -> Result<Matrix> {
    let m = Matrix::from_element(topology.n_nodes(), topology.n_nodes(), p);
    check_probabilities(&m)?;
    Ok(m)
}
