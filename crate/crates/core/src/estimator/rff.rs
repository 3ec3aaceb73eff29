//! Shift-invariant kernels and their random Fourier feature maps.

use rand_distr::{Cauchy, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Matrix, Result, Vector};

/// Shift-invariant kernels with `κ(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum Kernel {
    /// `exp(−‖δ‖² / 2σ²)`; spectral density `N(0, σ⁻² I)`.
    Gaussian { sigma: f64 },
    /// `exp(−‖δ‖₁ / b)`; spectral density: i.i.d. Cauchy(0, 1/b).
    Laplacian { scale: f64 },
    /// `Π_d 1 / (1 + δ_d² / γ²)`; spectral density: i.i.d. Laplace(0, 1/γ).
    Cauchy { gamma: f64 },
}

impl Kernel {
    pub fn bandwidth(&self) -> f64 {
        match *self {
            Kernel::Gaussian { sigma } => sigma,
            Kernel::Laplacian { scale } => scale,
            Kernel::Cauchy { gamma } => gamma,
        }
    }

    /// Same family with a different bandwidth.
    pub fn with_bandwidth(&self, bw: f64) -> Kernel {
        match self {
            Kernel::Gaussian { .. } => Kernel::Gaussian { sigma: bw },
            Kernel::Laplacian { .. } => Kernel::Laplacian { scale: bw },
            Kernel::Cauchy { .. } => Kernel::Cauchy { gamma: bw },
        }
    }

    fn validate(&self) -> Result<()> {
        let bw = self.bandwidth();
        if !(bw > 0.0) || !bw.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive and finite, got {bw}"
            )));
        }
        Ok(())
    }

    /// `κ(u − v)`.
    pub fn eval(&self, u: &Vector, v: &Vector) -> f64 {
        let diff = u - v;
        match *self {
            Kernel::Gaussian { sigma } => (-diff.norm_squared() / (2.0 * sigma * sigma)).exp(),
            Kernel::Laplacian { scale } => (-diff.lp_norm(1) / scale).exp(),
            Kernel::Cauchy { gamma } => diff
                .iter()
                .map(|d| 1.0 / (1.0 + d * d / (gamma * gamma)))
                .product(),
        }
    }
}

/// Closed-form kernel value.
pub fn kernel_exact(u: &Vector, v: &Vector, kernel: &Kernel) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dims("kernel arguments", u.len(), v.len()));
    }
    Ok(kernel.eval(u, v))
}

/// Draws `D` spectral samples of dimension `dim`, one per column.
pub fn sample_spectral(n_features: usize, kernel: &Kernel, dim: usize, seed: u64) -> Result<Matrix> {
    if n_features == 0 {
        return Err(Error::InvalidInput("number of random features must be ≥ 1".into()));
    }
    kernel.validate()?;
    let mut r = rng::rng(seed);
    let w = match *kernel {
        Kernel::Gaussian { sigma } => Matrix::from_fn(dim, n_features, |_, _| {
            let z: f64 = StandardNormal.sample(&mut r);
            z / sigma
        }),
        Kernel::Laplacian { scale } => {
            let c = Cauchy::new(0.0, 1.0 / scale)
                .map_err(|e| Error::InvalidInput(format!("Cauchy sampler: {e}")))?;
            Matrix::from_fn(dim, n_features, |_, _| c.sample(&mut r))
        }
        Kernel::Cauchy { gamma } => {
            // Laplace(0, 1/γ) as the difference of two Exp(γ) draws
            let e = Exp::new(gamma)
                .map_err(|e| Error::InvalidInput(format!("exponential sampler: {e}")))?;
            Matrix::from_fn(dim, n_features, |_, _| e.sample(&mut r) - e.sample(&mut r))
        }
    };
    Ok(w)
}

/// `Δ_W(u) = D^{−1/2} [sin(w_1ᵀu) … sin(w_Dᵀu), cos(w_1ᵀu) … cos(w_Dᵀu)]`.
pub fn rff_features(u: &Vector, w: &Matrix) -> Result<Vector> {
    if u.len() != w.nrows() {
        return Err(Error::dims("random feature input", w.nrows(), u.len()));
    }
    let d = w.ncols();
    let proj = w.tr_mul(u);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Vector::zeros(2 * d);
    for (k, p) in proj.iter().enumerate() {
        let (s, c) = p.sin_cos();
        out[k] = scale * s;
        out[d + k] = scale * c;
    }
    Ok(out)
}

/// Spectral samples for one node plus the kernel they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct RffModel {
    pub w: Matrix,
    pub kernel: Kernel,
    pub seed: u64,
}

impl RffModel {
    pub fn new(n_features: usize, kernel: Kernel, dim: usize, seed: u64) -> Result<Self> {
        Ok(RffModel {
            w: sample_spectral(n_features, &kernel, dim, seed)?,
            kernel,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `D`; the feature vector has length `2D`.
    pub fn n_features(&self) -> usize {
        self.w.ncols()
    }

    pub fn features(&self, u: &Vector) -> Result<Vector> {
        rff_features(u, &self.w)
    }

    /// `Δ(u)ᵀΔ(v)`.
    pub fn approx_kernel(&self, u: &Vector, v: &Vector) -> Result<f64> {
        Ok(self.features(u)?.dot(&self.features(v)?))
    }
}

/// Solves `(Γ + λ K I) α = y`.
pub fn ridge_closed_form(gram: &Matrix, lambda: f64, k: usize, y: &Vector) -> Result<Vector> {
    let n = gram.nrows();
    if gram.ncols() != n || y.len() != n {
        return Err(Error::dims(
            "ridge system",
            format!("{n}x{n} Gram with length-{n} targets"),
            format!("{}x{} Gram, {} targets", n, gram.ncols(), y.len()),
        ));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidInput("ridge parameter must be ≥ 0".into()));
    }
    let mut a = gram.clone();
    let shift = lambda * k as f64;
    for i in 0..n {
        a[(i, i)] += shift;
    }
    let alpha = match a.clone().cholesky() {
        Some(ch) => ch.solve(y),
        None => a
            .clone()
            .lu()
            .solve(y)
            .ok_or(Error::Singular("ridge closed form"))?,
    };
    let residual = (&a * &alpha - y).norm();
    if !alpha.iter().all(|v| v.is_finite()) || residual > 1e-6 * y.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Singular("ridge closed form"));
    }
    Ok(alpha)
}

/// Median pairwise Euclidean distance over at most the first 500 samples.
/// Falls back to 1 when every distance is zero.
pub fn median_bandwidth(samples: &[Vector]) -> f64 {
    let pts = &samples[..samples.len().min(500)];
    let mut d: Vec<f64> = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push((&pts[i] - &pts[j]).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    fn random_vec(dim: usize, seed: u64) -> Vector {
        let mut r = rng::rng(seed);
        Vector::from_fn(dim, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_input_features() {
        let w = sample_spectral(8, &Kernel::Gaussian { sigma: 1.0 }, 3, 1).unwrap();
        let f = rff_features(&Vector::zeros(3), &w).unwrap();
        let s = 1.0 / 8f64.sqrt();
        for k in 0..8 {
            assert_eq!(f[k], 0.0);
            assert_relative_eq!(f[8 + k], s);
        }
        assert_relative_eq!(f.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn features_have_unit_norm() {
        for (seed, kernel) in [
            Kernel::Gaussian { sigma: 0.7 },
            Kernel::Laplacian { scale: 2.0 },
            Kernel::Cauchy { gamma: 1.3 },
        ]
        .into_iter()
        .enumerate()
        {
            let m = RffModel::new(37, kernel, 4, seed as u64).unwrap();
            for s in 0..20 {
                let u = random_vec(4, 100 + s) * 10.0;
                assert_relative_eq!(m.features(&u).unwrap().norm(), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn dimension_checks() {
        let w = sample_spectral(4, &Kernel::Gaussian { sigma: 1.0 }, 3, 1).unwrap();
        assert!(rff_features(&Vector::zeros(2), &w).is_err());
        assert!(sample_spectral(0, &Kernel::Gaussian { sigma: 1.0 }, 3, 1).is_err());
        assert!(sample_spectral(4, &Kernel::Gaussian { sigma: 0.0 }, 3, 1).is_err());
        assert!(kernel_exact(&Vector::zeros(2), &Vector::zeros(3), &Kernel::Gaussian { sigma: 1.0 }).is_err());
    }

    #[test]
    fn spectral_sampling_is_deterministic() {
        let k = Kernel::Cauchy { gamma: 1.0 };
        assert_eq!(sample_spectral(5, &k, 2, 9).unwrap(), sample_spectral(5, &k, 2, 9).unwrap());
        assert_ne!(sample_spectral(5, &k, 2, 9).unwrap(), sample_spectral(5, &k, 2, 10).unwrap());
    }

    #[test]
    fn exact_kernels() {
        let kernels = [
            Kernel::Gaussian { sigma: 1.5 },
            Kernel::Laplacian { scale: 0.5 },
            Kernel::Cauchy { gamma: 2.0 },
        ];
        for k in &kernels {
            let u = random_vec(3, 1);
            assert_eq!(kernel_exact(&u, &u, k).unwrap(), 1.0);
            for s in 0..10 {
                let a = random_vec(3, 10 + s);
                let b = random_vec(3, 50 + s);
                assert_eq!(kernel_exact(&a, &b, k).unwrap(), kernel_exact(&b, &a, k).unwrap());
            }
        }
        let sigma: f64 = 0.8;
        let u = Vector::from_vec(vec![0.0, 0.0]);
        let v = Vector::from_vec(vec![sigma * 2f64.sqrt(), 0.0]);
        assert_relative_eq!(
            kernel_exact(&u, &v, &Kernel::Gaussian { sigma }).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ridge_trivial_systems() {
        let y = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        let i = Matrix::identity(3, 3);
        assert_eq!(ridge_closed_form(&i, 0.0, 3, &y).unwrap(), y);
        let half = ridge_closed_form(&i, 1.0 / 3.0, 3, &y).unwrap();
        assert_relative_eq!(half, &y / 2.0, epsilon = 1e-15);
        assert!(ridge_closed_form(&Matrix::zeros(3, 3), 0.0, 3, &y).is_err());
        assert!(ridge_closed_form(&i, -1.0, 3, &y).is_err());
    }

    #[test]
    fn median_heuristic() {
        let pts: Vec<Vector> = [0.0, 1.0, 3.0].iter().map(|v| Vector::from_vec(vec![*v])).collect();
        // distances 1, 3, 2 -> median 2
        assert_eq!(median_bandwidth(&pts), 2.0);
        assert_eq!(median_bandwidth(&pts[..1]), 1.0);
    }
}
