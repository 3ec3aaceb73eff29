//! Clean execution of shift sequences and FIR filters on graph signals.
//!
//! Execution is a centralized simulation: round `l` computes every node's
//! update `x_n ← Σ_{n′} S_l[n, n′] x_{n′}` from the previous round's values.

use crate::{Error, Matrix, Result, Vector};

/// Iterates of one execution. `iterates[0]` is the input signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub iterates: Vec<Vector>,
    /// `‖T x − x^{(l)}‖₂` per iterate, when a target was supplied.
    pub errors: Option<Vec<f64>>,
}

impl RunTrace {
    pub fn final_signal(&self) -> &Vector {
        self.iterates.last().expect("trace holds at least the input")
    }

    /// Fills `errors` against target `T`.
    pub fn with_errors(mut self, target: &Matrix) -> Self {
        let tx = target * &self.iterates[0];
        self.errors = Some(self.iterates.iter().map(|it| (&tx - it).norm()).collect());
        self
    }
}

fn check_square(context: &'static str, s: &Matrix, n: usize) -> Result<()> {
    if s.shape() != (n, n) {
        return Err(Error::dims(
            context,
            format!("{n}x{n}"),
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    Ok(())
}

pub fn check_signal(x: &Vector, n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::dims("graph signal", n, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("graph signal".into()));
    }
    Ok(())
}

pub(crate) fn check_shifts(shifts: &[Matrix], n: usize) -> Result<()> {
    if shifts.is_empty() {
        return Err(Error::InvalidInput("shift sequence is empty".into()));
    }
    shifts.iter().try_for_each(|s| check_square("shift matrix", s, n))
}

/// `x^{(l)} = S_l x^{(l−1)}` for `l = 1..L`.
pub fn apply_successive(shifts: &[Matrix], x: &Vector) -> Result<RunTrace> {
    let n = x.len();
    for s in shifts {
        check_square("shift matrix", s, n)?;
    }
    let mut iterates = Vec::with_capacity(shifts.len() + 1);
    iterates.push(x.clone());
    for s in shifts {
        let next = s * iterates.last().unwrap();
        iterates.push(next);
    }
    Ok(RunTrace {
        iterates,
        errors: None,
    })
}

/// `Σ_{l=0}^{K−1} c_l S^l x`, evaluated by repeated shifting.
pub fn apply_fir(shift: &Matrix, coeffs: &[f64], x: &Vector) -> Result<Vector> {
    let n = x.len();
    check_square("shift matrix", shift, n)?;
    if coeffs.is_empty() {
        return Err(Error::InvalidInput(
            "FIR filter needs at least one coefficient".into(),
        ));
    }
    let mut out = Vector::zeros(n);
    let mut shifted = x.clone();
    for (l, c) in coeffs.iter().enumerate() {
        if l > 0 {
            shifted = shift * &shifted;
        }
        out.axpy(*c, &shifted, 1.0);
    }
    Ok(out)
}

/// `‖y − T x‖₂ / ‖T x‖₂`.
pub fn relative_error(target: &Matrix, x: &Vector, y: &Vector) -> Result<f64> {
    if target.ncols() != x.len() || target.nrows() != y.len() {
        return Err(Error::dims(
            "relative error",
            format!("{}x{} target", y.len(), x.len()),
            format!("{}x{}", target.nrows(), target.ncols()),
        ));
    }
    let tx = target * x;
    let denom = tx.norm();
    if denom == 0.0 {
        return Err(Error::InvalidInput(
            "relative error undefined: T x = 0".into(),
        ));
    }
    Ok((y - tx).norm() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_shifts_leave_signal() {
        let x = Vector::from_vec(vec![1.0, -2.0, 3.5]);
        let i = Matrix::identity(3, 3);
        let tr = apply_successive(&[i.clone(), i], &x).unwrap();
        assert_eq!(tr.final_signal(), &x);
        assert_eq!(tr.iterates[0], x);
        assert_eq!(tr.iterates.len(), 3);
    }

    #[test]
    fn doubling_shift() {
        let x = Vector::from_element(4, 1.0);
        let tr = apply_successive(&[Matrix::identity(4, 4) * 2.0], &x).unwrap();
        assert_eq!(tr.final_signal(), &Vector::from_element(4, 2.0));
    }

    #[test]
    fn fir_trivial_coefficients() {
        let s = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let x = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(apply_fir(&s, &[1.0], &x).unwrap(), x);
        assert_eq!(apply_fir(&s, &[0.0, 1.0], &x).unwrap(), &s * &x);
        assert!(apply_fir(&s, &[], &x).is_err());
        assert!(apply_fir(&Matrix::zeros(3, 3), &[1.0], &x).is_err());
    }

    #[test]
    fn relative_error_cases() {
        let t = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let x = Vector::from_vec(vec![1.0, 1.0]);
        let tx = &t * &x;
        assert_eq!(relative_error(&t, &x, &tx).unwrap(), 0.0);
        assert_relative_eq!(relative_error(&t, &x, &Vector::zeros(2)).unwrap(), 1.0);
        assert_relative_eq!(relative_error(&t, &x, &(&tx * 2.0)).unwrap(), 1.0);
        assert!(relative_error(&Matrix::zeros(2, 2), &x, &x).is_err());
    }

    #[test]
    fn errors_against_target() {
        let x = Vector::from_vec(vec![1.0, 0.0]);
        let tr = apply_successive(&[Matrix::identity(2, 2)], &x)
            .unwrap()
            .with_errors(&Matrix::identity(2, 2));
        assert_eq!(tr.errors.unwrap(), vec![0.0, 0.0]);
    }
}
