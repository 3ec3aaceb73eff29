//! Plain-text matrix files.
//!
//! Line 1 holds `rows cols`; the following lines hold the entries in
//! row-major order, whitespace separated. Values are written with 17
//! significant digits so files round-trip exactly. Lines starting with `#`
//! are ignored on read.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Matrix, Result, Vector};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_to_string(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", fmt_f64(m[(r, c)]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<Matrix> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut tokens = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)));

    let mut dim = |what: &str| -> Result<usize> {
        let (line, tok) = tokens
            .next()
            .ok_or_else(|| perr(1, format!("missing {what} count")))?;
        tok.parse::<usize>()
            .map_err(|_| perr(line, format!("bad {what} count {tok:?}")))
    };
    let rows = dim("row")?;
    let cols = dim("column")?;

    let mut data = Vec::with_capacity(rows * cols);
    for (line, tok) in tokens.by_ref() {
        let v: f64 = tok
            .parse()
            .map_err(|_| perr(line, format!("bad number {tok:?}")))?;
        data.push(v);
    }
    if data.len() != rows * cols {
        return Err(perr(
            0,
            format!("expected {} entries, found {}", rows * cols, data.len()),
        ));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

/// Signals are stored as single-column matrices.
pub fn write_vector(path: impl AsRef<Path>, v: &Vector) -> Result<()> {
    write_matrix(path, &Matrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vector> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("signal file must have 1 column, found {}", m.ncols()),
        });
    }
    Ok(Vector::from_column_slice(m.as_slice()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_wrong_entry_count() {
        let err = parse_matrix("2 2\n1 2 3\n", Path::new("m.mat")).unwrap_err();
        assert!(err.to_string().contains("expected 4 entries"));
    }

    #[test]
    fn skips_comments() {
        let m = parse_matrix("# header\n1 2\n# row\n0.5 -1\n", Path::new("m")).unwrap();
        assert_eq!(m, Matrix::from_row_slice(1, 2, &[0.5, -1.0]));
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(
            rows in 1usize..5,
            cols in 1usize..5,
            seed in proptest::collection::vec(-1e300f64..1e300, 25),
        ) {
            let m = Matrix::from_fn(rows, cols, |r, c| seed[r * 5 + c] * 1e-7);
            let back = parse_matrix(&matrix_to_string(&m), Path::new("p")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
