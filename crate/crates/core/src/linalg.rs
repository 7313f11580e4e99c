//! Small dense helpers shared by the solver and the simulator.

use nalgebra::{DMatrix, DVector};

/// Pivot magnitude below which a linear system is treated as singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-12;

/// Raised when elimination meets a pivot column with no usable entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    pub column: usize,
    pub pivot: f64,
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, pivot_tol: f64) -> Result<DVector<f64>, Singular> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "solve: matrix must be square");
    assert_eq!(b.len(), n, "solve: rhs length mismatch");

    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let (piv_row, piv) = (col..n)
            .map(|i| (i, m[(i, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv < pivot_tol {
            return Err(Singular { column: col, pivot: piv });
        }
        if piv_row != col {
            m.swap_rows(piv_row, col);
            x.swap_rows(piv_row, col);
        }
        let d = m[(col, col)];
        for i in col + 1..n {
            let factor = m[(i, col)] / d;
            if factor == 0.0 {
                continue;
            }
            m[(i, col)] = 0.0;
            for j in col + 1..n {
                m[(i, j)] -= factor * m[(col, j)];
            }
            x[i] -= factor * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= m[(i, j)] * x[j];
        }
        x[i] = acc / m[(i, i)];
    }
    Ok(x)
}

/// Sign with `sign(0) = 0` (unlike `f64::signum`, which maps `+0.0` to 1).
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Largest entry, or `-inf` for an empty slice.
pub fn max_entry<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
