//! Small shared linear-algebra helpers on top of `ndarray`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Dense symmetric eigendecomposition, eigenvalues sorted descending.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns, column
/// `i` paired with eigenvalue `i`. Uses the divide-and-conquer LAPACK driver,
/// which is several times faster than plain `dsyev` at the n ~ 4000 sizes the
/// kernel matrices reach.
pub fn sym_eig_desc(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
            context: "sym_eig_desc",
        });
    }
    // A symmetric row-major matrix reads identically as column-major, so the
    // buffer can go to LAPACK as-is.
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut vals = vec![0.0f64; n];
    let ni = n as i32;
    let mut info: i32 = 0;

    // Workspace query.
    let mut work_len = [0.0f64; 1];
    let mut iwork_len = [0i32; 1];
    unsafe {
        lapack_sys::dsyevd_(
            &(b'V' as std::ffi::c_char),
            &(b'L' as std::ffi::c_char),
            &ni,
            buf.as_mut_ptr(),
            &ni,
            vals.as_mut_ptr(),
            work_len.as_mut_ptr(),
            &(-1i32),
            iwork_len.as_mut_ptr(),
            &(-1i32),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("dsyevd workspace query failed: info={info}")));
    }
    let lwork = work_len[0] as i32;
    let liwork = iwork_len[0];
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &(b'V' as std::ffi::c_char),
            &(b'L' as std::ffi::c_char),
            &ni,
            buf.as_mut_ptr(),
            &ni,
            vals.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("dsyevd failed to converge: info={info}")));
    }

    // LAPACK returns ascending eigenvalues with eigenvector k in column-major
    // column k, i.e. buf[k*n..(k+1)*n]. Flip to descending.
    let mut vals_d = Array1::zeros(n);
    let mut vecs_d = Array2::zeros((n, n));
    for k in 0..n {
        let src = n - 1 - k;
        vals_d[k] = vals[src];
        for i in 0..n {
            vecs_d[[i, k]] = buf[src * n + i];
        }
    }
    Ok((vals_d, vecs_d))
}

/// Matrix-vector product computed row by row.
///
/// Single-threaded and free of BLAS threading, so the result depends only on
/// the operand values; used in the reservoir recursion where bitwise
/// reproducibility across schedules matters.
pub fn matvec(a: &ArrayView2<f64>, x: &ArrayView1<f64>) -> Array1<f64> {
    let mut y = Array1::zeros(a.nrows());
    for (i, row) in a.rows().into_iter().enumerate() {
        y[i] = row.dot(x);
    }
    y
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
///
/// Meant for the handful-of-unknowns systems in local linear fits and test
/// oracles; use the LAPACK-backed paths for anything big.
pub fn solve_small(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
            context: "solve_small",
        });
    }
    let mut m = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[[r, col]].abs() > m[[piv, col]].abs() {
                piv = r;
            }
        }
        if m[[piv, col]].abs() < 1e-300 {
            return Err(Error::Linalg("singular matrix in solve_small".into()));
        }
        if piv != col {
            for c in 0..n {
                m.swap([col, c], [piv, c]);
            }
            rhs.swap(col, piv);
        }
        for r in col + 1..n {
            let factor = m[[r, col]] / m[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[[r, c]] -= factor * m[[col, c]];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = Array1::zeros(n);
    for r in (0..n).rev() {
        let mut s = rhs[r];
        for c in r + 1..n {
            s -= m[[r, c]] * x[c];
        }
        x[r] = s / m[[r, r]];
    }
    Ok(x)
}

/// Euclidean norm.
pub fn norm2(x: &ArrayView1<f64>) -> f64 {
    x.dot(x).sqrt()
}

/// `max_out` indices evenly spread over `0..n` (all of them when `n <= max_out`).
pub fn evenly_spaced_indices(n: usize, max_out: usize) -> Vec<usize> {
    if n <= max_out {
        return (0..n).collect();
    }
    (0..max_out).map(|i| i * n / max_out).collect()
}
