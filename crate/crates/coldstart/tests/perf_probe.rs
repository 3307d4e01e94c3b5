use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use std::time::Instant;

#[test]
#[ignore]
fn probe() {
    let n = 1024usize;
    let k = 8000usize;
    let a = Array2::from_shape_fn((n, k), |(i, j)| ((i * 31 + j * 17) % 97) as f64 / 97.0);
    let t = Instant::now();
    let g = a.dot(&a.t());
    let dt = t.elapsed().as_secs_f64();
    println!("gemm {}x{}x{}: {:.2}s -> {:.1} GFLOPs", n, k, n, dt, 2.0 * (n * n * k) as f64 / dt / 1e9);
    let t = Instant::now();
    let m = 2000usize;
    let s = Array2::from_shape_fn((m, m), |(i, j)| ((i * 13 + j * 13 + i * j) % 53) as f64 / 53.0);
    let s = &s + &s.t();
    let (_vals, _vecs) = s.eigh(UPLO::Lower).unwrap();
    println!("eigh {m}x{m}: {:.2}s", t.elapsed().as_secs_f64());
    let _ = g;
}

#[test]
#[ignore]
fn probe_dsyevd() {
    let m = 2000usize;
    let s = Array2::from_shape_fn((m, m), |(i, j)| ((i * 13 + j * 13 + i * j) % 53) as f64 / 53.0);
    let s = &s + &s.t();
    let t = Instant::now();
    let (vals, vecs) = coldstart::linalg::sym_eig_desc(&s).unwrap();
    println!("dsyevd {m}x{m}: {:.2}s", t.elapsed().as_secs_f64());
    let (vals2, _) = s.eigh(UPLO::Lower).unwrap();
    let mut max_diff = 0.0f64;
    for i in 0..m {
        max_diff = max_diff.max((vals[i] - vals2[m - 1 - i]).abs());
    }
    println!("max eigenvalue diff vs dsyev: {max_diff:.3e}");
    let _ = vecs;
}
