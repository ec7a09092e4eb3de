//! Dense linear algebra used by the spectral checks: nonsymmetric
//! eigendecomposition via LAPACK `dgeev` and a Padé scaling-and-squaring
//! matrix exponential.

use ndarray::Array2;
use num_complex::Complex64;
use std::os::raw::c_int;

use crate::error::{Error, Result};

#[link(name = "lapack")]
extern "C" {
    fn dgeev_(
        jobvl: *const u8,
        jobvr: *const u8,
        n: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        wr: *mut f64,
        wi: *mut f64,
        vl: *mut f64,
        ldvl: *const c_int,
        vr: *mut f64,
        ldvr: *const c_int,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
    );

    fn dgesv_(
        n: *const c_int,
        nrhs: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        ipiv: *mut c_int,
        b: *mut f64,
        ldb: *const c_int,
        info: *mut c_int,
    );
}

pub(crate) struct EigenDecomposition {
    pub values: Vec<Complex64>,
    /// Right eigenvectors, column `j` belongs to `values[j]`.
    pub vectors: Array2<Complex64>,
}

/// Reference LAPACK is compiled with `-frecursive` (automatic arrays on the
/// stack), which overflows the 2 MiB default of test threads at N ≳ 256.
/// LAPACK entry points therefore run on a dedicated wide-stack thread.
fn with_big_stack<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .stack_size(64 << 20)
            .spawn_scoped(scope, f)
            .expect("spawn lapack thread")
            .join()
            .expect("lapack thread panicked")
    })
}

/// Eigenvalues and right eigenvectors of a real dense matrix.
pub(crate) fn eig(a: &Array2<f64>) -> Result<EigenDecomposition> {
    with_big_stack(|| eig_inner(a))
}

fn eig_inner(a: &Array2<f64>) -> Result<EigenDecomposition> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let ni = n as c_int;

    // LAPACK is column-major; A^T in row-major memory is A in column-major.
    let mut a_cm = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            a_cm[j * n + i] = a[[i, j]];
        }
    }

    let mut wr = vec![0.0f64; n];
    let mut wi = vec![0.0f64; n];
    let mut vr = vec![0.0f64; n * n];
    let mut info: c_int = 0;

    // workspace query
    let mut work_query = [0.0f64];
    let minus_one: c_int = -1;
    unsafe {
        dgeev_(
            b"N".as_ptr(),
            b"V".as_ptr(),
            &ni,
            a_cm.as_mut_ptr(),
            &ni,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            std::ptr::null_mut(),
            &ni,
            vr.as_mut_ptr(),
            &ni,
            work_query.as_mut_ptr(),
            &minus_one,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack(info));
    }
    let lwork = work_query[0] as c_int;
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dgeev_(
            b"N".as_ptr(),
            b"V".as_ptr(),
            &ni,
            a_cm.as_mut_ptr(),
            &ni,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            std::ptr::null_mut(),
            &ni,
            vr.as_mut_ptr(),
            &ni,
            work.as_mut_ptr(),
            &lwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack(info));
    }

    let values: Vec<Complex64> = wr
        .iter()
        .zip(&wi)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();

    // Unpack dgeev's packed real/imaginary eigenvector pairs.
    let mut vectors = Array2::<Complex64>::zeros((n, n));
    let mut j = 0;
    while j < n {
        if wi[j] == 0.0 {
            for i in 0..n {
                vectors[[i, j]] = Complex64::new(vr[j * n + i], 0.0);
            }
            j += 1;
        } else {
            for i in 0..n {
                let re = vr[j * n + i];
                let im = vr[(j + 1) * n + i];
                vectors[[i, j]] = Complex64::new(re, im);
                vectors[[i, j + 1]] = Complex64::new(re, -im);
            }
            j += 2;
        }
    }

    Ok(EigenDecomposition { values, vectors })
}

/// Solve `A X = B` in place via `dgesv`; returns `X` (same shape as `B`).
pub(crate) fn solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    with_big_stack(|| solve_inner(a, b))
}

fn solve_inner(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.nrows());
    let nrhs = b.ncols();
    let ni = n as c_int;
    let nrhsi = nrhs as c_int;

    let mut a_cm = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            a_cm[j * n + i] = a[[i, j]];
        }
    }
    let mut b_cm = vec![0.0f64; n * nrhs];
    for i in 0..n {
        for j in 0..nrhs {
            b_cm[j * n + i] = b[[i, j]];
        }
    }
    let mut ipiv = vec![0 as c_int; n];
    let mut info: c_int = 0;
    unsafe {
        dgesv_(
            &ni,
            &nrhsi,
            a_cm.as_mut_ptr(),
            &ni,
            ipiv.as_mut_ptr(),
            b_cm.as_mut_ptr(),
            &ni,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack(info));
    }
    let mut x = Array2::<f64>::zeros((n, nrhs));
    for i in 0..n {
        for j in 0..nrhs {
            x[[i, j]] = b_cm[j * n + i];
        }
    }
    Ok(x)
}

/// Matrix exponential by Padé(13) with scaling and squaring (Higham 2005).
pub(crate) fn expm(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let norm = one_norm(a);
    let theta13 = 5.371_920_351_148_152;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a.mapv(|v| v / 2f64.powi(s));

    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];

    let id = Array2::<f64>::eye(n);
    let a2 = a_scaled.dot(&a_scaled);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);

    let u_inner = a6.mapv(|v| B[13] * v) + a4.mapv(|v| B[11] * v) + a2.mapv(|v| B[9] * v);
    let u = a_scaled.dot(
        &(a6.dot(&u_inner)
            + a6.mapv(|v| B[7] * v)
            + a4.mapv(|v| B[5] * v)
            + a2.mapv(|v| B[3] * v)
            + id.mapv(|v| B[1] * v)),
    );
    let v_inner = a6.mapv(|v| B[12] * v) + a4.mapv(|v| B[10] * v) + a2.mapv(|v| B[8] * v);
    let v = a6.dot(&v_inner)
        + a6.mapv(|x| B[6] * x)
        + a4.mapv(|x| B[4] * x)
        + a2.mapv(|x| B[2] * x)
        + id.mapv(|x| B[0] * x);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut f = solve(&lhs, &rhs)?;
    for _ in 0..s {
        f = f.dot(&f);
    }
    Ok(f)
}

fn one_norm(a: &Array2<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let mut col = 0.0;
        for i in 0..a.nrows() {
            col += a[[i, j]].abs();
        }
        best = best.max(col);
    }
    best
}
