//! Small blocked f64 matrix kernels backing the convolution operators.
//!
//! Three accumulating products cover forward and backward convolution once
//! images are lowered to column matrices: `C += A*B`, `C += A*B^T`, and
//! `C += A^T*B`. All matrices are dense row-major. On x86_64 the kernels are
//! recompiled with AVX2+FMA enabled and selected at runtime; both paths run
//! the identical loop nest, so results are bitwise reproducible on a given
//! machine.

/// Column-block width; one output row block (8 KiB) stays in L1.
const NB: usize = 1024;

macro_rules! dispatch {
    ($generic:ident, $accel:ident, ($($arg:expr),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2")
                && std::arch::is_x86_feature_detected!("fma")
            {
                // Safe: feature presence checked above.
                return unsafe { $accel($($arg),*) };
            }
        }
        $generic($($arg),*)
    }};
}

/// `c += a * b` with `a: m x k`, `b: k x n`, `c: m x n`.
pub fn gemm(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    dispatch!(gemm_impl, gemm_avx, (c, a, b, m, k, n))
}

/// `c += a * b^T` with `a: m x n`, `b: l x n`, `c: m x l`.
pub fn gemm_abt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, l: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), l * n);
    debug_assert_eq!(c.len(), m * l);
    dispatch!(gemm_abt_impl, gemm_abt_avx, (c, a, b, m, n, l))
}

/// `c += a^T * b` with `a: m x k`, `b: m x n`, `c: k x n`.
pub fn gemm_atb(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    dispatch!(gemm_atb_impl, gemm_atb_avx, (c, a, b, m, k, n))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_avx(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    gemm_impl(c, a, b, m, k, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_abt_avx(c: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, l: usize) {
    gemm_abt_impl(c, a, b, m, n, l)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_atb_avx(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    gemm_atb_impl(c, a, b, m, k, n)
}

/// Four simultaneous axpy updates sharing one streamed `b` row.
#[inline(always)]
fn axpy4(
    c0: &mut [f64],
    c1: &mut [f64],
    c2: &mut [f64],
    c3: &mut [f64],
    coef: [f64; 4],
    b: &[f64],
) {
    let nb = b.len();
    let c0 = &mut c0[..nb];
    let c1 = &mut c1[..nb];
    let c2 = &mut c2[..nb];
    let c3 = &mut c3[..nb];
    for j in 0..nb {
        let bj = b[j];
        c0[j] += coef[0] * bj;
        c1[j] += coef[1] * bj;
        c2[j] += coef[2] * bj;
        c3[j] += coef[3] * bj;
    }
}

#[inline(always)]
fn axpy1(c: &mut [f64], coef: f64, b: &[f64]) {
    let nb = b.len();
    let c = &mut c[..nb];
    for j in 0..nb {
        c[j] += coef * b[j];
    }
}

/// Splits a buffer holding four consecutive rows of width `n` into the
/// `[jb, jb+nb)` column slice of each row.
#[inline(always)]
fn split4(
    rows: &mut [f64],
    n: usize,
    jb: usize,
    nb: usize,
) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
    let (r0, rest) = rows.split_at_mut(n);
    let (r1, rest) = rest.split_at_mut(n);
    let (r2, r3) = rest.split_at_mut(n);
    (
        &mut r0[jb..jb + nb],
        &mut r1[jb..jb + nb],
        &mut r2[jb..jb + nb],
        &mut r3[jb..jb + nb],
    )
}

#[inline(always)]
fn gemm_impl(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let mut jb = 0;
    while jb < n {
        let nb = NB.min(n - jb);
        let mut i = 0;
        while i + 4 <= m {
            let (c0, c1, c2, c3) = split4(&mut c[i * n..(i + 4) * n], n, jb, nb);
            for kk in 0..k {
                let coef = [
                    a[i * k + kk],
                    a[(i + 1) * k + kk],
                    a[(i + 2) * k + kk],
                    a[(i + 3) * k + kk],
                ];
                let brow = &b[kk * n + jb..kk * n + jb + nb];
                axpy4(c0, c1, c2, c3, coef, brow);
            }
            i += 4;
        }
        while i < m {
            let crow = &mut c[i * n + jb..i * n + jb + nb];
            for kk in 0..k {
                let brow = &b[kk * n + jb..kk * n + jb + nb];
                axpy1(crow, a[i * k + kk], brow);
            }
            i += 1;
        }
        jb += nb;
    }
}

#[inline(always)]
fn gemm_atb_impl(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let mut jb = 0;
    while jb < n {
        let nb = NB.min(n - jb);
        let mut kk = 0;
        while kk + 4 <= k {
            let (c0, c1, c2, c3) = split4(&mut c[kk * n..(kk + 4) * n], n, jb, nb);
            for i in 0..m {
                let arow = &a[i * k + kk..i * k + kk + 4];
                let coef = [arow[0], arow[1], arow[2], arow[3]];
                let brow = &b[i * n + jb..i * n + jb + nb];
                axpy4(c0, c1, c2, c3, coef, brow);
            }
            kk += 4;
        }
        while kk < k {
            let crow = &mut c[kk * n + jb..kk * n + jb + nb];
            for i in 0..m {
                let brow = &b[i * n + jb..i * n + jb + nb];
                axpy1(crow, a[i * k + kk], brow);
            }
            kk += 1;
        }
        jb += nb;
    }
}

/// Four dot products of `a` against consecutive `b` rows, accumulated in
/// explicit 4-lane partial sums so the reduction vectorizes.
#[inline(always)]
fn dot4(a: &[f64], b0: &[f64], b1: &[f64], b2: &[f64], b3: &[f64]) -> [f64; 4] {
    let n = a.len();
    let mut s0 = [0.0f64; 4];
    let mut s1 = [0.0f64; 4];
    let mut s2 = [0.0f64; 4];
    let mut s3 = [0.0f64; 4];
    let bound = n - n % 4;
    let mut j = 0;
    while j < bound {
        for t in 0..4 {
            let aj = a[j + t];
            s0[t] += aj * b0[j + t];
            s1[t] += aj * b1[j + t];
            s2[t] += aj * b2[j + t];
            s3[t] += aj * b3[j + t];
        }
        j += 4;
    }
    let mut out = [
        s0[0] + s0[1] + s0[2] + s0[3],
        s1[0] + s1[1] + s1[2] + s1[3],
        s2[0] + s2[1] + s2[2] + s2[3],
        s3[0] + s3[1] + s3[2] + s3[3],
    ];
    while j < n {
        out[0] += a[j] * b0[j];
        out[1] += a[j] * b1[j];
        out[2] += a[j] * b2[j];
        out[3] += a[j] * b3[j];
        j += 1;
    }
    out
}

#[inline(always)]
fn dot1(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = [0.0f64; 4];
    let bound = n - n % 4;
    let mut j = 0;
    while j < bound {
        for t in 0..4 {
            s[t] += a[j + t] * b[j + t];
        }
        j += 4;
    }
    let mut out = s[0] + s[1] + s[2] + s[3];
    while j < n {
        out += a[j] * b[j];
        j += 1;
    }
    out
}

#[inline(always)]
fn gemm_abt_impl(c: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, l: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * l..(i + 1) * l];
        let mut lb = 0;
        while lb + 4 <= l {
            let d = dot4(
                arow,
                &b[lb * n..(lb + 1) * n],
                &b[(lb + 1) * n..(lb + 2) * n],
                &b[(lb + 2) * n..(lb + 3) * n],
                &b[(lb + 3) * n..(lb + 4) * n],
            );
            crow[lb] += d[0];
            crow[lb + 1] += d[1];
            crow[lb + 2] += d[2];
            crow[lb + 3] += d[3];
            lb += 4;
        }
        while lb < l {
            crow[lb] += dot1(arow, &b[lb * n..(lb + 1) * n]);
            lb += 1;
        }
    }
}
