//! Small dense kernels on row-major storage.

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// In-place lower Cholesky factorization of the symmetric `n x n` row-major
/// matrix `a` (only the lower triangle is read). The strict upper triangle is
/// zeroed. Returns `false` if a non-positive pivot is met.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let (head, tail) = a.split_at_mut(i * n);
            let row_i = &tail[..n];
            let s = if j == i {
                row_i[i] - dot(&row_i[..i], &row_i[..i])
            } else {
                let row_j = &head[j * n..j * n + n];
                (row_i[j] - dot(&row_i[..j], &row_j[..j])) / row_j[j]
            };
            if j == i {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                tail[i] = s.sqrt();
            } else {
                tail[j] = s;
            }
        }
        for v in &mut a[i * n + i + 1..(i + 1) * n] {
            *v = 0.0;
        }
    }
    true
}

/// Solve `L x = b` in place for lower-triangular row-major `L` with row stride `stride`.
#[inline]
pub(crate) fn forward_solve(l: &[f64], stride: usize, n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * stride..i * stride + i];
        let s = b[i] - dot(row, &b[..i]);
        b[i] = s / l[i * stride + i];
    }
}

/// [`forward_solve`] on four right-hand sides stored back to back in `b`
/// (each of length `n`). Every solution is bit-identical to the single solve.
pub(crate) fn forward_solve4(l: &[f64], stride: usize, n: usize, b: &mut [f64]) {
    debug_assert_eq!(b.len(), 4 * n);
    let (b0, rest) = b.split_at_mut(n);
    let (b1, rest) = rest.split_at_mut(n);
    let (b2, b3) = rest.split_at_mut(n);
    for i in 0..n {
        let row = &l[i * stride..i * stride + i];
        let chunks = i / 4;
        let mut acc = [[0.0f64; 4]; 4];
        for c in 0..chunks {
            let k = 4 * c;
            let r = [row[k], row[k + 1], row[k + 2], row[k + 3]];
            for (a, v) in acc.iter_mut().zip([&*b0, &*b1, &*b2, &*b3]) {
                a[0] += r[0] * v[k];
                a[1] += r[1] * v[k + 1];
                a[2] += r[2] * v[k + 2];
                a[3] += r[3] * v[k + 3];
            }
        }
        let d = l[i * stride + i];
        for (a, v) in acc.iter().zip([&mut *b0, &mut *b1, &mut *b2, &mut *b3]) {
            let mut tail = 0.0;
            for k in 4 * chunks..i {
                tail += row[k] * v[k];
            }
            let s = v[i] - ((a[0] + a[1]) + (a[2] + a[3]) + tail);
            v[i] = s / d;
        }
    }
}

/// Solve `L^T x = b` in place.
pub(crate) fn backward_solve_transposed(l: &[f64], stride: usize, n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * stride + i] * b[k];
        }
        b[i] = s / l[i * stride + i];
    }
}

/// Inner products of rows of the row-major `n x m` matrix `w`:
/// `out[r * cols.len() + c] = w[rows[r]] . w[cols[c]]`.
///
/// Columns are packed in groups of 4 (k-major) so a 4 x 4 block of products
/// accumulates in registers. `pack` is scratch space.
pub(crate) fn gram_tile(w: &[f64], m: usize, rows: &[usize], cols: &[usize], out: &mut [f64], pack: &mut Vec<f64>) {
    let nc = cols.len();
    let groups = nc.div_ceil(4);
    pack.clear();
    pack.resize(groups * m * 4, 0.0);
    for (g, chunk) in cols.chunks(4).enumerate() {
        let dst = &mut pack[g * m * 4..(g + 1) * m * 4];
        for (c, &j) in chunk.iter().enumerate() {
            for (k, v) in w[j * m..(j + 1) * m].iter().enumerate() {
                dst[k * 4 + c] = *v;
            }
        }
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the feature was detected at runtime.
        unsafe { gram_blocks_avx(w, m, rows, nc, pack, out) };
        return;
    }
    gram_blocks(w, m, rows, nc, pack, out);
}

/// Same arithmetic as [`gram_blocks`] compiled for wider vectors. No fused
/// multiply-add, so results are bit-identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn gram_blocks_avx(w: &[f64], m: usize, rows: &[usize], nc: usize, pack: &[f64], out: &mut [f64]) {
    gram_blocks(w, m, rows, nc, pack, out)
}

#[inline(always)]
fn gram_blocks(w: &[f64], m: usize, rows: &[usize], nc: usize, pack: &[f64], out: &mut [f64]) {
    let groups = nc.div_ceil(4);
    for (rb, rchunk) in rows.chunks(4).enumerate() {
        let pick = |r: usize| {
            let i = rchunk[r.min(rchunk.len() - 1)];
            &w[i * m..(i + 1) * m]
        };
        let (a0, a1, a2, a3) = (pick(0), pick(1), pick(2), pick(3));
        for g in 0..groups {
            let bp = &pack[g * m * 4..(g + 1) * m * 4];
            let mut acc = [[0.0f64; 4]; 4];
            for (k, b) in bp.chunks_exact(4).enumerate() {
                let x = [a0[k], a1[k], a2[k], a3[k]];
                for r in 0..4 {
                    for c in 0..4 {
                        acc[r][c] += x[r] * b[c];
                    }
                }
            }
            let c0 = g * 4;
            let cn = (nc - c0).min(4);
            for (r, row) in acc.iter().enumerate().take(rchunk.len()) {
                let o = (rb * 4 + r) * nc + c0;
                out[o..o + cn].copy_from_slice(&row[..cn]);
            }
        }
    }
}
