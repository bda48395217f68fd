//! Convolution kernels on square HWC feature maps, stride 1, zero padding.
//!
//! Weights are stored `[tap][cin][cout]`, which is exactly the row-major
//! `(9 cin) x cout` matrix that multiplies an im2col patch matrix, so both
//! passes of the 3×3 convolution reduce to one matrix product each.

use num_traits::Float;

pub trait Scalar: Float + Send + Sync + std::iter::Sum + std::fmt::Debug + 'static {
    /// `C <- alpha A B + beta C` for strided `m x k` and `k x n` operands.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: &mut [Self],
        rsc: isize,
    );
}

macro_rules! scalar_impl {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: (&[$t], isize, isize),
                b: (&[$t], isize, isize),
                beta: $t,
                c: &mut [$t],
                rsc: isize,
            ) {
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
                    }
                };
                assert!(a.0.len() >= span(m, k, a.1, a.2));
                assert!(b.0.len() >= span(k, n, b.1, b.2));
                assert!(c.len() >= span(m, n, rsc, 1));
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe {
                    $f(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta, c.as_mut_ptr(), rsc, 1)
                }
            }
        }
    };
}

scalar_impl!(f32, matrixmultiply::sgemm);
scalar_impl!(f64, matrixmultiply::dgemm);

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&a, &b) in a.iter().zip(b) {
        s = s + a * b;
    }
    s
}

/// `(n n) x (9 cin)` matrix whose row `p` holds the zero-padded 3×3
/// neighbourhood of pixel `p`, tap-major.
fn im2col<T: Scalar>(input: &[T], n: usize, cin: usize) -> Vec<T> {
    let k = 9 * cin;
    let mut cols = vec![T::zero(); n * n * k];
    for y in 0..n {
        for x in 0..n {
            let row = &mut cols[(y * n + x) * k..(y * n + x + 1) * k];
            for dy in 0..3 {
                let Some(iy) = (y + dy).checked_sub(1).filter(|&v| v < n) else { continue };
                for dx in 0..3 {
                    let Some(ix) = (x + dx).checked_sub(1).filter(|&v| v < n) else { continue };
                    let tap = dy * 3 + dx;
                    row[tap * cin..(tap + 1) * cin]
                        .copy_from_slice(&input[(iy * n + ix) * cin..(iy * n + ix + 1) * cin]);
                }
            }
        }
    }
    cols
}

pub fn conv3x3_forward<T: Scalar>(input: &[T], n: usize, cin: usize, cout: usize, w: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(input.len(), n * n * cin);
    debug_assert_eq!(out.len(), n * n * cout);
    for px in out.chunks_exact_mut(cout) {
        px.copy_from_slice(b);
    }
    let k = 9 * cin;
    let cols = im2col(input, n, cin);
    T::gemm(n * n, k, cout, (&cols, k as isize, 1), (w, cout as isize, 1), T::one(), out, cout as isize);
}

/// Accumulates into `gw`, `gb` and, when given, `gin`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Scalar>(
    input: &[T],
    n: usize,
    cin: usize,
    cout: usize,
    w: &[T],
    gout: &[T],
    gin: Option<&mut [T]>,
    gw: &mut [T],
    gb: &mut [T],
) {
    for g in gout.chunks_exact(cout) {
        axpy(gb, T::one(), g);
    }
    let k = 9 * cin;
    let px = n * n;
    let cols = im2col(input, n, cin);
    // gw += cols^T gout
    T::gemm(k, px, cout, (&cols, 1, k as isize), (gout, cout as isize, 1), T::one(), gw, cout as isize);
    let Some(gin) = gin else { return };
    // gcols = gout w^T, then scattered back onto the input pixels
    let mut gcols = vec![T::zero(); px * k];
    T::gemm(px, cout, k, (gout, cout as isize, 1), (w, 1, cout as isize), T::zero(), &mut gcols, k as isize);
    for y in 0..n {
        for x in 0..n {
            let row = &gcols[(y * n + x) * k..(y * n + x + 1) * k];
            for dy in 0..3 {
                let Some(iy) = (y + dy).checked_sub(1).filter(|&v| v < n) else { continue };
                for dx in 0..3 {
                    let Some(ix) = (x + dx).checked_sub(1).filter(|&v| v < n) else { continue };
                    let tap = dy * 3 + dx;
                    axpy(
                        &mut gin[(iy * n + ix) * cin..(iy * n + ix + 1) * cin],
                        T::one(),
                        &row[tap * cin..(tap + 1) * cin],
                    );
                }
            }
        }
    }
}

pub fn conv1x1_forward<T: Scalar>(input: &[T], cin: usize, cout: usize, w: &[T], b: &[T], out: &mut [T]) {
    for (src, dst) in input.chunks_exact(cin).zip(out.chunks_exact_mut(cout)) {
        dst.copy_from_slice(b);
        for (ci, &v) in src.iter().enumerate() {
            axpy(dst, v, &w[ci * cout..(ci + 1) * cout]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv1x1_backward<T: Scalar>(
    input: &[T],
    cin: usize,
    cout: usize,
    w: &[T],
    gout: &[T],
    gin: &mut [T],
    gw: &mut [T],
    gb: &mut [T],
) {
    for ((src, g), gi) in input.chunks_exact(cin).zip(gout.chunks_exact(cout)).zip(gin.chunks_exact_mut(cin)) {
        axpy(gb, T::one(), g);
        for ci in 0..cin {
            let row = ci * cout..(ci + 1) * cout;
            axpy(&mut gw[row.clone()], src[ci], g);
            gi[ci] = gi[ci] + dot(&w[row], g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn naive(input: &[f64], n: usize, cin: usize, cout: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n * n * cout];
        for y in 0..n as isize {
            for x in 0..n as isize {
                for co in 0..cout {
                    let mut s = b[co];
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let (iy, ix) = (y + dy, x + dx);
                            if iy < 0 || ix < 0 || iy >= n as isize || ix >= n as isize {
                                continue;
                            }
                            let tap = ((dy + 1) * 3 + dx + 1) as usize;
                            for ci in 0..cin {
                                s +=
                                    input[(iy as usize * n + ix as usize) * cin + ci] * w[(tap * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[(y as usize * n + x as usize) * cout + co] = s;
                }
            }
        }
        out
    }

    fn seq(len: usize, k: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 * k).sin() * 10.0).round() / 10.0).collect()
    }

    #[test]
    fn matches_direct_definition() {
        for (n, cin, cout) in [(1, 2, 3), (2, 1, 1), (5, 3, 4)] {
            let input = seq(n * n * cin, 0.7);
            let w = seq(9 * cin * cout, 1.3);
            let b = seq(cout, 2.1);
            let mut out = vec![0.0; n * n * cout];
            conv3x3_forward(&input, n, cin, cout, &w, &b, &mut out);
            let want = naive(&input, n, cin, cout, &w, &b);
            assert!(out.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x), g> is linear in x and w, so the gradients must reproduce it
        let (n, cin, cout) = (4, 2, 3);
        let input = seq(n * n * cin, 0.3);
        let w = seq(9 * cin * cout, 0.9);
        let zero_b = vec![0.0; cout];
        let g = seq(n * n * cout, 1.7);
        let mut out = vec![0.0; n * n * cout];
        conv3x3_forward(&input, n, cin, cout, &w, &zero_b, &mut out);
        let inner: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut gin = vec![0.0; input.len()];
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; cout];
        conv3x3_backward(&input, n, cin, cout, &w, &g, Some(&mut gin), &mut gw, &mut gb);
        let via_x: f64 = gin.iter().zip(&input).map(|(a, b)| a * b).sum();
        let via_w: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((inner - via_x).abs() < 1e-9);
        assert!((inner - via_w).abs() < 1e-9);
    }
}
