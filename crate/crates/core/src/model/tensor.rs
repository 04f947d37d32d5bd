//! Dense kernels over flat row-major buffers, with hand-written backward
//! passes. Everything is generic over `f32` (training) and `f64` (gradient
//! checks).

use std::fmt::Debug;

use num_traits::Float;

pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    /// `c = alpha · a · b + beta · c` with explicit strides.
    ///
    /// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn check(len: usize, rows: usize, cols: usize, rs: usize, cs: usize, what: &str) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * rs + (cols - 1) * cs;
        assert!(last < len, "{what}: {rows}x{cols} view with strides ({rs}, {cs}) exceeds buffer of {len}");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                check(a.len(), m, k, rsa, csa, "a");
                check(b.len(), k, n, rsb, csb, "b");
                check(c.len(), m, n, rsc, csc, "c");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three views were bounds-checked above and `c`
                // is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }

            fn of(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

pub fn c<T: Scalar>(x: f64) -> T {
    T::of(x)
}

/// `out (+)= x · w` for row-major `x: rows × n_in`, `w: n_in × n_out`.
pub fn matmul<T: Scalar>(x: &[T], w: &[T], out: &mut [T], rows: usize, n_in: usize, n_out: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(rows, n_in, n_out, T::one(), x, (n_in, 1), w, (n_out, 1), beta, out, (n_out, 1));
}

/// `dx (+)= dy · wᵀ`.
pub fn matmul_bt<T: Scalar>(dy: &[T], w: &[T], dx: &mut [T], rows: usize, n_in: usize, n_out: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(rows, n_out, n_in, T::one(), dy, (n_out, 1), w, (1, n_out), beta, dx, (n_in, 1));
}

/// `dw += xᵀ · dy`.
pub fn matmul_at_acc<T: Scalar>(x: &[T], dy: &[T], dw: &mut [T], rows: usize, n_in: usize, n_out: usize) {
    T::gemm_raw(n_in, rows, n_out, T::one(), x, (1, n_in), dy, (n_out, 1), T::one(), dw, (n_out, 1));
}

/// `y = x · w + b`.
pub fn linear<T: Scalar>(x: &[T], w: &[T], b: &[T], rows: usize, n_in: usize, n_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * n_out];
    for row in y.chunks_mut(n_out) {
        row.copy_from_slice(b);
    }
    matmul(x, w, &mut y, rows, n_in, n_out, true);
    y
}

/// Accumulates `dw`, `db` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    rows: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<T> {
    matmul_at_acc(x, dy, dw, rows, n_in, n_out);
    for row in dy.chunks(n_out) {
        for (g, d) in db.iter_mut().zip(row) {
            *g = *g + *d;
        }
    }
    let mut dx = vec![T::zero(); rows * n_in];
    matmul_bt(dy, w, &mut dx, rows, n_in, n_out, false);
    dx
}

/// Per-row normalization statistics kept for the backward pass.
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: f64, dim: usize) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / dim;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let n = c::<T>(dim as f64);
    for r in 0..rows {
        let xs = &x[r * dim..(r + 1) * dim];
        let mean = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + c(eps)).sqrt();
        inv_std.push(is);
        for j in 0..dim {
            let h = (xs[j] - mean) * is;
            xhat[r * dim + j] = h;
            y[r * dim + j] = h * gamma[j] + beta[j];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dim: usize,
) -> Vec<T> {
    let rows = dy.len() / dim;
    let mut dx = vec![T::zero(); dy.len()];
    let n = c::<T>(dim as f64);
    for r in 0..rows {
        let dys = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for j in 0..dim {
            dgamma[j] = dgamma[j] + dys[j] * xh[j];
            dbeta[j] = dbeta[j] + dys[j];
            let g = dys[j] * gamma[j];
            sum_g = sum_g + g;
            sum_gx = sum_gx + g * xh[j];
        }
        let is = cache.inv_std[r];
        for j in 0..dim {
            let g = dys[j] * gamma[j];
            dx[r * dim + j] = is * (g - sum_g / n - xh[j] * sum_gx / n);
        }
    }
    dx
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = c::<T>(0.5);
    let inner = c::<T>(GELU_K) * (x + c::<T>(0.044715) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = c::<T>(0.5);
    let inner = c::<T>(GELU_K) * (x + c::<T>(0.044715) * x * x * x);
    let t = inner.tanh();
    let dinner = c::<T>(GELU_K) * (T::one() + c::<T>(3.0 * 0.044715) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// In-place softmax over each row of length `n`.
pub fn softmax_rows<T: Scalar>(x: &mut [T], n: usize) {
    for row in x.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Inverted dropout mask: `0` with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut impl rand::Rng) -> Vec<T> {
    let keep = c::<T>(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()
}

pub fn add_in_place<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a = *a + *b;
    }
}

pub fn mul_in_place<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a = *a * *b;
    }
}
