//! Piecewise-cubic interpolation (Akima, with natural-cubic and linear
//! fallbacks for short knot vectors) and golden-section minimization.

use super::ScalingError;

/// Cubic pieces `y_i + b·t + c·t² + d·t³` with `t = x - x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    xs: Vec<f64>,
    coef: Vec<[f64; 4]>,
}

impl Interpolant {
    /// Akima for five or more knots, natural cubic for three or four,
    /// linear for two.
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self, ScalingError> {
        check(xs, ys)?;
        match xs.len() {
            2 => Ok(Self::linear(xs, ys)),
            3 | 4 => Ok(Self::natural_cubic(xs, ys)),
            _ => Ok(Self::akima(xs, ys)),
        }
    }

    fn linear(xs: &[f64], ys: &[f64]) -> Self {
        let coef = (0..xs.len() - 1).map(|i| [ys[i], (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]), 0.0, 0.0]).collect();
        Interpolant { xs: xs.to_vec(), coef }
    }

    fn natural_cubic(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        // Thomas algorithm for the interior second derivatives.
        let mut m = vec![0.0; n];
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for j in 0..k {
            let i = j + 1;
            diag[j] = 2.0 * (h[i - 1] + h[i]);
            rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
        }
        for j in 1..k {
            let w = h[j] / diag[j - 1];
            diag[j] -= w * h[j];
            rhs[j] -= w * rhs[j - 1];
        }
        for j in (0..k).rev() {
            let upper = if j + 1 < k { h[j + 1] * m[j + 2] } else { 0.0 };
            m[j + 1] = (rhs[j] - upper) / diag[j];
        }
        let coef = (0..n - 1)
            .map(|i| {
                let hi = h[i];
                [
                    ys[i],
                    (ys[i + 1] - ys[i]) / hi - hi * (2.0 * m[i] + m[i + 1]) / 6.0,
                    m[i] / 2.0,
                    (m[i + 1] - m[i]) / (6.0 * hi),
                ]
            })
            .collect();
        Interpolant { xs: xs.to_vec(), coef }
    }

    fn akima(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        // Secant slopes padded with two extrapolated values on each side.
        let mut m = vec![0.0; n + 3];
        for i in 0..n - 1 {
            m[i + 2] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        }
        m[1] = 2.0 * m[2] - m[3];
        m[0] = 2.0 * m[1] - m[2];
        m[n + 1] = 2.0 * m[n] - m[n - 1];
        m[n + 2] = 2.0 * m[n + 1] - m[n];
        let t: Vec<f64> = (0..n)
            .map(|i| {
                let w1 = (m[i + 3] - m[i + 2]).abs();
                let w2 = (m[i + 1] - m[i]).abs();
                if w1 + w2 == 0.0 {
                    0.5 * (m[i + 1] + m[i + 2])
                } else {
                    (w1 * m[i + 1] + w2 * m[i + 2]) / (w1 + w2)
                }
            })
            .collect();
        let coef = (0..n - 1)
            .map(|i| {
                let h = xs[i + 1] - xs[i];
                let s = m[i + 2];
                [ys[i], t[i], (3.0 * s - 2.0 * t[i] - t[i + 1]) / h, (t[i] + t[i + 1] - 2.0 * s) / (h * h)]
            })
            .collect();
        Interpolant { xs: xs.to_vec(), coef }
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    /// Evaluates the interpolant; outside the knots the end pieces extend.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.xs.partition_point(|&k| k <= x).saturating_sub(1).min(self.coef.len() - 1);
        let t = x - self.xs[i];
        let [a, b, c, d] = self.coef[i];
        a + t * (b + t * (c + t * d))
    }
}

fn check(xs: &[f64], ys: &[f64]) -> Result<(), ScalingError> {
    if xs.len() != ys.len() {
        return Err(ScalingError::Length(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(ScalingError::TooFewPoints(xs.len()));
    }
    if let Some(i) = xs.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(ScalingError::Knots(i + 1));
    }
    Ok(())
}

/// Minimizer of `f` on `[lo, hi]` to within `tol`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // Endpoints win if the interior search drifted against a boundary.
    [lo, mid, hi].into_iter().min_by(|x, y| f(*x).total_cmp(&f(*y))).expect("three candidates")
}
