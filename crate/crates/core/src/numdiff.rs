//! Central finite differences used as the fallback for missing derivatives.
//!
//! First derivatives use the step `cbrt(eps) * (1 + |x_j|)`; second
//! derivatives use nested central differences with `eps^(1/4) * (1 + |x_j|)`.
//! All outputs are column-major.

#[inline]
pub fn first_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

#[inline]
pub fn second_step(x: f64) -> f64 {
    f64::EPSILON.sqrt().sqrt() * (1.0 + x.abs())
}

/// Jacobian of `f: R^m -> R^k` at `x`, written as a `k x m` column-major
/// block into `out`.
pub fn jacobian<F>(x: &[f64], k: usize, f: F, out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]),
{
    let m = x.len();
    debug_assert_eq!(out.len(), k * m);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; k];
    let mut fm = vec![0.0; k];
    for j in 0..m {
        let h = first_step(x[j]);
        xp[j] = x[j] + h;
        let up = xp[j];
        f(&xp, &mut fp);
        xp[j] = x[j] - h;
        let down = xp[j];
        f(&xp, &mut fm);
        xp[j] = x[j];
        let span = up - down;
        for r in 0..k {
            out[r + j * k] = (fp[r] - fm[r]) / span;
        }
    }
}

/// Gradient of a scalar function.
pub fn gradient<F>(x: &[f64], f: F, out: &mut [f64])
where
    F: Fn(&[f64]) -> f64,
{
    jacobian(x, 1, |t, o| o[0] = f(t), out);
}

/// Hessians of every component of `f: R^m -> R^k`; component `c` occupies
/// `out[c*m*m..(c+1)*m*m]` as an `m x m` column-major block.
pub fn hessians<F>(x: &[f64], k: usize, f: F, out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]),
{
    let m = x.len();
    debug_assert_eq!(out.len(), k * m * m);
    let mut xt = x.to_vec();
    let mut f0 = vec![0.0; k];
    f(x, &mut f0);
    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    let h: Vec<f64> = x.iter().map(|&v| second_step(v)).collect();
    for i in 0..m {
        xt[i] = x[i] + h[i];
        f(&xt, &mut a);
        xt[i] = x[i] - h[i];
        f(&xt, &mut b);
        xt[i] = x[i];
        for r in 0..k {
            out[r * m * m + i + i * m] = (a[r] - 2.0 * f0[r] + b[r]) / (h[i] * h[i]);
        }
        for j in 0..i {
            xt[i] = x[i] + h[i];
            xt[j] = x[j] + h[j];
            f(&xt, &mut a);
            xt[j] = x[j] - h[j];
            f(&xt, &mut b);
            xt[i] = x[i] - h[i];
            f(&xt, &mut d);
            xt[j] = x[j] + h[j];
            f(&xt, &mut c);
            xt[i] = x[i];
            xt[j] = x[j];
            for r in 0..k {
                let v = (a[r] - b[r] - c[r] + d[r]) / (4.0 * h[i] * h[j]);
                out[r * m * m + i + j * m] = v;
                out[r * m * m + j + i * m] = v;
            }
        }
    }
}

/// Mixed second derivatives of `f(x, y): R^m x R^l -> R^k`.
///
/// Block `j` (for `y_j`) is the `k x m` matrix with entries
/// `d^2 f_r / (d y_j d x_c)` stored column-major at `out[j*k*m..]`.
pub fn mixed<F>(x: &[f64], y: &[f64], k: usize, f: F, out: &mut [f64])
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    let m = x.len();
    let l = y.len();
    debug_assert_eq!(out.len(), l * k * m);
    let mut xt = x.to_vec();
    let mut yt = y.to_vec();
    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    for j in 0..l {
        let hy = second_step(y[j]);
        for col in 0..m {
            let hx = second_step(x[col]);
            yt[j] = y[j] + hy;
            xt[col] = x[col] + hx;
            f(&xt, &yt, &mut a);
            xt[col] = x[col] - hx;
            f(&xt, &yt, &mut b);
            yt[j] = y[j] - hy;
            f(&xt, &yt, &mut d);
            xt[col] = x[col] + hx;
            f(&xt, &yt, &mut c);
            xt[col] = x[col];
            yt[j] = y[j];
            for r in 0..k {
                out[j * k * m + r + col * k] = (a[r] - b[r] - c[r] + d[r]) / (4.0 * hx * hy);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_of_polynomial() {
        let f = |x: &[f64], o: &mut [f64]| {
            o[0] = x[0] * x[0] * x[1];
            o[1] = x[1].sin();
        };
        let mut out = [0.0; 4];
        jacobian(&[1.5, 0.3], 2, f, &mut out);
        let expect = [2.0 * 1.5 * 0.3, 0.0, 1.5 * 1.5, 0.3f64.cos()];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn hessian_and_mixed() {
        let f = |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0] * x[1] + x[1].exp();
        let mut h = [0.0; 4];
        hessians(&[0.7, -0.2], 1, f, &mut h);
        let expect = [2.0 * -0.2, 2.0 * 0.7, 2.0 * 0.7, (-0.2f64).exp()];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let g = |x: &[f64], y: &[f64], o: &mut [f64]| o[0] = x[0] * y[0] * y[0] + x[1];
        let mut mx = [0.0; 2];
        mixed(&[0.4, 1.0], &[2.0], 1, g, &mut mx);
        assert!((mx[0] - 4.0).abs() < 1e-6 && mx[1].abs() < 1e-6);
    }
}
