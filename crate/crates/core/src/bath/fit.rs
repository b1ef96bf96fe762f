//! Multi-exponential fits: matrix-pencil seeding followed by a
//! variable-projection Levenberg-Marquardt refinement of the rates.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, c};

/// Rates from the matrix pencil of a uniformly sampled signal.
pub fn matrix_pencil(y: &[C64], dt: f64, k: usize) -> Result<Vec<C64>> {
    let n = y.len();
    let pencil = n / 3;
    if k == 0 || pencil < k + 1 || n < pencil + k + 1 {
        return Err(Error::InvalidParameter(format!("{n} samples cannot resolve {k} exponentials")));
    }
    let hankel = Array2::from_shape_fn((n - pencil, pencil + 1), |(i, j)| y[i + j]);
    let (_, vt) = linalg::svd_right(&hankel)?;
    // Rows of the Hankel matrix lie in the span of the leading rows of V^H.
    let v = Array2::from_shape_fn((pencil + 1, k), |(i, j)| vt[[j, i]]);
    let v1 = v.slice(ndarray::s![..pencil, ..]).to_owned();
    let v2 = v.slice(ndarray::s![1.., ..]).to_owned();
    let m = linalg::lstsq(&v1, &v2)?;
    let z = linalg::eigvals(&m)?;
    Ok(z.iter().map(|z| -z.ln() / dt).collect())
}

/// Minimize `|r(p)|^2` by Levenberg-Marquardt with a forward-difference
/// Jacobian. Returns the final parameters.
pub(crate) fn levenberg_marquardt<F>(mut p: Vec<f64>, residual: F, max_iter: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let Some(mut r) = residual(&p) else { return p };
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut mu = 1e-3;
    let np = p.len();
    for _ in 0..max_iter {
        let mut jac = Array2::<f64>::zeros((r.len(), np));
        for j in 0..np {
            let h = 1e-7 * p[j].abs().max(1.0);
            let mut q = p.clone();
            q[j] += h;
            let Some(rq) = residual(&q) else { return p };
            for i in 0..r.len() {
                jac[[i, j]] = (rq[i] - r[i]) / h;
            }
        }
        let jt = jac.t();
        let jtj = jt.dot(&jac);
        let jtr = jt.dot(&Array1::from(r.clone()));
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[[d, d]] += mu * jtj[[d, d]].max(1e-12);
            }
            let Ok(step) = linalg::solve_real(&a, &jtr.mapv(|x| -x)) else {
                mu *= 10.0;
                continue;
            };
            let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rq) = residual(&q) {
                let cq: f64 = rq.iter().map(|x| x * x).sum();
                if cq < cost {
                    let rel = (cost - cq) / cost.max(f64::MIN_POSITIVE);
                    p = q;
                    r = rq;
                    cost = cq;
                    mu = (mu / 3.0).max(1e-12);
                    improved = rel > 1e-14;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    p
}

/// Complex exponential model with free rates and amplitudes.
pub struct ComplexFit {
    pub rates: Vec<C64>,
    pub amplitudes: Vec<C64>,
    pub residual: f64,
}

fn complex_basis(t: &[f64], rates: &[C64]) -> Array2<C64> {
    Array2::from_shape_fn((t.len(), rates.len()), |(i, k)| (-rates[k] * t[i]).exp())
}

fn complex_amplitudes(t: &[f64], y: &Array2<C64>, rates: &[C64]) -> Option<(Array2<C64>, Vec<C64>)> {
    let phi = complex_basis(t, rates);
    let a = linalg::lstsq(&phi, y).ok()?;
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    Some((phi, a.column(0).to_vec()))
}

/// Rates are stored as `(ln Re nu, Im nu)` so that every iterate decays.
fn unpack_complex(p: &[f64]) -> Vec<C64> {
    p.chunks(2).map(|q| c(q[0].exp(), q[1])).collect()
}

/// Fit `y(t_n) = sum_k a_k exp(-nu_k t_n)` on `t_n = n dt`.
pub fn fit_complex(y: &[C64], dt: f64, k: usize) -> Result<ComplexFit> {
    let t: Vec<f64> = (0..y.len()).map(|n| n as f64 * dt).collect();
    let floor = 1.0 / (dt * y.len() as f64);
    let seeds = matrix_pencil(y, dt, k)?;
    let p0: Vec<f64> = seeds.iter().flat_map(|nu| [nu.re.max(floor).ln(), nu.im]).collect();
    let ycol = Array2::from_shape_fn((y.len(), 1), |(i, _)| y[i]);
    let residual = |p: &[f64]| {
        let rates = unpack_complex(p);
        let (phi, a) = complex_amplitudes(&t, &ycol, &rates)?;
        let fit = phi.dot(&Array1::from(a));
        Some(y.iter().zip(fit.iter()).flat_map(|(a, b)| [(a - b).re, (a - b).im]).collect())
    };
    let p = levenberg_marquardt(p0, residual, 200);
    let rates = unpack_complex(&p);
    let (phi, amplitudes) = complex_amplitudes(&t, &ycol, &rates)
        .ok_or_else(|| Error::InvalidParameter("exponential fit diverged".into()))?;
    let fit = phi.dot(&Array1::from(amplitudes.clone()));
    let residual = y.iter().zip(fit.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(ComplexFit { rates, amplitudes, residual })
}

/// Real signal as a sum of real exponentials and damped cosine/sine pairs,
/// optionally with a weighted constraint on its integral over `[0, inf)`.
pub struct RealFit {
    /// Expansion terms closed under complex conjugation.
    pub rates: Vec<C64>,
    pub amplitudes: Vec<C64>,
    pub residual: f64,
}

#[derive(Clone, Copy)]
enum Mode {
    Real,
    Pair,
}

fn real_basis(t: &[f64], modes: &[Mode], p: &[f64]) -> (Array2<f64>, Array1<f64>) {
    let ncols: usize = modes.iter().map(|m| if matches!(m, Mode::Real) { 1 } else { 2 }).sum();
    let mut phi = Array2::<f64>::zeros((t.len(), ncols));
    let mut moments = Array1::<f64>::zeros(ncols);
    let (mut col, mut at) = (0, 0);
    for m in modes {
        match m {
            Mode::Real => {
                let nu = p[at].exp();
                for (i, &ti) in t.iter().enumerate() {
                    phi[[i, col]] = (-nu * ti).exp();
                }
                moments[col] = 1.0 / nu;
                col += 1;
                at += 1;
            }
            Mode::Pair => {
                let (s, w) = (p[at].exp(), p[at + 1]);
                for (i, &ti) in t.iter().enumerate() {
                    let e = (-s * ti).exp();
                    phi[[i, col]] = e * (w * ti).cos();
                    phi[[i, col + 1]] = e * (w * ti).sin();
                }
                let d = s * s + w * w;
                moments[col] = s / d;
                moments[col + 1] = w / d;
                col += 2;
                at += 2;
            }
        }
    }
    (phi, moments)
}

fn real_coefficients(
    t: &[f64],
    y: &[f64],
    modes: &[Mode],
    p: &[f64],
    moment: Option<(f64, f64)>,
) -> Option<(Array2<f64>, Array1<f64>)> {
    let (phi, moments) = real_basis(t, modes, p);
    let extra = usize::from(moment.is_some());
    let mut a = Array2::<f64>::zeros((t.len() + extra, phi.ncols()));
    a.slice_mut(ndarray::s![..t.len(), ..]).assign(&phi);
    let mut b = Array2::<f64>::zeros((t.len() + extra, 1));
    for (i, &v) in y.iter().enumerate() {
        b[[i, 0]] = v;
    }
    if let Some((target, weight)) = moment {
        a.row_mut(t.len()).assign(&moments.mapv(|m| m * weight));
        b[[t.len(), 0]] = target * weight;
    }
    let coef = linalg::lstsq(&a, &b).ok()?;
    if coef.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((a, coef.column(0).to_owned()))
}

/// Fit a real signal sampled on `t_n = n dt` with `k` real degrees of freedom
/// (real modes count 1, oscillating pairs 2). `moment = (target, weight)`
/// adds the row `weight * int_0^inf fit = weight * target`.
pub fn fit_real(y: &[f64], dt: f64, k: usize, moment: Option<(f64, f64)>) -> Result<RealFit> {
    let t: Vec<f64> = (0..y.len()).map(|n| n as f64 * dt).collect();
    let floor = 1.0 / (dt * y.len() as f64);
    let yc: Vec<C64> = y.iter().map(|&v| c(v, 0.0)).collect();
    let mut seeds = matrix_pencil(&yc, dt, k)?;
    seeds.sort_by(|a, b| a.im.total_cmp(&b.im));
    // Classify seeds into real modes and conjugate pairs.
    let mut modes = Vec::new();
    let mut p0 = Vec::new();
    let scale = seeds.iter().map(|z| z.norm()).fold(0.0, f64::max).max(floor);
    let mut used = vec![false; seeds.len()];
    for i in 0..seeds.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let nu = seeds[i];
        if nu.im.abs() <= 1e-6 * scale {
            modes.push(Mode::Real);
            p0.push(nu.re.max(floor).ln());
            continue;
        }
        let partner = (0..seeds.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (seeds[a] - nu.conj()).norm().total_cmp(&(seeds[b] - nu.conj()).norm()));
        match partner {
            Some(j) => {
                used[j] = true;
                modes.push(Mode::Pair);
                p0.push((0.5 * (nu.re + seeds[j].re)).max(floor).ln());
                p0.push(0.5 * (nu.im - seeds[j].im).abs());
            }
            None => {
                modes.push(Mode::Real);
                p0.push(nu.re.max(floor).ln());
            }
        }
    }
    let residual = |p: &[f64]| {
        let (a, coef) = real_coefficients(&t, y, &modes, p, moment)?;
        let fit = a.dot(&coef);
        let mut r: Vec<f64> = y.iter().zip(fit.iter()).map(|(a, b)| a - b).collect();
        if let Some((target, weight)) = moment {
            r.push(weight * target - fit[t.len()]);
        }
        Some(r)
    };
    let p = levenberg_marquardt(p0, residual, 300);
    let (a, coef) = real_coefficients(&t, y, &modes, &p, moment)
        .ok_or_else(|| Error::InvalidParameter("exponential fit diverged".into()))?;
    let fit = a.dot(&coef);
    let residual = y.iter().zip(fit.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (mut rates, mut amplitudes) = (Vec::new(), Vec::new());
    let (mut col, mut at) = (0, 0);
    for m in &modes {
        match m {
            Mode::Real => {
                rates.push(c(p[at].exp(), 0.0));
                amplitudes.push(c(coef[col], 0.0));
                col += 1;
                at += 1;
            }
            Mode::Pair => {
                let (s, w) = (p[at].exp(), p[at + 1]);
                let amp = c(coef[col], -coef[col + 1]) * 0.5;
                rates.push(c(s, -w));
                amplitudes.push(amp);
                rates.push(c(s, w));
                amplitudes.push(amp.conj());
                col += 2;
                at += 2;
            }
        }
    }
    Ok(RealFit { rates, amplitudes, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pencil_recovers_two_rates() {
        let dt = 0.05;
        let y: Vec<C64> = (0..200)
            .map(|n| {
                let t = n as f64 * dt;
                c(1.0, 0.5) * (-c(0.7, 3.0) * t).exp() + c(-0.3, 0.0) * (-c(2.0, 0.0) * t).exp()
            })
            .collect();
        let mut nu = matrix_pencil(&y, dt, 2).unwrap();
        nu.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((nu[0] - c(0.7, 3.0)).norm() < 1e-8);
        assert!((nu[1] - c(2.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn real_fit_of_damped_cosine() {
        let dt = 0.02;
        let y: Vec<f64> = (0..400)
            .map(|n| {
                let t = n as f64 * dt;
                2.0 * (-0.5 * t).exp() * (4.0 * t).cos() + 0.7 * (-3.0 * t).exp()
            })
            .collect();
        let fit = fit_real(&y, dt, 3, None).unwrap();
        assert!(fit.residual < 1e-9, "{}", fit.residual);
        assert_eq!(fit.rates.len(), 3);
        for (nu, a) in fit.rates.iter().zip(&fit.amplitudes) {
            let partner = fit.rates.iter().position(|m| (m - nu.conj()).norm() < 1e-12).unwrap();
            assert!((fit.amplitudes[partner] - a.conj()).norm() < 1e-12);
        }
    }
}
