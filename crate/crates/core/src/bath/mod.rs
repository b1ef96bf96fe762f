//! Bath correlation functions, lineshape functions and exponential
//! expansions for the hierarchy.
//!
//! With `J(w)` the spectral density,
//! `C(t) = int_0^inf dw J(w) [coth(beta w / 2) cos(w t) - i sin(w t)]`.

pub mod fit;
pub mod quadrature;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::c;
use crate::models::{BathFamily, BathSpec, ExpTerm};

const QUAD_REL_TOL: f64 = 1e-11;
const QUAD_FAIL_TOL: f64 = 1e-8;
const QUAD_MAX_SEGMENTS: usize = 20_000;
/// Below `SMALL_OMEGA * omega_c` the thermal factor is replaced by its series.
const SMALL_OMEGA: f64 = 1e-6;

/// Upper integration limit: the ohmic density falls below 1e-12 of its peak
/// beyond ~32 omega_c.
fn omega_cut(spec: &BathSpec) -> f64 {
    34.0 * spec.omega_c
}

/// `J(w) / w`, finite at `w = 0`.
fn density_over_omega(spec: &BathSpec, w: f64) -> f64 {
    match spec.family {
        BathFamily::DrudeLorentzHt => spec.lambda * spec.omega_c / (w * w + spec.omega_c * spec.omega_c),
        BathFamily::OhmicExp => spec.lambda * (-w / spec.omega_c).exp(),
    }
}

/// `w coth(beta w / 2)`, finite at `w = 0`.
fn omega_coth(spec: &BathSpec, w: f64) -> f64 {
    if w < SMALL_OMEGA * spec.omega_c {
        2.0 / spec.beta + spec.beta * w * w / 6.0
    } else {
        w / (0.5 * spec.beta * w).tanh()
    }
}

fn drude_term(spec: &BathSpec) -> (C64, f64) {
    let a = c(
        spec.lambda * std::f64::consts::PI / spec.beta,
        -spec.lambda * std::f64::consts::PI * spec.omega_c / 2.0,
    );
    (a, spec.omega_c)
}

/// Bath correlation function `C(t)` for `t >= 0`.
pub fn correlation_function(spec: &BathSpec, t: f64) -> Result<C64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("correlation time {t} must be non-negative")));
    }
    match spec.family {
        BathFamily::DrudeLorentzHt => {
            let (a, nu) = drude_term(spec);
            Ok(a * (-nu * t).exp())
        }
        BathFamily::OhmicExp => {
            let v = quadrature::integrate_vec(
                |w, out: &mut [f64]| {
                    let jw = density_over_omega(spec, w);
                    let (s, co) = (w * t).sin_cos();
                    out[0] = jw * omega_coth(spec, w) * co;
                    out[1] = -jw * w * s;
                },
                0.0,
                omega_cut(spec),
                2,
                QUAD_REL_TOL,
                QUAD_FAIL_TOL,
                QUAD_MAX_SEGMENTS,
            )?;
            Ok(c(v[0], v[1]))
        }
    }
}

/// `sin(x) - x` without cancellation at small `x`.
fn sin_minus_x(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x3 = x * x * x;
        -x3 / 6.0 + x3 * x * x / 120.0 - x3 * x3 * x / 5040.0
    } else {
        x.sin() - x
    }
}

/// Lineshape function `g(t) = int_0^t ds int_0^s du C(u)`.
pub fn lineshape_function(spec: &BathSpec, t: f64) -> Result<C64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("lineshape time {t} must be non-negative")));
    }
    match spec.family {
        BathFamily::DrudeLorentzHt => {
            let (a, nu) = drude_term(spec);
            Ok(a / (nu * nu) * (nu * t - 1.0 + (-nu * t).exp()))
        }
        BathFamily::OhmicExp => {
            let v = quadrature::integrate_vec(
                |w, out: &mut [f64]| {
                    let jw = density_over_omega(spec, w);
                    let half = (0.5 * w * t).sin();
                    // J / w^2 coth(beta w / 2) (1 - cos wt) = (J / w) (w coth) 2 sin^2(wt/2) / w^2
                    out[0] = jw * omega_coth(spec, w) * 2.0 * half * half / (w * w);
                    out[1] = jw * sin_minus_x(w * t) / w;
                },
                0.0,
                omega_cut(spec),
                2,
                QUAD_REL_TOL,
                QUAD_FAIL_TOL,
                QUAD_MAX_SEGMENTS,
            )?;
            Ok(c(v[0], v[1]))
        }
    }
}

/// `int_0^inf dw J(w) / w`.
pub fn reorganization_energy(spec: &BathSpec) -> f64 {
    match spec.family {
        BathFamily::DrudeLorentzHt => spec.lambda * std::f64::consts::PI / 2.0,
        BathFamily::OhmicExp => spec.lambda * spec.omega_c,
    }
}

/// `int_0^inf Re C(t) dt = (pi / beta) lim_{w -> 0} J(w) / w`.
pub fn zero_frequency_real(spec: &BathSpec) -> f64 {
    std::f64::consts::PI / spec.beta * density_over_omega(spec, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub terms: Vec<ExpTerm>,
    /// Max `|C(t_n) - fit(t_n)|` over the fit window.
    pub residual: f64,
    pub t_max: f64,
}

impl ExpansionFit {
    pub fn eval(&self, t: f64) -> C64 {
        self.terms.iter().map(|k| k.amplitude() * (-k.rate() * t).exp()).sum()
    }
}

/// Controls the ohmic expansion used by the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionOptions {
    /// Real degrees of freedom for `Re C`.
    pub n_real: usize,
    /// Real degrees of freedom for `Im C`.
    pub n_imag: usize,
    /// Fit window; defaults to `max(30 / omega_c, 6 beta)`.
    pub t_max: Option<f64>,
    pub n_samples: usize,
    /// Weight of the zero-frequency constraint rows.
    pub moment_weight: f64,
    /// Accepted residual relative to `|C(0)|`.
    pub tol_rel: f64,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self { n_real: 6, n_imag: 4, t_max: None, n_samples: 800, moment_weight: 10.0, tol_rel: 0.02 }
    }
}

/// Sample `C(t)` on `n` points `t_k = k dt`.
pub fn sample_correlation(spec: &BathSpec, dt: f64, n: usize) -> Result<Vec<C64>> {
    (0..n).map(|k| correlation_function(spec, k as f64 * dt)).collect()
}

/// Fit `samples[n] = C(n dt)` with `n_terms` free complex exponentials.
pub fn fit_exponentials(samples: &[C64], dt: f64, n_terms: usize, tol: f64) -> Result<ExpansionFit> {
    if n_terms == 0 {
        return Err(Error::InvalidParameter("n_terms must be at least 1".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("grid spacing {dt} must be positive")));
    }
    let f = fit::fit_complex(samples, dt, n_terms)?;
    if f.residual > tol {
        return Err(Error::FitTolerance { residual: f.residual, tolerance: tol });
    }
    Ok(ExpansionFit {
        terms: f.rates.iter().zip(&f.amplitudes).map(|(nu, a)| ExpTerm::new(*a, *nu)).collect(),
        residual: f.residual,
        t_max: dt * (samples.len().saturating_sub(1)) as f64,
    })
}

/// Expansion of `C(t)` for the hierarchy. `Re C` and `Im C` are fitted
/// separately with conjugation-closed real modes, each constrained by its
/// exact zero-frequency integral; the Drude kernel is returned in closed form.
pub fn hierarchy_expansion(spec: &BathSpec, opts: &ExpansionOptions) -> Result<ExpansionFit> {
    if spec.family == BathFamily::DrudeLorentzHt {
        let (a, nu) = drude_term(spec);
        return Ok(ExpansionFit { terms: vec![ExpTerm::new(a, c(nu, 0.0))], residual: 0.0, t_max: f64::INFINITY });
    }
    if opts.n_real == 0 || opts.n_imag == 0 || opts.n_samples < 20 {
        return Err(Error::InvalidParameter("expansion needs n_real, n_imag >= 1 and >= 20 samples".into()));
    }
    let t_max = opts.t_max.unwrap_or((30.0 / spec.omega_c).max(6.0 * spec.beta));
    let dt = t_max / (opts.n_samples - 1) as f64;
    let samples = sample_correlation(spec, dt, opts.n_samples)?;
    let re: Vec<f64> = samples.iter().map(|z| z.re).collect();
    let im: Vec<f64> = samples.iter().map(|z| z.im).collect();
    let fr = fit::fit_real(&re, dt, opts.n_real, Some((zero_frequency_real(spec), opts.moment_weight)))?;
    let fi = fit::fit_real(&im, dt, opts.n_imag, Some((-reorganization_energy(spec), opts.moment_weight)))?;
    let mut terms: Vec<ExpTerm> = fr.rates.iter().zip(&fr.amplitudes).map(|(nu, a)| ExpTerm::new(*a, *nu)).collect();
    terms.extend(fi.rates.iter().zip(&fi.amplitudes).map(|(nu, a)| ExpTerm::new(c(0.0, 1.0) * a, *nu)));
    let mut fit = ExpansionFit { terms, residual: 0.0, t_max };
    fit.residual = samples
        .iter()
        .enumerate()
        .map(|(k, z)| (z - fit.eval(k as f64 * dt)).norm())
        .fold(0.0, f64::max);
    let tol = opts.tol_rel * samples[0].norm();
    if fit.residual > tol {
        return Err(Error::FitTolerance { residual: fit.residual, tolerance: tol });
    }
    Ok(fit)
}
