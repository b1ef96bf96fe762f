//! Dipole correlation functions, their Fourier spectra and detailed-balance
//! thermometry.
//!
//! Absorption starts from `|e_j><g|` times the bath equilibrium of the ground
//! state, a product state, so the maps alone give the reduced absorption
//! operator `A_ij(t) = <e_i| sigma_j(t) |g>`. Emission starts from the
//! hierarchy's stationary state in the excited manifold; `|g><e_i|` applied to
//! every ADO gives correlated samples `E_ij(t) = <g| sigma_i(t) |e_j>` that are
//! continued with transfer tensors.

use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heom::{HeomOptions, Hierarchy, HierarchyState, RelaxOptions};
use crate::linalg::{self, c, CMatrix};
use crate::models::{dipole_operator, HamiltonianModel};
use crate::operators::Trajectory;
use crate::ttm::{
    decay_report, extend_unchecked, inhomogeneity, learn_maps, tensors_from_maps, DecayReport, GateThresholds,
    InhomogeneousSeries, Subspace, TransferTensors,
};

pub use crate::oracle::SpectrumKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexTimeSeries {
    pub dt: f64,
    pub values: Vec<C64>,
    pub kind: SpectrumKind,
}

impl ComplexTimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,re,im")?;
        for (n, z) in self.values.iter().enumerate() {
            writeln!(w, "{:.12e},{:.17e},{:.17e}", n as f64 * self.dt, z.re, z.im)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Window {
    None,
    /// `exp(-rate t)`; broadens lines by `rate`.
    Exponential { rate: f64 },
}

impl Default for Window {
    fn default() -> Self {
        Window::Exponential { rate: 0.02 }
    }
}

impl Window {
    fn weight(self, t: f64) -> f64 {
        match self {
            Window::None => 1.0,
            Window::Exponential { rate } => (-rate * t).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
    pub beta_used: Option<f64>,
    pub window: Window,
}

impl Spectrum {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,value")?;
        for (o, v) in self.omega.iter().zip(&self.values) {
            writeln!(w, "{o:.12e},{v:.17e}")?;
        }
        Ok(())
    }

    /// Interior local maxima, sorted by frequency.
    pub fn local_maxima(&self) -> Vec<(f64, f64)> {
        let v = &self.values;
        (1..v.len().saturating_sub(1))
            .filter(|&k| v[k] > v[k - 1] && v[k] >= v[k + 1])
            .map(|k| (self.omega[k], v[k]))
            .collect()
    }

    /// Interior local minima, sorted by frequency.
    pub fn local_minima(&self) -> Vec<(f64, f64)> {
        let v = &self.values;
        (1..v.len().saturating_sub(1))
            .filter(|&k| v[k] < v[k - 1] && v[k] <= v[k + 1])
            .map(|k| (self.omega[k], v[k]))
            .collect()
    }
}

/// Half-line transform `F(omega) = int_0^inf exp(i s omega t) w(t) f(t) dt`
/// by the trapezoid rule on the zero-padded grid, ordered by frequency.
fn half_transform(values: &[C64], dt: f64, kind: SpectrumKind, window: Window, pad_factor: usize) -> Result<(Vec<f64>, Vec<C64>)> {
    if values.is_empty() || !(dt > 0.0) {
        return Err(Error::InvalidParameter("transform needs a non-empty series and dt > 0".into()));
    }
    if pad_factor == 0 {
        return Err(Error::InvalidParameter("pad_factor must be at least 1".into()));
    }
    if let Window::Exponential { rate } = window {
        if !(rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("window rate {rate} must be non-negative")));
        }
    }
    let n = values.len() * pad_factor;
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (k, (b, v)) in buf.iter_mut().zip(values).enumerate() {
        let trap = if k == 0 { 0.5 } else { 1.0 };
        *b = v * (trap * dt * window.weight(k as f64 * dt));
    }
    let mut planner = FftPlanner::new();
    let fft = match kind {
        SpectrumKind::Absorption => planner.plan_fft_inverse(n),
        SpectrumKind::Emission => planner.plan_fft_forward(n),
    };
    fft.process(&mut buf);
    // Bin k holds omega_k = 2 pi k / (n dt); bins above n/2 are negative.
    let dw = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let half = n / 2;
    let order: Vec<usize> = ((half + 1)..n).chain(0..=half).collect();
    let omega = order.iter().map(|&k| if k > half { k as f64 - n as f64 } else { k as f64 } * dw).collect();
    let vals = order.iter().map(|&k| buf[k]).collect();
    Ok((omega, vals))
}

/// `2 Re` of the half-line transform; exact for `f(-t) = f(t)*`.
pub fn spectrum(series: &ComplexTimeSeries, window: Window, pad_factor: usize) -> Result<Spectrum> {
    let (omega, f) = half_transform(&series.values, series.dt, series.kind, window, pad_factor)?;
    Ok(Spectrum { omega, values: f.iter().map(|z| 2.0 * z.re).collect(), beta_used: None, window })
}

/// Full-line transform of a matrix correlation obeying
/// `X_ij(-t) = X_ji(t)*`: `F + F^dagger` per frequency.
pub fn matrix_spectrum(
    elements: &Trajectory,
    kind: SpectrumKind,
    window: Window,
    pad_factor: usize,
) -> Result<(Vec<f64>, Vec<CMatrix>)> {
    let n = elements.dim();
    let mut omega = Vec::new();
    let mut f: Vec<Vec<C64>> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let series: Vec<C64> = elements.values().iter().map(|m| m[[i, j]]).collect();
            let (w, v) = half_transform(&series, elements.dt(), kind, window, pad_factor)?;
            omega = w;
            f.push(v);
        }
    }
    let mats = (0..omega.len())
        .map(|k| CMatrix::from_shape_fn((n, n), |(i, j)| f[i * n + j][k] + f[j * n + i][k].conj()))
        .collect();
    Ok((omega, mats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub offset: f64,
    pub stderr: f64,
    pub n_points: usize,
}

/// Least-squares fit of `ln(A / E) = beta omega + offset` over frequencies
/// where both spectra exceed `floor` times their maximum.
pub fn estimate_beta(absorption: &Spectrum, emission: &Spectrum, floor: f64) -> Result<BetaFit> {
    if absorption.omega.len() != emission.omega.len()
        || absorption.omega.iter().zip(&emission.omega).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
    {
        return Err(Error::GridMismatch("absorption and emission spectra have different grids".into()));
    }
    let max_a = absorption.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let max_e = emission.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = absorption
        .omega
        .iter()
        .zip(absorption.values.iter().zip(&emission.values))
        .filter(|&(_, (&a, &e))| a > floor * max_a && e > floor * max_e && a > 0.0 && e > 0.0)
        .map(|(&w, (&a, &e))| (w, (a / e).ln()))
        .collect();
    let n = pts.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!("only {n} frequencies above the floor, need at least 10")));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let beta = sxy / sxx;
    let offset = my - beta * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - offset - beta * p.0).powi(2)).sum();
    let stderr = (ssr / (nf - 2.0) / sxx).sqrt();
    Ok(BetaFit { beta, offset, stderr, n_points: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermometryReport {
    pub beta: f64,
    pub beta_stderr: f64,
    pub offset: f64,
    pub n_points: usize,
    pub window: Window,
    pub floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_true: Option<f64>,
}

impl ThermometryReport {
    pub fn new(fit: &BetaFit, window: Window, floor: f64, beta_true: Option<f64>) -> Self {
        Self {
            beta: fit.beta,
            beta_stderr: fit.stderr,
            offset: fit.offset,
            n_points: fit.n_points,
            window,
            floor,
            beta_true,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `max |E_ij(w) - A_ij(w) exp(-beta w - log_z_ratio)|` over element pairs and
/// over frequencies where both reduced spectra exceed `floor` of their
/// maximum, relative to `max |E_ij(w)|`.
pub fn kms_residual(
    a_hat: &Trajectory,
    e_hat: &Trajectory,
    beta: f64,
    log_z_ratio: f64,
    window: Window,
    floor: f64,
) -> Result<f64> {
    if !a_hat.same_grid(e_hat) || a_hat.dim() != e_hat.dim() {
        return Err(Error::GridMismatch("reduced absorption and emission operators differ in grid or size".into()));
    }
    let (omega, a) = matrix_spectrum(a_hat, SpectrumKind::Absorption, window, 1)?;
    let (_, e) = matrix_spectrum(e_hat, SpectrumKind::Emission, window, 1)?;
    let peak = |m: &[CMatrix]| m.iter().map(|x| linalg::max_abs(x.view())).collect::<Vec<_>>();
    let (pa, pe) = (peak(&a), peak(&e));
    let max_a = pa.iter().cloned().fold(0.0, f64::max);
    let max_e = pe.iter().cloned().fold(0.0, f64::max);
    if max_e == 0.0 {
        return Ok(if max_a == 0.0 { 0.0 } else { f64::INFINITY });
    }
    let mut worst = 0.0f64;
    for k in 0..omega.len() {
        if pa[k] < floor * max_a || pe[k] < floor * max_e {
            continue;
        }
        let f = (-beta * omega[k] - log_z_ratio).exp();
        worst = worst.max(linalg::max_abs((&e[k] - &a[k].mapv(|z| z * f)).view()));
    }
    Ok(worst / max_e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub heom: HeomOptions,
    pub dt: f64,
    pub tau_sample: f64,
    pub t_total: f64,
    pub thresholds: GateThresholds,
    pub relax: RelaxOptions,
    /// Use only the initial point of each correlated sample, which drops the
    /// effect of initial correlations.
    pub truncate_sample: bool,
    /// Refuse to extend when the decay gate fails. Disabled only for
    /// convergence studies in the sample length.
    pub enforce_gate: bool,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            heom: HeomOptions { depth: 4, ..Default::default() },
            dt: 0.1,
            tau_sample: 3.0,
            t_total: 100.0,
            thresholds: GateThresholds::default(),
            relax: RelaxOptions::default(),
            truncate_sample: false,
            enforce_gate: true,
        }
    }
}

impl CorrelationConfig {
    fn steps(&self, t: f64, what: &str) -> Result<usize> {
        let n = (t / self.dt).round();
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(n >= 1.0) || ((n * self.dt) - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::InvalidParameter(format!("{what} {t} is not a positive multiple of dt {}", self.dt)));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.steps(self.tau_sample, "tau_sample")?;
        let n = self.steps(self.t_total, "t_total")?;
        if k > n {
            return Err(Error::InvalidParameter("tau_sample exceeds t_total".into()));
        }
        Ok(())
    }
}

/// Everything computed before the extension.
#[derive(Debug, Clone)]
pub struct CorrelationDiagnostics {
    pub kind: SpectrumKind,
    pub tensors: TransferTensors,
    /// One sample per excited index, full system matrices.
    pub samples: Vec<Trajectory>,
    pub inhomogeneity: Vec<InhomogeneousSeries>,
    /// Gate report for the sample with the slowest-decaying correction.
    pub report: DecayReport,
    pub gram_condition: f64,
    pub n_ados: usize,
}

#[derive(Debug, Clone)]
pub struct CorrelationResult {
    pub series: ComplexTimeSeries,
    /// Reduced operator `X_ij(t)` over excited indices.
    pub elements: Trajectory,
    pub diagnostics: CorrelationDiagnostics,
}

fn reset_time(traj: Trajectory) -> Result<Trajectory> {
    let dt = traj.dt();
    Trajectory::new(0.0, dt, traj.into_values())
}

/// Thermal state of the excited manifold of `h` at inverse temperature `beta`.
fn excited_thermal_state(model: &HamiltonianModel, beta: f64) -> Result<CMatrix> {
    let ex = model.excited_indices()?;
    let he = CMatrix::from_shape_fn((ex.len(), ex.len()), |(a, b)| model.h_sys[[ex[a], ex[b]]]);
    let (w, v) = linalg::eigh(&he)?;
    let e0 = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let p: Vec<f64> = w.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = p.iter().sum();
    let mut rho = linalg::zeros(model.dim(), model.dim());
    for (a, &i) in ex.iter().enumerate() {
        for (b, &j) in ex.iter().enumerate() {
            rho[[i, j]] = (0..ex.len()).map(|k| v[[a, k]] * v[[b, k]].conj() * (p[k] / z)).sum();
        }
    }
    Ok(rho)
}

fn model_beta(model: &HamiltonianModel) -> Result<f64> {
    let beta = model.couplings.first().map(|c| c.bath.beta).ok_or_else(|| {
        Error::InvalidParameter("spectra need a bath to define the temperature".into())
    })?;
    if model.couplings.iter().any(|c| (c.bath.beta - beta).abs() > 1e-12 * beta) {
        return Err(Error::InvalidParameter("all baths must share one temperature".into()));
    }
    Ok(beta)
}

/// Sample the reduced absorption or emission operator to `tau_sample`, learn
/// transfer tensors and evaluate the decay gate, without extending.
pub fn correlation_diagnostics(
    model: &HamiltonianModel,
    kind: SpectrumKind,
    cfg: &CorrelationConfig,
) -> Result<CorrelationDiagnostics> {
    cfg.validate()?;
    let g = model.ground.ok_or_else(|| Error::InvalidParameter("model has no ground manifold".into()))?;
    let ex = model.excited_indices()?;
    let d = model.dim();
    let k_steps = cfg.steps(cfg.tau_sample, "tau_sample")?;
    let h = Hierarchy::new(model, cfg.heom.clone())?;
    let sub = match kind {
        SpectrumKind::Absorption => Subspace::block(d, ex.clone(), vec![g])?,
        SpectrumKind::Emission => Subspace::block(d, vec![g], ex.clone())?,
    };
    let sampler = |rho: &CMatrix| -> Result<Trajectory> {
        reset_time(h.propagate(&h.init_product_state(rho)?, cfg.dt, k_steps + 1)?.0)
    };
    let basis = sub.matrix_unit_basis();
    let maps = learn_maps(sampler, &basis, &sub, cfg.dt, k_steps)?;
    let tensors = tensors_from_maps(&maps)?;

    let samples: Vec<Trajectory> = match kind {
        // Basis samples are the maps applied to the matrix units.
        SpectrumKind::Absorption => basis
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let mut values = vec![b.clone()];
                for e in &maps.maps {
                    values.push(sub.unvectorize(&e.matrix().column(j).to_owned())?);
                }
                Trajectory::new(0.0, cfg.dt, values)
            })
            .collect::<Result<_>>()?,
        SpectrumKind::Emission => {
            let seed = h.init_product_state(&excited_thermal_state(model, model_beta(model)?)?)?;
            let relaxed = h.relax_to_stationary(&seed, &cfg.relax)?;
            let n_points = if cfg.truncate_sample { 1 } else { k_steps + 1 };
            ex.par_iter()
                .map(|&i| {
                    let start: HierarchyState =
                        relaxed.apply_system_operator(&linalg::matrix_unit(d, g, i), &linalg::identity(d))?;
                    if n_points == 1 {
                        return Trajectory::new(0.0, cfg.dt, vec![start.reduced_state()]);
                    }
                    reset_time(h.propagate(&start, cfg.dt, n_points)?.0)
                })
                .collect::<Result<_>>()?
        }
    };
    let inhom: Vec<InhomogeneousSeries> =
        samples.iter().map(|s| inhomogeneity(&tensors, s)).collect::<Result<_>>()?;
    let report = inhom
        .iter()
        .map(|s| decay_report(&tensors, Some(s), cfg.thresholds))
        .max_by(|a, b| a.inhom_ratio.total_cmp(&b.inhom_ratio))
        .expect("at least one excited state");
    Ok(CorrelationDiagnostics {
        kind,
        tensors,
        samples,
        inhomogeneity: inhom,
        report,
        gram_condition: maps.gram_condition,
        n_ados: h.n_ados(),
    })
}

/// Dipole correlation `sum_ij mu_{g e_i} mu_{e_j g} X_ij(t)` on `[0, t_total]`,
/// sampled to `tau_sample` by the hierarchy and continued with transfer
/// tensors once the decay gate passes.
pub fn dipole_correlation(
    model: &HamiltonianModel,
    kind: SpectrumKind,
    cfg: &CorrelationConfig,
) -> Result<CorrelationResult> {
    let diagnostics = correlation_diagnostics(model, kind, cfg)?;
    if cfg.enforce_gate {
        diagnostics.report.check()?;
    }
    let n_total = cfg.steps(cfg.t_total, "t_total")? + 1;
    let extended: Vec<Trajectory> = diagnostics
        .samples
        .iter()
        .map(|s| extend_unchecked(&diagnostics.tensors, s, n_total))
        .collect::<Result<_>>()?;
    let g = model.ground.expect("checked by diagnostics");
    let ex = model.excited_indices()?;
    let n = ex.len();
    // Sample j (absorption) or i (emission) supplies one column or row.
    let elements: Vec<CMatrix> = (0..n_total)
        .map(|t| {
            CMatrix::from_shape_fn((n, n), |(i, j)| match kind {
                SpectrumKind::Absorption => extended[j].values()[t][[ex[i], g]],
                SpectrumKind::Emission => extended[i].values()[t][[g, ex[j]]],
            })
        })
        .collect();
    let mu = dipole_operator(model)?;
    let values = elements
        .iter()
        .map(|m| {
            let mut acc = c(0.0, 0.0);
            for (i, &ei) in ex.iter().enumerate() {
                for (j, &ej) in ex.iter().enumerate() {
                    acc += mu[[g, ei]] * mu[[ej, g]] * m[[i, j]];
                }
            }
            acc
        })
        .collect();
    Ok(CorrelationResult {
        series: ComplexTimeSeries { dt: cfg.dt, values, kind },
        elements: Trajectory::new(0.0, cfg.dt, elements)?,
        diagnostics,
    })
}
