use kernelforge::heom::{Hierarchy, HierarchyState};
use kernelforge::linalg::CMatrix;
use kernelforge::models::{make_preparation, unflatten, HamiltonianModel, PreparativeMap};
use kernelforge::operators::{cumulative_trace_distance, trace_distance, Trajectory};
use kernelforge::oracle::{correlated_and_product, discretize_bath, OracleOptions};
use kernelforge::spectra::{
    correlation_diagnostics, dipole_correlation, estimate_beta, kms_residual, spectrum, CorrelationConfig,
    CorrelationResult, SpectrumKind, ThermometryReport,
};
use kernelforge::ttm::{decay_report, extend_unchecked, inhomogeneity, learn_maps, tensors_from_maps, DecayReport, Subspace};
use kernelforge::Error;
use serde_json::{json, Map, Value};

use crate::config::{InitialState, RunConfig, Task};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Run,
    Verify,
    Oracle,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Verify => "verify",
            Mode::Oracle => "oracle",
        }
    }
}

/// Files to write plus manifest entries. Nothing touches the disk until a
/// task has finished.
#[derive(Default)]
pub struct Artifacts {
    pub files: Vec<(&'static str, Vec<u8>)>,
    pub gate: Map<String, Value>,
    pub residuals: Map<String, Value>,
    pub diagnostics: Map<String, Value>,
    /// Gate failure recorded by `verify`, reported after the files are written.
    pub gate_failure: Option<Error>,
}

impl Artifacts {
    fn add(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    fn csv(&mut self, name: &'static str, write: impl FnOnce(&mut Vec<u8>) -> kernelforge::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn record_gate(&mut self, key: &str, report: &DecayReport) {
        self.gate.insert(
            key.into(),
            json!({
                "passed": report.passed(),
                "tensor_ratio": report.tensor_ratio,
                "inhom_ratio": report.inhom_ratio,
                "tensor_pass": report.tensor_pass,
                "inhom_pass": report.inhom_pass,
                "thresholds": report.thresholds,
            }),
        );
        if let (Err(e), None) = (report.check(), &self.gate_failure) {
            self.gate_failure = Some(e);
        }
    }
}

pub fn execute(cfg: &RunConfig, mode: Mode) -> Result<Artifacts, CliError> {
    let model = cfg.build_model()?;
    let task = if mode == Mode::Oracle { Task::OracleCheck } else { cfg.task };
    let mut out = match task {
        Task::Trajectory if mode == Mode::Verify => ttm(cfg, &model, mode)?,
        Task::Trajectory => trajectory(cfg, &model)?,
        Task::Ttm => ttm(cfg, &model, mode)?,
        Task::Spectrum | Task::Thermometry => spectra(cfg, &model, mode, task == Task::Thermometry)?,
        Task::OracleCheck => oracle_check(cfg, &model)?,
    };
    if mode == Mode::Run {
        if let Some(e) = out.gate_failure.take() {
            if cfg.numerics.enforce_gate {
                return Err(e.into());
            }
        }
    }
    let manifest = json!({
        "tool": "kernelforge",
        "version": env!("CARGO_PKG_VERSION"),
        "command": mode.name(),
        "task": task,
        "config": cfg,
        "model": model.to_json(),
        "threads": rayon::current_num_threads(),
        "outputs": out.files.iter().map(|(n, _)| *n).chain(["manifest.json"]).collect::<Vec<_>>(),
        "gate": out.gate,
        "residuals": out.residuals,
        "diagnostics": out.diagnostics,
    });
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(Error::from)?;
    text.push(b'\n');
    out.add("manifest.json", text);
    Ok(out)
}

fn preparation(cfg: &RunConfig, model: &HamiltonianModel) -> Result<PreparativeMap, CliError> {
    match &cfg.preparation {
        Some(spec) => Ok(make_preparation(spec, Some(model)).map_err(|e| CliError::Config(e.to_string()))?),
        None => Ok(PreparativeMap::identity(model.dim())),
    }
}

fn bath_beta(model: &HamiltonianModel) -> Result<f64, CliError> {
    model.couplings.first().map(|c| c.bath.beta).ok_or_else(|| CliError::Config("model has no bath".into()))
}

fn initial_state(cfg: &RunConfig, model: &HamiltonianModel, h: &Hierarchy) -> Result<HierarchyState, CliError> {
    let seed = match &cfg.initial {
        InitialState::Thermal => h.thermal_state(bath_beta(model)?, &cfg.numerics.relax)?,
        InitialState::Product { rho } => {
            let rho = unflatten(model.dim(), rho).map_err(|e| CliError::Config(format!("initial rho: {e}")))?;
            h.init_product_state(&rho)?
        }
    };
    Ok(seed.apply_preparation(&preparation(cfg, model)?)?)
}

/// Propagate from `state` and restart the clock at zero.
fn propagate(h: &Hierarchy, state: &HierarchyState, dt: f64, n_points: usize) -> kernelforge::Result<Trajectory> {
    Trajectory::new(0.0, dt, h.propagate(state, dt, n_points)?.0.into_values())
}

fn trajectory(cfg: &RunConfig, model: &HamiltonianModel) -> Result<Artifacts, CliError> {
    let h = Hierarchy::new(model, cfg.heom_options())?;
    let w0 = initial_state(cfg, model, &h)?;
    let traj = propagate(&h, &w0, cfg.numerics.dt, cfg.total_steps() + 1)?;
    let mut out = Artifacts::default();
    out.diagnostics.insert("n_ados".into(), json!(h.n_ados()));
    out.csv("trajectory.csv", |w| traj.write_csv(w))?;
    Ok(out)
}

fn ttm(cfg: &RunConfig, model: &HamiltonianModel, mode: Mode) -> Result<Artifacts, CliError> {
    let dt = cfg.numerics.dt;
    let (k, n) = (cfg.sample_steps(), cfg.total_steps());
    let h = Hierarchy::new(model, cfg.heom_options())?;
    let sub = Subspace::full(model.dim());
    let sampler = |rho: &CMatrix| propagate(&h, &h.init_product_state(rho)?, dt, k + 1);
    let maps = learn_maps(sampler, &sub.default_basis(), &sub, dt, k)?;
    let tensors = tensors_from_maps(&maps)?;
    let w0 = initial_state(cfg, model, &h)?;
    let sample = propagate(&h, &w0, dt, k + 1)?;
    let inh = inhomogeneity(&tensors, &sample)?;
    let report = decay_report(&tensors, Some(&inh), cfg.numerics.thresholds);

    let mut out = Artifacts::default();
    out.diagnostics.insert("n_ados".into(), json!(h.n_ados()));
    out.diagnostics.insert("gram_condition".into(), json!(maps.gram_condition));
    out.diagnostics.insert("n_tensors".into(), json!(tensors.len()));
    out.csv("ttm_norms.csv", |w| report.write_csv(w))?;
    out.record_gate("ttm", &report);
    if mode == Mode::Verify || (out.gate_failure.is_some() && cfg.numerics.enforce_gate) {
        return Ok(out);
    }
    let ext = extend_unchecked(&tensors, &sample, n + 1)?;
    if cfg.numerics.reference {
        let exact = propagate(&h, &w0, dt, n + 1)?;
        let mut worst: f64 = 0.0;
        for (a, b) in ext.values().iter().zip(exact.values()) {
            worst = worst.max(trace_distance(a, b)?);
        }
        out.residuals.insert("max_trace_distance_to_hierarchy".into(), json!(worst));
    }
    out.csv("trajectory.csv", |w| ext.write_csv(w))?;
    Ok(out)
}

fn spectra(cfg: &RunConfig, model: &HamiltonianModel, mode: Mode, thermometry: bool) -> Result<Artifacts, CliError> {
    let base = cfg.correlation_config();
    let emi_cfg = CorrelationConfig { truncate_sample: cfg.numerics.truncate_emission, ..base.clone() };
    let mut out = Artifacts::default();
    if mode == Mode::Verify {
        let (a, e) = rayon::join(
            || correlation_diagnostics(model, SpectrumKind::Absorption, &base),
            || correlation_diagnostics(model, SpectrumKind::Emission, &emi_cfg),
        );
        let (a, e) = (a?, e?);
        out.diagnostics.insert("n_ados".into(), json!(a.n_ados));
        out.csv("ttm_norms.csv", |w| e.report.write_csv(w))?;
        out.record_gate("absorption", &a.report);
        out.record_gate("emission", &e.report);
        return Ok(out);
    }
    // The gate is applied below so that both reports reach the manifest.
    let unchecked = CorrelationConfig { enforce_gate: false, ..base };
    let emi_unchecked = CorrelationConfig { enforce_gate: false, ..emi_cfg };
    let (a, e) = rayon::join(
        || dipole_correlation(model, SpectrumKind::Absorption, &unchecked),
        || dipole_correlation(model, SpectrumKind::Emission, &emi_unchecked),
    );
    let (a, e): (CorrelationResult, CorrelationResult) = (a?, e?);
    out.record_gate("absorption", &a.diagnostics.report);
    out.record_gate("emission", &e.diagnostics.report);
    if out.gate_failure.is_some() && cfg.numerics.enforce_gate {
        return Ok(out);
    }
    out.diagnostics.insert("n_ados".into(), json!(a.diagnostics.n_ados));
    out.csv("ttm_norms.csv", |w| e.diagnostics.report.write_csv(w))?;

    let n = &cfg.numerics;
    let sa = spectrum(&a.series, n.window, n.pad_factor)?;
    let se = spectrum(&e.series, n.window, n.pad_factor)?;
    out.csv("spectrum_abs.csv", |w| sa.write_csv(w))?;
    out.csv("spectrum_emi.csv", |w| se.write_csv(w))?;
    if thermometry {
        let ta = spectrum(&a.series, n.thermometry_window, n.pad_factor)?;
        let te = spectrum(&e.series, n.thermometry_window, n.pad_factor)?;
        let fit = estimate_beta(&ta, &te, n.floor)?;
        let beta_true = bath_beta(model)?;
        let report = ThermometryReport::new(&fit, n.thermometry_window, n.floor, Some(beta_true));
        let mut text = report.to_json()?.into_bytes();
        text.push(b'\n');
        out.add("thermometry.json", text);
        let kms = kms_residual(&a.elements, &e.elements, fit.beta, fit.offset, n.thermometry_window, n.floor)?;
        out.residuals.insert("kms_residual_at_fit".into(), json!(kms));
        out.residuals.insert("beta_relative_error".into(), json!((fit.beta - beta_true).abs() / beta_true));
    }
    Ok(out)
}

fn oracle_check(cfg: &RunConfig, model: &HamiltonianModel) -> Result<Artifacts, CliError> {
    if matches!(cfg.initial, InitialState::Product { .. }) {
        return Err(CliError::Config("the oracle check starts from the global thermal state".into()));
    }
    let bath = model.couplings.first().map(|c| &c.bath).ok_or_else(|| CliError::Config("model has no bath".into()))?;
    if model.couplings.len() != 1 {
        return Err(CliError::Config("the oracle supports a single bath".into()));
    }
    let o = &cfg.oracle;
    let modes = discretize_bath(bath, o.n_modes, o.omega_max_factor(bath.family) * bath.omega_c)?.with_fock_cutoff(o.fock_cutoff)?;
    let prep = preparation(cfg, model)?;
    let dt = cfg.numerics.dt;
    let n = cfg.total_steps();
    let (corr, prod) = correlated_and_product(model, &modes, &prep, dt, n + 1, &OracleOptions { dimension_cap: o.dimension_cap })?;
    let horizon = o.horizon.unwrap_or(cfg.numerics.t_total);
    let mut out = Artifacts::default();
    out.residuals.insert("cumulative_trace_distance".into(), json!(cumulative_trace_distance(&corr, &prod, horizon)?));
    out.residuals.insert("horizon".into(), json!(horizon));
    out.diagnostics.insert("discrete_reorganization_energy".into(), json!(modes.reorganization_energy()));
    out.csv("trajectory.csv", |w| corr.write_csv(w))?;
    Ok(out)
}
