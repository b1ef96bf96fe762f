use std::path::{Path, PathBuf};

use kernelforge::heom::{HeomOptions, RelaxOptions};
use kernelforge::models::{build_model, BathFamily, HamiltonianModel, ModelKind, ModelParams, PrepSpec};
use kernelforge::spectra::{CorrelationConfig, Window};
use kernelforge::ttm::GateThresholds;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Trajectory,
    Ttm,
    Spectrum,
    Thermometry,
    OracleCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub params: ModelParams,
}

/// Initial global state before the preparation is applied.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Global thermal state at the bath temperature.
    #[default]
    Thermal,
    /// System state (row-major `[re, im]` pairs) times the bath equilibrium.
    Product { rho: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub dt: f64,
    pub tau_sample: f64,
    pub t_total: f64,
    pub depth: usize,
    pub substeps: usize,
    /// Real and imaginary expansion orders `[n_real, n_imag]` of fitted baths.
    pub n_exp_terms: Option<[usize; 2]>,
    pub scaled: bool,
    /// Window of the reported spectra.
    pub window: Window,
    /// Window of the spectra used for the temperature fit.
    pub thermometry_window: Window,
    pub pad_factor: usize,
    pub floor: f64,
    pub thresholds: GateThresholds,
    pub enforce_gate: bool,
    /// Keep only the initial point of the emission sample.
    pub truncate_emission: bool,
    /// Also propagate the full hierarchy and compare (ttm task).
    pub reference: bool,
    pub relax: RelaxOptions,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            dt: 0.1,
            tau_sample: 3.0,
            t_total: 30.0,
            depth: 8,
            substeps: 10,
            n_exp_terms: None,
            scaled: false,
            window: Window::default(),
            thermometry_window: Window::None,
            pad_factor: 2,
            floor: 1e-3,
            thresholds: GateThresholds::default(),
            enforce_gate: true,
            truncate_emission: false,
            reference: true,
            relax: RelaxOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub n_modes: usize,
    pub fock_cutoff: usize,
    /// Highest mode frequency in units of `omega_c`; defaults to 15 for the
    /// Drude family and 6 for the ohmic one.
    pub omega_max_factor: Option<f64>,
    pub dimension_cap: usize,
    /// Horizon of the cumulative trace distance; defaults to `t_total`.
    pub horizon: Option<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_modes: 3,
            fock_cutoff: 4,
            omega_max_factor: None,
            dimension_cap: kernelforge::oracle::OracleOptions::default().dimension_cap,
            horizon: None,
        }
    }
}

impl OracleConfig {
    pub fn omega_max_factor(&self, family: BathFamily) -> f64 {
        self.omega_max_factor.unwrap_or(match family {
            BathFamily::DrudeLorentzHt => 15.0,
            BathFamily::OhmicExp => 6.0,
        })
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub task: Task,
    #[serde(default)]
    pub preparation: Option<PrepSpec>,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
    /// Recorded for archiving; every run is seedless and deterministic.
    #[serde(default = "yes")]
    pub deterministic: bool,
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tau_sample: Option<f64>,
    #[arg(long)]
    pub t_total: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub substeps: Option<usize>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path, o: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| config_error(format!("malformed config: {e}")))?;
        if let Some(d) = &o.output_dir {
            cfg.output_dir = d.clone();
        }
        let n = &mut cfg.numerics;
        n.dt = o.dt.unwrap_or(n.dt);
        n.tau_sample = o.tau_sample.unwrap_or(n.tau_sample);
        n.t_total = o.t_total.unwrap_or(n.t_total);
        n.depth = o.depth.unwrap_or(n.depth);
        n.substeps = o.substeps.unwrap_or(n.substeps);
        if let (Some([re, im]), Some(b)) = (n.n_exp_terms, cfg.model.params.bath.as_mut()) {
            b.expansion.n_real = re;
            b.expansion.n_imag = im;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        if !(n.dt > 0.0 && n.dt.is_finite()) {
            return Err(config_error(format!("dt must be positive, got {}", n.dt)));
        }
        if !(n.t_total > 0.0 && n.t_total.is_finite()) {
            return Err(config_error(format!("t_total must be positive, got {}", n.t_total)));
        }
        if !(n.tau_sample > 0.0) || n.tau_sample > n.t_total {
            return Err(config_error(format!("need 0 < tau_sample <= t_total, got {} and {}", n.tau_sample, n.t_total)));
        }
        for (name, t) in [("tau_sample", n.tau_sample), ("t_total", n.t_total)] {
            steps(t, n.dt).ok_or_else(|| config_error(format!("{name} {t} is not a multiple of dt {}", n.dt)))?;
        }
        if n.depth < 1 || n.substeps < 1 || n.pad_factor < 1 {
            return Err(config_error("depth, substeps and pad_factor must be at least 1"));
        }
        if !(n.floor > 0.0 && n.floor < 1.0) {
            return Err(config_error(format!("floor must lie in (0, 1), got {}", n.floor)));
        }
        if let Some(h) = self.oracle.horizon {
            if !(h > 0.0 && h <= n.t_total) {
                return Err(config_error(format!("oracle horizon must lie in (0, t_total], got {h}")));
            }
        }
        if matches!(self.initial, InitialState::Product { .. }) && matches!(self.task, Task::Spectrum | Task::Thermometry) {
            return Err(config_error("spectra fix their own initial states; drop 'initial'"));
        }
        self.check_writable()
    }

    /// The output directory must exist or be creatable, and accept files.
    fn check_writable(&self) -> Result<(), CliError> {
        let dir = &self.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| config_error(format!("cannot create {}: {e}", dir.display())))?;
        let probe = dir.join(".kernelforge-probe");
        std::fs::write(&probe, b"").map_err(|e| config_error(format!("{} is not writable: {e}", dir.display())))?;
        let _ = std::fs::remove_file(probe);
        Ok(())
    }

    pub fn build_model(&self) -> Result<HamiltonianModel, CliError> {
        build_model(self.model.kind, &self.model.params).map_err(|e| config_error(e.to_string()))
    }

    pub fn heom_options(&self) -> HeomOptions {
        HeomOptions {
            depth: self.numerics.depth,
            substeps: self.numerics.substeps,
            scaled: self.numerics.scaled,
            ..Default::default()
        }
    }

    pub fn correlation_config(&self) -> CorrelationConfig {
        let n = &self.numerics;
        CorrelationConfig {
            heom: self.heom_options(),
            dt: n.dt,
            tau_sample: n.tau_sample,
            t_total: n.t_total,
            thresholds: n.thresholds,
            relax: n.relax.clone(),
            truncate_sample: false,
            enforce_gate: n.enforce_gate,
        }
    }

    pub fn sample_steps(&self) -> usize {
        steps(self.numerics.tau_sample, self.numerics.dt).expect("validated")
    }

    pub fn total_steps(&self) -> usize {
        steps(self.numerics.t_total, self.numerics.dt).expect("validated")
    }
}

fn steps(t: f64, dt: f64) -> Option<usize> {
    let n = (t / dt).round();
    (n >= 1.0 && (n * dt - t).abs() <= 1e-9 * t.max(1.0)).then_some(n as usize)
}
