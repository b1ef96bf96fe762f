//! Hamiltonians, bath specifications, dipole operators and preparative maps.
//!
//! Energies are in units of the system scale `eps`, which is 1 internally.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bath::{self, ExpansionOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix};

pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathFamily {
    /// Drude-Lorentz density in the high-temperature limit (single exponential).
    DrudeLorentzHt,
    /// `J(w) = lambda w exp(-w / omega_c)`.
    OhmicExp,
}

/// One term `a exp(-nu t)` of a correlation-function expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub a_re: f64,
    pub a_im: f64,
    pub nu_re: f64,
    pub nu_im: f64,
}

impl ExpTerm {
    pub fn new(amplitude: C64, rate: C64) -> Self {
        Self { a_re: amplitude.re, a_im: amplitude.im, nu_re: rate.re, nu_im: rate.im }
    }

    pub fn amplitude(&self) -> C64 {
        c(self.a_re, self.a_im)
    }

    pub fn rate(&self) -> C64 {
        c(self.nu_re, self.nu_im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub family: BathFamily,
    pub lambda: f64,
    pub omega_c: f64,
    pub beta: f64,
    pub expansion: Vec<ExpTerm>,
    /// Max deviation of the expansion from the exact correlation function, if
    /// it was fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

fn check_bath_params(lambda: f64, omega_c: f64, beta: f64) -> Result<()> {
    for (name, v) in [("lambda", lambda), ("omega_c", omega_c), ("beta", beta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

impl BathSpec {
    pub fn drude_lorentz_ht(lambda: f64, omega_c: f64, beta: f64) -> Result<Self> {
        check_bath_params(lambda, omega_c, beta)?;
        let a = c(lambda * std::f64::consts::PI / beta, -lambda * std::f64::consts::PI * omega_c / 2.0);
        Ok(Self {
            family: BathFamily::DrudeLorentzHt,
            lambda,
            omega_c,
            beta,
            expansion: vec![ExpTerm::new(a, c(omega_c, 0.0))],
            residual: None,
        })
    }

    /// Ohmic bath with an exponential expansion fitted to the exact
    /// correlation function.
    pub fn ohmic_exp(lambda: f64, omega_c: f64, beta: f64, opts: &ExpansionOptions) -> Result<Self> {
        let mut spec = Self::ohmic_unexpanded(lambda, omega_c, beta)?;
        let fit = bath::hierarchy_expansion(&spec, opts)?;
        spec.residual = Some(fit.residual);
        spec.expansion = fit.terms;
        Ok(spec)
    }

    /// Ohmic bath without an expansion; enough for the quadrature-based
    /// functions and the diagonalization oracle.
    pub fn ohmic_unexpanded(lambda: f64, omega_c: f64, beta: f64) -> Result<Self> {
        check_bath_params(lambda, omega_c, beta)?;
        Ok(Self {
            family: BathFamily::OhmicExp,
            lambda,
            omega_c,
            beta,
            expansion: Vec::new(),
            residual: None,
        })
    }

    pub fn from_params(p: &BathParams) -> Result<Self> {
        match p.family {
            BathFamily::DrudeLorentzHt => Self::drude_lorentz_ht(p.lambda, p.omega_c, p.beta),
            BathFamily::OhmicExp => Self::ohmic_exp(p.lambda, p.omega_c, p.beta, &p.expansion),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bath_params(self.lambda, self.omega_c, self.beta)?;
        for t in &self.expansion {
            if !(t.nu_re > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "expansion rate {} has non-positive real part",
                    t.rate()
                )));
            }
        }
        if self.family == BathFamily::DrudeLorentzHt {
            let reference = Self::drude_lorentz_ht(self.lambda, self.omega_c, self.beta)?;
            let ok = self.expansion.len() == 1
                && (self.expansion[0].amplitude() - reference.expansion[0].amplitude()).norm()
                    <= 1e-12 * reference.expansion[0].amplitude().norm()
                && (self.expansion[0].rate() - reference.expansion[0].rate()).norm() <= 1e-12 * self.omega_c;
            if !ok {
                return Err(Error::InvalidParameter(
                    "drude_lorentz_ht expansion must be its single closed-form term".into(),
                ));
            }
        }
        Ok(())
    }

    /// Spectral density `J(w)` for `w > 0`.
    pub fn spectral_density(&self, w: f64) -> f64 {
        match self.family {
            BathFamily::DrudeLorentzHt => self.lambda * self.omega_c * w / (w * w + self.omega_c * self.omega_c),
            BathFamily::OhmicExp => self.lambda * w * (-w / self.omega_c).exp(),
        }
    }
}

/// Bath block of a model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    pub family: BathFamily,
    pub lambda: f64,
    pub omega_c: f64,
    pub beta: f64,
    #[serde(default)]
    pub expansion: ExpansionOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SpinBoson,
    PureDephasing,
    Chromophoric,
    EitLambda,
}

/// Parameters for [`build_model`]; which fields are required depends on the
/// kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Excited-state energies of a chromophoric model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_energies: Option<Vec<f64>>,
    /// Excitonic couplings `(i, j, v_ij)` with `i < j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath: Option<BathParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub op: CMatrix,
    pub bath: BathSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    pub kind: ModelKind,
    pub h_sys: CMatrix,
    pub couplings: Vec<Coupling>,
    pub labels: Vec<String>,
    /// Index of the ground state for models with a ground manifold.
    pub ground: Option<usize>,
}

fn require<T: Clone>(v: &Option<T>, name: &str, kind: ModelKind) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::InvalidParameter(format!("{kind:?} model requires '{name}'")))
}

fn positive(v: f64, name: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

pub fn build_model(kind: ModelKind, params: &ModelParams) -> Result<HamiltonianModel> {
    let bath_params = require(&params.bath, "bath", kind)?;
    let model = match kind {
        ModelKind::SpinBoson | ModelKind::PureDephasing => {
            let eps = positive(require(&params.eps, "eps", kind)?, "eps")?;
            let (delta, op) = if kind == ModelKind::SpinBoson {
                let delta = require(&params.delta, "delta", kind)?;
                if !(delta >= 0.0 && delta.is_finite()) {
                    return Err(Error::InvalidParameter(format!("delta must be non-negative, got {delta}")));
                }
                (delta, linalg::pauli_x())
            } else {
                (0.0, linalg::pauli_z())
            };
            let h = linalg::pauli_z().mapv(|z| z * (eps / 2.0)) - linalg::pauli_x().mapv(|z| z * (delta / 2.0));
            HamiltonianModel {
                kind,
                h_sys: h,
                couplings: vec![Coupling { op, bath: BathSpec::from_params(&bath_params)? }],
                labels: vec!["up".into(), "down".into()],
                ground: None,
            }
        }
        ModelKind::Chromophoric => {
            let energies = require(&params.site_energies, "site_energies", kind)?;
            let n = energies.len();
            if n == 0 {
                return Err(Error::InvalidParameter("site_energies must be non-empty".into()));
            }
            let mut h = linalg::zeros(n + 1, n + 1);
            for (i, &e) in energies.iter().enumerate() {
                if !e.is_finite() {
                    return Err(Error::InvalidParameter(format!("site energy {e} is not finite")));
                }
                h[[i, i]] = c(e, 0.0);
            }
            for &(i, j, v) in params.couplings.as_deref().unwrap_or(&[]) {
                if i >= n || j >= n || i == j || !v.is_finite() {
                    return Err(Error::InvalidParameter(format!("bad excitonic coupling ({i}, {j}, {v})")));
                }
                h[[i, j]] = c(v, 0.0);
                h[[j, i]] = c(v, 0.0);
            }
            let bath = BathSpec::from_params(&bath_params)?;
            let couplings = (0..n)
                .map(|i| Coupling { op: linalg::matrix_unit(n + 1, i, i), bath: bath.clone() })
                .collect();
            let mut labels: Vec<String> = (1..=n).map(|i| format!("e{i}")).collect();
            labels.push("g".into());
            HamiltonianModel { kind, h_sys: h, couplings, labels, ground: Some(n) }
        }
        ModelKind::EitLambda => {
            let eps = params.eps.map_or(Ok(1.0), |e| positive(e, "eps"))?;
            let h = linalg::from_real(&ndarray::array![[6.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]])
                .mapv(|z| z * eps);
            let op = linalg::from_real(&ndarray::array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
            HamiltonianModel {
                kind,
                h_sys: h,
                couplings: vec![Coupling { op, bath: BathSpec::from_params(&bath_params)? }],
                labels: vec!["e".into(), "plus".into(), "minus".into()],
                ground: Some(2),
            }
        }
    };
    model.validate()?;
    Ok(model)
}

impl HamiltonianModel {
    pub fn dim(&self) -> usize {
        self.h_sys.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.h_sys.ncols() != d {
            return Err(Error::NotSquare { rows: d, cols: self.h_sys.ncols() });
        }
        let defect = linalg::hermiticity_defect(self.h_sys.view());
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian { defect });
        }
        if self.labels.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: self.labels.len() });
        }
        for cpl in &self.couplings {
            if cpl.op.dim() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, found: cpl.op.nrows() });
            }
            let defect = linalg::hermiticity_defect(cpl.op.view());
            if defect > HERMITIAN_TOL {
                return Err(Error::NotHermitian { defect });
            }
            cpl.bath.validate()?;
        }
        if let Some(g) = self.ground {
            if g >= d {
                return Err(Error::InvalidParameter(format!("ground index {g} out of range")));
            }
            for m in std::iter::once(&self.h_sys).chain(self.couplings.iter().map(|c| &c.op)) {
                if (0..d).any(|k| m[[g, k]] != C64::new(0.0, 0.0) || m[[k, g]] != C64::new(0.0, 0.0)) {
                    return Err(Error::InvalidParameter(
                        "ground state must be decoupled from the excited manifold".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Indices of the excited manifold (everything but the ground state).
    pub fn excited_indices(&self) -> Result<Vec<usize>> {
        let g = self.ground.ok_or_else(|| Error::InvalidParameter("model has no ground manifold".into()))?;
        Ok((0..self.dim()).filter(|&i| i != g).collect())
    }

    pub fn ground_projector(&self) -> Result<CMatrix> {
        let g = self.ground.ok_or_else(|| Error::InvalidParameter("model has no ground manifold".into()))?;
        Ok(linalg::matrix_unit(self.dim(), g, g))
    }

    pub fn excited_projector(&self) -> Result<CMatrix> {
        let mut p = linalg::zeros(self.dim(), self.dim());
        for i in self.excited_indices()? {
            p[[i, i]] = c(1.0, 0.0);
        }
        Ok(p)
    }

    /// Same model with every bath replaced; used to switch off coupling or
    /// change temperature in sweeps.
    pub fn with_baths(&self, bath: &BathSpec) -> Self {
        let mut m = self.clone();
        for cpl in &mut m.couplings {
            cpl.bath = bath.clone();
        }
        m
    }

    pub fn to_json(&self) -> serde_json::Value {
        let couplings: Vec<_> = self
            .couplings
            .iter()
            .map(|cpl| serde_json::json!({ "op": flatten(&cpl.op), "bath": cpl.bath }))
            .collect();
        serde_json::json!({
            "kind": self.kind,
            "dim": self.dim(),
            "h_sys": flatten(&self.h_sys),
            "couplings": couplings,
            "labels": self.labels,
            "ground": self.ground,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct RawCoupling {
            op: Vec<[f64; 2]>,
            bath: BathSpec,
        }
        #[derive(Deserialize)]
        struct Raw {
            kind: ModelKind,
            dim: usize,
            h_sys: Vec<[f64; 2]>,
            couplings: Vec<RawCoupling>,
            labels: Vec<String>,
            #[serde(default)]
            ground: Option<usize>,
        }
        let raw: Raw = serde_json::from_value(v.clone())?;
        let model = Self {
            kind: raw.kind,
            h_sys: unflatten(raw.dim, &raw.h_sys)?,
            couplings: raw
                .couplings
                .into_iter()
                .map(|rc| Ok(Coupling { op: unflatten(raw.dim, &rc.op)?, bath: rc.bath }))
                .collect::<Result<_>>()?,
            labels: raw.labels,
            ground: raw.ground,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Row-major list of `[re, im]` pairs.
pub fn flatten(m: &CMatrix) -> Vec<[f64; 2]> {
    m.iter().map(|z| [z.re, z.im]).collect()
}

pub fn unflatten(dim: usize, v: &[[f64; 2]]) -> Result<CMatrix> {
    if v.len() != dim * dim {
        return Err(Error::DimensionMismatch { expected: dim * dim, found: v.len() });
    }
    Ok(Array2::from_shape_fn((dim, dim), |(i, j)| c(v[i * dim + j][0], v[i * dim + j][1])))
}

/// System dipole operator. For chromophoric models `sum_i |e_i><g| + h.c.`;
/// for the lambda model the probe couples the excited state to the ground
/// state `|->`, which is the only choice that keeps the dipole off-diagonal
/// between the manifolds.
pub fn dipole_operator(model: &HamiltonianModel) -> Result<CMatrix> {
    let g = model.ground.ok_or_else(|| Error::InvalidParameter("model has no ground manifold".into()))?;
    let d = model.dim();
    let mut mu = linalg::zeros(d, d);
    match model.kind {
        ModelKind::Chromophoric => {
            for i in model.excited_indices()? {
                mu[[i, g]] = c(1.0, 0.0);
                mu[[g, i]] = c(1.0, 0.0);
            }
        }
        ModelKind::EitLambda => {
            mu[[0, g]] = c(1.0, 0.0);
            mu[[g, 0]] = c(1.0, 0.0);
        }
        _ => return Err(Error::InvalidParameter("model has no ground manifold".into())),
    }
    Ok(mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrepKind {
    Unitary,
    Projector,
    General,
}

/// A system-local map `rho -> sum_k K rho K^\dagger`, optionally renormalized
/// to unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparativeMap {
    pub kraus: Vec<CMatrix>,
    pub kind: PrepKind,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrepSpec {
    Identity { dim: usize },
    /// `exp(i theta sigma_x)` on a two-level system.
    Rotation { theta: f64 },
    /// Projector onto `(|up> + i|down>)/sqrt(2)`.
    Measurement,
    Ground,
    Excited,
}

impl PreparativeMap {
    pub fn new(kraus: Vec<CMatrix>, kind: PrepKind, normalize: bool) -> Result<Self> {
        let first = kraus.first().ok_or_else(|| Error::InvalidParameter("no Kraus operators".into()))?;
        let d = first.nrows();
        for k in &kraus {
            if k.dim() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, found: k.nrows() });
            }
        }
        match kind {
            PrepKind::Unitary => {
                if kraus.len() != 1 {
                    return Err(Error::InvalidParameter("unitary map needs one Kraus operator".into()));
                }
                let u = &kraus[0];
                let defect = linalg::max_abs((u.dot(&linalg::dagger(u)) - linalg::identity(d)).view());
                if defect > 1e-12 {
                    return Err(Error::InvalidParameter(format!("operator is not unitary ({defect:.2e})")));
                }
            }
            PrepKind::Projector => {
                if kraus.len() != 1 || !normalize {
                    return Err(Error::InvalidParameter(
                        "projector map needs one operator and normalize=true".into(),
                    ));
                }
                let p = &kraus[0];
                let herm = linalg::hermiticity_defect(p.view());
                let idem = linalg::max_abs((p.dot(p) - p).view());
                if herm > 1e-12 || idem > 1e-12 {
                    return Err(Error::InvalidParameter("operator is not an orthogonal projector".into()));
                }
            }
            PrepKind::General => {}
        }
        Ok(Self { kraus, kind, normalize })
    }

    pub fn identity(d: usize) -> Self {
        Self { kraus: vec![linalg::identity(d)], kind: PrepKind::Unitary, normalize: false }
    }

    pub fn dim(&self) -> usize {
        self.kraus[0].nrows()
    }

    /// Apply to an operator `X` (reduced or global, as long as the system is
    /// the leading factor of the given dimension).
    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix> {
        if x.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.nrows() });
        }
        let mut out = linalg::zeros(x.nrows(), x.ncols());
        for k in &self.kraus {
            out = out + k.dot(x).dot(&linalg::dagger(k));
        }
        if self.normalize {
            let tr = linalg::trace(out.view());
            if tr.norm() < 1e-300 {
                return Err(Error::InvalidState("preparation annihilates the state".into()));
            }
            out.mapv_inplace(|z| z / tr);
        }
        Ok(out)
    }
}

/// `exp(i theta sigma_x)`.
pub fn rotation_x(theta: f64) -> CMatrix {
    let (s, co) = theta.sin_cos();
    ndarray::array![[c(co, 0.0), c(0.0, s)], [c(0.0, s), c(co, 0.0)]]
}

pub fn make_preparation(spec: &PrepSpec, model: Option<&HamiltonianModel>) -> Result<PreparativeMap> {
    match spec {
        PrepSpec::Identity { dim } => Ok(PreparativeMap::identity(*dim)),
        PrepSpec::Rotation { theta } => PreparativeMap::new(vec![rotation_x(*theta)], PrepKind::Unitary, false),
        PrepSpec::Measurement => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            projector_onto(&[c(s, 0.0), c(0.0, s)])
        }
        PrepSpec::Ground | PrepSpec::Excited => {
            let model = model.ok_or_else(|| Error::InvalidParameter("projector needs a model".into()))?;
            let p = if *spec == PrepSpec::Ground { model.ground_projector()? } else { model.excited_projector()? };
            PreparativeMap::new(vec![p], PrepKind::Projector, true)
        }
    }
}

/// Normalized projector `|psi><psi|`; `psi` must be a unit vector.
pub fn projector_onto(psi: &[C64]) -> Result<PreparativeMap> {
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("target vector has norm^2 {norm}")));
    }
    let n = psi.len();
    let p = Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj());
    PreparativeMap::new(vec![p], PrepKind::Projector, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigvalsh;

    fn drude() -> BathParams {
        BathParams {
            family: BathFamily::DrudeLorentzHt,
            lambda: 0.5,
            omega_c: 50.0,
            beta: 0.2,
            expansion: ExpansionOptions::default(),
        }
    }

    fn dimer() -> HamiltonianModel {
        let p = ModelParams {
            site_energies: Some(vec![2.0, 1.0]),
            couplings: Some(vec![(0, 1, 0.5)]),
            bath: Some(drude()),
            ..Default::default()
        };
        build_model(ModelKind::Chromophoric, &p).unwrap()
    }

    #[test]
    fn dimer_excited_eigenvalues() {
        let m = dimer();
        let block = m.h_sys.slice(ndarray::s![0..2, 0..2]).to_owned();
        let w = eigvalsh(&block).unwrap();
        assert!((w[0] - 0.793).abs() < 1e-3 && (w[1] - 2.207).abs() < 1e-3);
        assert_eq!(m.couplings.len(), 2);
        assert_eq!(m.couplings[1].op, linalg::matrix_unit(3, 1, 1));
    }

    #[test]
    fn spin_boson_without_tunneling_is_pure_dephasing() {
        let mut p = ModelParams { eps: Some(1.0), delta: Some(0.0), bath: Some(drude()), ..Default::default() };
        let sb = build_model(ModelKind::SpinBoson, &p).unwrap();
        p.delta = None;
        let pd = build_model(ModelKind::PureDephasing, &p).unwrap();
        assert_eq!(sb.h_sys, pd.h_sys);
        assert_eq!(sb.couplings[0].op, linalg::pauli_x());
        assert_eq!(pd.couplings[0].op, linalg::pauli_z());
    }

    #[test]
    fn eit_bright_state_energy() {
        let m = build_model(ModelKind::EitLambda, &ModelParams { bath: Some(drude()), ..Default::default() }).unwrap();
        assert_eq!(m.h_sys[[1, 1]], c(2.0, 0.0));
        let mu = dipole_operator(&m).unwrap();
        let nonzero: Vec<_> = mu.indexed_iter().filter(|(_, z)| z.norm() > 0.0).map(|(ij, _)| ij).collect();
        assert_eq!(nonzero, vec![(0, 2), (2, 0)]);
    }

    #[test]
    fn missing_or_negative_parameters() {
        let p = ModelParams { eps: Some(1.0), ..Default::default() };
        assert!(build_model(ModelKind::PureDephasing, &p).is_err());
        let p = ModelParams { eps: Some(-1.0), bath: Some(drude()), ..Default::default() };
        assert!(build_model(ModelKind::PureDephasing, &p).is_err());
        let mut b = drude();
        b.lambda = -0.1;
        let p = ModelParams { eps: Some(1.0), bath: Some(b), ..Default::default() };
        assert!(build_model(ModelKind::PureDephasing, &p).is_err());
        let p = ModelParams { eps: Some(1.0), bath: Some(drude()), ..Default::default() };
        assert!(build_model(ModelKind::SpinBoson, &p).is_err());
    }

    #[test]
    fn dipole_structure() {
        let m = dimer();
        let mu = dipole_operator(&m).unwrap();
        let expected = linalg::from_real(&ndarray::array![[0., 0., 1.], [0., 0., 1.], [1., 1., 0.]]);
        assert_eq!(mu, expected);
        let pe = m.excited_projector().unwrap();
        let pg = m.ground_projector().unwrap();
        assert_eq!(linalg::max_abs(pe.dot(&mu).dot(&pe).view()), 0.0);
        assert_eq!(linalg::max_abs(pg.dot(&mu).dot(&pg).view()), 0.0);
        let mu2 = mu.dot(&mu);
        assert_eq!(mu2[[2, 2]], c(2.0, 0.0));
        assert_eq!(pe, linalg::from_real(&ndarray::array![[1., 0., 0.], [0., 1., 0.], [0., 0., 0.]]));
        assert_eq!(linalg::max_abs(pe.dot(&m.h_sys).dot(&pg).view()), 0.0);
    }

    #[test]
    fn preparations() {
        let r0 = make_preparation(&PrepSpec::Rotation { theta: 0.0 }, None).unwrap();
        assert_eq!(r0.kraus[0], linalg::identity(2));
        let r = rotation_x(std::f64::consts::PI / 8.0);
        let r2 = rotation_x(std::f64::consts::PI / 4.0);
        assert!(linalg::max_abs((r.dot(&r) - r2).view()) < 1e-15);
        let meas = make_preparation(&PrepSpec::Measurement, None).unwrap();
        let rho = linalg::from_real(&ndarray::array![[0.7, 0.1], [0.1, 0.3]]);
        let out = meas.apply(&rho).unwrap();
        assert!((linalg::trace(out.view()) - 1.0).norm() < 1e-14);
        assert!(linalg::hermiticity_defect(out.view()) < 1e-15);
        assert!(projector_onto(&[c(1.0, 0.0), c(1.0, 0.0)]).is_err());
        let m = dimer();
        let pe = make_preparation(&PrepSpec::Excited, Some(&m)).unwrap();
        assert!(pe.normalize && pe.kind == PrepKind::Projector);
    }

    #[test]
    fn model_json_round_trip() {
        let m = dimer();
        let v = m.to_json();
        assert_eq!(v["dim"], 3);
        assert_eq!(v["h_sys"].as_array().unwrap().len(), 9);
        let back = HamiltonianModel::from_json(&v).unwrap();
        assert_eq!(back, m);
    }
}
