//! Ground truths: exact diagonalization of the system coupled to a finite set
//! of harmonic modes, and closed forms for pure dephasing and uncoupled
//! chromophores.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{lineshape_function, reorganization_energy};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix};
use crate::models::{BathFamily, BathSpec, HamiltonianModel, PreparativeMap};
use crate::operators::Trajectory;

/// Largest tolerated fraction of the spectral weight beyond `omega_max`.
pub const MAX_TAIL_FRACTION: f64 = 0.05;
/// Largest tolerated thermal population of the highest Fock level.
pub const MAX_TOP_OCCUPANCY: f64 = 0.01;
pub const DEFAULT_DIMENSION_CAP: usize = 20_000;

/// Harmonic modes `(omega_j, gamma_j)` with `X = sum_j gamma_j (a_j + a_j^\dagger)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedBath {
    pub modes: Vec<(f64, f64)>,
    /// Fock levels kept per mode.
    pub fock_cutoff: usize,
}

impl DiscretizedBath {
    pub fn with_fock_cutoff(mut self, cutoff: usize) -> Result<Self> {
        if cutoff < 2 {
            return Err(Error::InvalidParameter(format!("Fock cutoff {cutoff} must be at least 2")));
        }
        self.fock_cutoff = cutoff;
        Ok(self)
    }

    /// `sum_j gamma_j^2 / omega_j`.
    pub fn reorganization_energy(&self) -> f64 {
        self.modes.iter().map(|(w, g)| g * g / w).sum()
    }

    /// Correlation function of the discrete modes at inverse temperature `beta`.
    pub fn correlation(&self, beta: f64, t: f64) -> C64 {
        self.modes
            .iter()
            .map(|&(w, g)| {
                let coth = 1.0 / (0.5 * beta * w).tanh();
                g * g * c(coth * (w * t).cos(), -(w * t).sin())
            })
            .sum()
    }
}

/// Antiderivative of `J` used for the bin weights.
fn density_integral(spec: &BathSpec, w: f64) -> f64 {
    let (l, wc) = (spec.lambda, spec.omega_c);
    match spec.family {
        BathFamily::DrudeLorentzHt => 0.5 * l * wc * (w * w + wc * wc).ln(),
        BathFamily::OhmicExp => -l * wc * (w + wc) * (-w / wc).exp(),
    }
}

/// Fraction of the spectral weight above `omega_max`. The Drude density
/// decays like `1/w` and has no finite total, so its weight is measured by
/// `J(w) / w` instead.
pub fn tail_fraction(spec: &BathSpec, omega_max: f64) -> f64 {
    match spec.family {
        BathFamily::DrudeLorentzHt => 1.0 - 2.0 / std::f64::consts::PI * (omega_max / spec.omega_c).atan(),
        BathFamily::OhmicExp => {
            let x = omega_max / spec.omega_c;
            (1.0 + x) * (-x).exp()
        }
    }
}

/// Equal-width bins on `(0, omega_max]`, frequencies at the bin midpoints and
/// `gamma_j^2` equal to the integral of `J` over the bin.
pub fn discretize_bath(spec: &BathSpec, n_modes: usize, omega_max: f64) -> Result<DiscretizedBath> {
    if n_modes < 1 {
        return Err(Error::InvalidParameter("at least one mode is required".into()));
    }
    if !(omega_max > 0.0 && omega_max.is_finite()) {
        return Err(Error::InvalidParameter(format!("omega_max {omega_max} must be positive")));
    }
    spec.validate()?;
    let tail = tail_fraction(spec, omega_max);
    if tail > MAX_TAIL_FRACTION {
        return Err(Error::InvalidParameter(format!(
            "omega_max {omega_max} leaves {:.1}% of the spectral weight uncovered (limit {:.0}%)",
            100.0 * tail,
            100.0 * MAX_TAIL_FRACTION
        )));
    }
    let width = omega_max / n_modes as f64;
    let modes = (0..n_modes)
        .map(|j| {
            let (lo, hi) = (j as f64 * width, (j + 1) as f64 * width);
            let weight = density_integral(spec, hi) - density_integral(spec, lo);
            (0.5 * (lo + hi), weight.max(0.0).sqrt())
        })
        .collect();
    Ok(DiscretizedBath { modes, fock_cutoff: 4 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionMode {
    /// `W(t) = exp(-iHt) W exp(iHt)`.
    TwoSided,
    /// `W(t) = exp(-i H_E t) W exp(iHt)`: the left index evolves under the
    /// bath alone, as for operators whose rows lie in the ground manifold.
    OneSidedRightBath,
}

/// System plus independent copies of a discretized bath, one per coupling
/// operator, diagonalized once.
#[derive(Debug, Clone)]
pub struct ExactSystem {
    dim_s: usize,
    dim_b: usize,
    cutoff: usize,
    n_modes: usize,
    beta: f64,
    bath_energies: Vec<f64>,
    energies: Vec<f64>,
    vectors: CMatrix,
}

impl ExactSystem {
    pub fn new(model: &HamiltonianModel, bath: &DiscretizedBath, cap: usize) -> Result<Self> {
        model.validate()?;
        if bath.fock_cutoff < 2 {
            return Err(Error::InvalidParameter("Fock cutoff must be at least 2".into()));
        }
        let beta = model
            .couplings
            .first()
            .map(|c| c.bath.beta)
            .ok_or_else(|| Error::InvalidParameter("model has no bath coupling".into()))?;
        if model.couplings.iter().any(|c| (c.bath.beta - beta).abs() > 1e-14 * beta) {
            return Err(Error::InvalidParameter("all baths must share one temperature".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta {beta} must be positive")));
        }
        let d = model.dim();
        let n_modes = bath.modes.len() * model.couplings.len();
        let cutoff = bath.fock_cutoff;
        let dim_b = (cutoff as u128).checked_pow(n_modes as u32).unwrap_or(u128::MAX);
        let total = dim_b.saturating_mul(d as u128);
        if total > cap as u128 {
            return Err(Error::DimensionCap { dim: total.min(usize::MAX as u128) as usize, cap });
        }
        let dim_b = dim_b as usize;
        let n = d * dim_b;

        // Occupation of mode m in bath basis state b.
        let occ = |b: usize, m: usize| (b / cutoff.pow((n_modes - 1 - m) as u32)) % cutoff;
        let freqs: Vec<f64> = (0..model.couplings.len()).flat_map(|_| bath.modes.iter().map(|m| m.0)).collect();
        let gammas: Vec<f64> = (0..model.couplings.len()).flat_map(|_| bath.modes.iter().map(|m| m.1)).collect();
        let bath_energies: Vec<f64> =
            (0..dim_b).map(|b| (0..n_modes).map(|m| freqs[m] * occ(b, m) as f64).sum()).collect();

        // X_c as a real dim_b x dim_b matrix.
        let per = bath.modes.len();
        let mut xs = vec![Array2::<f64>::zeros((dim_b, dim_b)); model.couplings.len()];
        for b in 0..dim_b {
            for m in 0..n_modes {
                let k = occ(b, m);
                if k + 1 < cutoff {
                    let b2 = b + cutoff.pow((n_modes - 1 - m) as u32);
                    let v = gammas[m] * ((k + 1) as f64).sqrt();
                    xs[m / per][[b, b2]] += v;
                    xs[m / per][[b2, b]] += v;
                }
            }
        }

        let mut h = linalg::zeros(n, n);
        for i in 0..d {
            for j in 0..d {
                let hs = model.h_sys[[i, j]];
                for b in 0..dim_b {
                    h[[i * dim_b + b, j * dim_b + b]] += hs;
                }
                for (cpl, x) in model.couplings.iter().zip(&xs) {
                    let q = cpl.op[[i, j]];
                    if q == c(0.0, 0.0) {
                        continue;
                    }
                    for ((b1, b2), &v) in x.indexed_iter() {
                        if v != 0.0 {
                            h[[i * dim_b + b1, j * dim_b + b2]] += q * v;
                        }
                    }
                }
            }
            for (b, e) in bath_energies.iter().enumerate() {
                h[[i * dim_b + b, i * dim_b + b]] += e;
            }
        }
        let (energies, vectors) = linalg::eigh(&h)?;
        let sys = Self {
            dim_s: d,
            dim_b,
            cutoff,
            n_modes,
            beta,
            bath_energies,
            energies: energies.to_vec(),
            vectors,
        };
        sys.check_fock_occupancy()?;
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.dim_s * self.dim_b
    }

    pub fn bath_dim(&self) -> usize {
        self.dim_b
    }

    /// Boltzmann weights `exp(-beta (E - E_min)) / Z` of the eigenstates.
    fn boltzmann(&self) -> Vec<f64> {
        let e0 = self.energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = self.energies.iter().map(|e| (-self.beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    /// `exp(-beta H) / Z` in the product basis.
    pub fn thermal_state(&self) -> CMatrix {
        let p = self.boltzmann();
        let scaled = CMatrix::from_shape_fn(self.vectors.dim(), |(i, k)| self.vectors[[i, k]] * p[k]);
        scaled.dot(&linalg::dagger(&self.vectors))
    }

    fn check_fock_occupancy(&self) -> Result<()> {
        let p = self.boltzmann();
        let mut top = vec![0.0; self.n_modes];
        for (k, pk) in p.iter().enumerate() {
            if *pk < 1e-300 {
                continue;
            }
            for i in 0..self.dim_s {
                for b in 0..self.dim_b {
                    let amp = self.vectors[[i * self.dim_b + b, k]].norm_sqr() * pk;
                    for (m, t) in top.iter_mut().enumerate() {
                        if (b / self.cutoff.pow((self.n_modes - 1 - m) as u32)) % self.cutoff == self.cutoff - 1 {
                            *t += amp;
                        }
                    }
                }
            }
        }
        let worst = top.into_iter().fold(0.0, f64::max);
        if worst > MAX_TOP_OCCUPANCY {
            return Err(Error::FockCutoff { occupancy: worst });
        }
        Ok(())
    }

    /// `sum_k K_k W K_k^\dagger` with system-side Kraus operators, normalized to
    /// unit trace when the map asks for it.
    pub fn prepare(&self, w: &CMatrix, prep: &PreparativeMap) -> Result<CMatrix> {
        if prep.dim() != self.dim_s {
            return Err(Error::DimensionMismatch { expected: self.dim_s, found: prep.dim() });
        }
        let mut out = linalg::zeros(self.dim(), self.dim());
        for k in &prep.kraus {
            let left = self.lift(k);
            out = out + left.dot(w).dot(&linalg::dagger(&left));
        }
        if prep.normalize {
            let tr = linalg::trace(out.view());
            if tr.norm() < 1e-300 {
                return Err(Error::InvalidState("prepared state has zero trace".into()));
            }
            out.mapv_inplace(|z| z / tr);
        }
        Ok(out)
    }

    /// `exp(-beta H_E) / Z_E` of the uncoupled modes.
    pub fn free_bath_state(&self) -> CMatrix {
        let e0 = self.bath_energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = self.bath_energies.iter().map(|e| (-self.beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        CMatrix::from_shape_fn((self.dim_b, self.dim_b), |(a, b)| if a == b { c(w[a] / z, 0.0) } else { c(0.0, 0.0) })
    }

    /// `rho (x) exp(-beta H_E) / Z_E`.
    pub fn product_state(&self, rho: &CMatrix) -> Result<CMatrix> {
        if rho.dim() != (self.dim_s, self.dim_s) {
            return Err(Error::DimensionMismatch { expected: self.dim_s, found: rho.nrows() });
        }
        Ok(linalg::kron(rho, &self.free_bath_state()))
    }

    /// `A (x) I_E`.
    pub fn lift(&self, a: &CMatrix) -> CMatrix {
        linalg::kron(a, &linalg::identity(self.dim_b))
    }

    /// `tr_E W`.
    pub fn reduce(&self, w: &CMatrix) -> CMatrix {
        let nb = self.dim_b;
        CMatrix::from_shape_fn((self.dim_s, self.dim_s), |(i, j)| {
            (0..nb).map(|b| w[[i * nb + b, j * nb + b]]).sum()
        })
    }

    /// Reduced trajectory of `W` on the grid `n dt`, `n = 0..n_points`.
    pub fn evolve(&self, w0: &CMatrix, dt: f64, n_points: usize, mode: EvolutionMode) -> Result<Trajectory> {
        if w0.dim() != (self.dim(), self.dim()) {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: w0.nrows() });
        }
        let (d, nb) = (self.dim_s, self.dim_b);
        let v = &self.vectors;
        let block = |i: usize| v.slice(ndarray::s![i * nb..(i + 1) * nb, ..]);
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).collect();
        // Each reduced element is a fixed bilinear form in the phase factors,
        // so the weights are built once and every time point costs O(n^2).
        let values = match mode {
            EvolutionMode::TwoSided => {
                // rho_ij(t) = sum_kl W_kl (V_j^+ V_i)_lk exp(-i (E_k - E_l) t)
                let wt = linalg::dagger(v).dot(w0).dot(v);
                let weights: Vec<CMatrix> = pairs
                    .par_iter()
                    .map(|&(i, j)| {
                        let o = block(j).t().mapv(|z| z.conj()).dot(&block(i));
                        CMatrix::from_shape_fn(wt.dim(), |(k, l)| wt[[k, l]] * o[[l, k]])
                    })
                    .collect();
                (0..n_points)
                    .map(|n| {
                        let t = n as f64 * dt;
                        let ph = ndarray::Array1::from_iter(self.energies.iter().map(|e| C64::from_polar(1.0, -e * t)));
                        let phc = ph.mapv(|z| z.conj());
                        let mut m = linalg::zeros(d, d);
                        for (&(i, j), w) in pairs.iter().zip(&weights) {
                            m[[i, j]] = ph.dot(&w.dot(&phc));
                        }
                        m
                    })
                    .collect()
            }
            EvolutionMode::OneSidedRightBath => {
                // rho_ij(t) = sum_bk exp(-i E_b t) (W V)_(ib),k conj V_(jb),k exp(i E_k t)
                let wv = w0.dot(v);
                let weights: Vec<CMatrix> = pairs
                    .iter()
                    .map(|&(i, j)| {
                        CMatrix::from_shape_fn((nb, self.dim()), |(b, k)| wv[[i * nb + b, k]] * v[[j * nb + b, k]].conj())
                    })
                    .collect();
                (0..n_points)
                    .map(|n| {
                        let t = n as f64 * dt;
                        let right = ndarray::Array1::from_iter(self.energies.iter().map(|e| C64::from_polar(1.0, e * t)));
                        let left =
                            ndarray::Array1::from_iter(self.bath_energies.iter().map(|e| C64::from_polar(1.0, -e * t)));
                        let mut m = linalg::zeros(d, d);
                        for (&(i, j), w) in pairs.iter().zip(&weights) {
                            m[[i, j]] = left.dot(&w.dot(&right));
                        }
                        m
                    })
                    .collect()
            }
        };
        Trajectory::new(0.0, dt, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub dimension_cap: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { dimension_cap: DEFAULT_DIMENSION_CAP }
    }
}

/// Reduced dynamics of `R exp(-beta H) R^\dagger / norm` on the grid
/// `n dt`, `n = 0..n_points`.
pub fn exact_thermal_evolve(
    model: &HamiltonianModel,
    bath: &DiscretizedBath,
    prep: &PreparativeMap,
    dt: f64,
    n_points: usize,
    mode: EvolutionMode,
    opts: &OracleOptions,
) -> Result<Trajectory> {
    if !(dt > 0.0) || n_points == 0 {
        return Err(Error::InvalidParameter(format!("bad time grid (dt {dt}, {n_points} points)")));
    }
    let sys = ExactSystem::new(model, bath, opts.dimension_cap)?;
    let w0 = sys.prepare(&sys.thermal_state(), prep)?;
    sys.evolve(&w0, dt, n_points, mode)
}

/// Trajectories from the prepared correlated state and from the product of its
/// reduced state with the free bath, on the grid `n dt`, `n = 0..n_points`.
pub fn correlated_and_product(
    model: &HamiltonianModel,
    bath: &DiscretizedBath,
    prep: &PreparativeMap,
    dt: f64,
    n_points: usize,
    opts: &OracleOptions,
) -> Result<(Trajectory, Trajectory)> {
    let sys = ExactSystem::new(model, bath, opts.dimension_cap)?;
    let corr = sys.prepare(&sys.thermal_state(), prep)?;
    let product = sys.product_state(&sys.reduce(&corr))?;
    Ok((
        sys.evolve(&corr, dt, n_points, EvolutionMode::TwoSided)?,
        sys.evolve(&product, dt, n_points, EvolutionMode::TwoSided)?,
    ))
}

/// Coherence of the pure-dephasing model from a product initial state:
/// `coh0 exp(-i eps t) exp(-4 Re g(t))`.
pub fn analytic_dephasing_coherence(eps: f64, spec: &BathSpec, coh0: C64, t: f64) -> Result<C64> {
    let g = lineshape_function(spec, t)?;
    Ok(coh0 * C64::from_polar((-4.0 * g.re).exp(), -eps * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Absorption,
    Emission,
}

/// Dipole correlation of an uncoupled chromophore. Absorption is
/// `exp(-i eps t - g(t))`; emission, propagated from the relaxed excited state
/// with the ground-state index on the left, is `exp(i (eps - 2 lambda) t - g(t))`.
pub fn analytic_monomer_correlation(eps: f64, spec: &BathSpec, kind: SpectrumKind, t: f64) -> Result<C64> {
    let g = lineshape_function(spec, t)?;
    Ok(match kind {
        SpectrumKind::Absorption => (c(-g.re, -eps * t - g.im)).exp(),
        SpectrumKind::Emission => {
            let shift = eps - 2.0 * reorganization_energy(spec);
            (c(-g.re, shift * t - g.im)).exp()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ohmic(lambda: f64, omega_c: f64, beta: f64) -> BathSpec {
        BathSpec::ohmic_unexpanded(lambda, omega_c, beta).unwrap()
    }

    #[test]
    fn single_bin_holds_the_covered_weight() {
        let spec = ohmic(0.1, 2.0, 1.0);
        let b = discretize_bath(&spec, 1, 12.0).unwrap();
        let expected = density_integral(&spec, 12.0) - density_integral(&spec, 0.0);
        assert!((b.modes[0].1.powi(2) - expected).abs() < 1e-14);
        assert_eq!(b.modes[0].0, 6.0);
    }

    #[test]
    fn covered_weight_and_ordering() {
        let spec = ohmic(0.1, 2.0, 1.0);
        let b = discretize_bath(&spec, 20, 12.0).unwrap();
        let total = spec.lambda * spec.omega_c * spec.omega_c;
        let covered: f64 = b.modes.iter().map(|m| m.1 * m.1).sum();
        assert!(covered >= 0.95 * total);
        assert!((covered / total - (1.0 - 7.0 * (-6f64).exp())).abs() < 1e-12);
        assert!(b.modes.windows(2).all(|w| w[0].0 < w[1].0) && b.modes[0].0 > 0.0);
        assert!(discretize_bath(&spec, 20, 6.0).is_err());
        assert!(discretize_bath(&spec, 0, 12.0).is_err());
    }

    #[test]
    fn drude_tail_uses_reorganization_weight() {
        let spec = BathSpec::drude_lorentz_ht(0.5, 2.0, 1.0).unwrap();
        assert!(discretize_bath(&spec, 4, 20.0).is_err());
        let b = discretize_bath(&spec, 4, 40.0).unwrap();
        assert!(b.reorganization_energy() > 0.0);
    }

    #[test]
    fn closed_forms_at_zero_and_weak_coupling() {
        let spec = ohmic(0.1, 2.0, 1.0);
        let z = c(0.3, -0.2);
        assert_eq!(analytic_dephasing_coherence(1.0, &spec, z, 0.0).unwrap(), z);
        for kind in [SpectrumKind::Absorption, SpectrumKind::Emission] {
            assert!((analytic_monomer_correlation(1.0, &spec, kind, 0.0).unwrap() - 1.0).norm() < 1e-15);
        }
        let weak = ohmic(1e-12, 2.0, 1.0);
        for t in [0.5, 3.0, 10.0] {
            let a = analytic_monomer_correlation(1.3, &weak, SpectrumKind::Absorption, t).unwrap();
            assert!((a - C64::from_polar(1.0, -1.3 * t)).norm() < 1e-9);
            let a = analytic_monomer_correlation(1.3, &spec, SpectrumKind::Absorption, t).unwrap();
            let e = analytic_monomer_correlation(1.3, &spec, SpectrumKind::Emission, t).unwrap();
            assert!((a.norm() - e.norm()).abs() < 1e-14);
            let d = analytic_dephasing_coherence(1.0, &spec, z, t).unwrap();
            assert!(d.norm() <= z.norm());
        }
    }

    #[test]
    fn drude_dephasing_closed_form() {
        let spec = BathSpec::drude_lorentz_ht(0.5, 50.0, 0.2).unwrap();
        let a = std::f64::consts::PI * 0.5 / 0.2;
        for t in [0.01f64, 0.1, 1.0] {
            let expo = -4.0 * a / 2500.0 * (50.0 * t - 1.0 + (-50.0 * t).exp());
            let v = analytic_dephasing_coherence(1.0, &spec, c(1.0, 0.0), t).unwrap();
            assert!((v - C64::from_polar(expo.exp(), -t)).norm() < 1e-14);
        }
    }
}
