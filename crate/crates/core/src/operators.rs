//! Dense operator algebra on the open-system Hilbert space.
//!
//! Matrices are vectorized column-major everywhere in the crate:
//! `vec(M)[i + j*d] = M[i, j]`, so that `vec(L M R^\dagger) =
//! (conj(R) (x) L) vec(M)`.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};

/// Entrywise Hermiticity tolerance for a [`DensityMatrix`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Trace tolerance for a [`DensityMatrix`].
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest eigenvalue allowed in a [`DensityMatrix`].
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Relative Hermiticity tolerance for numerically produced matrices handed to
/// [`trace_distance`].
pub const NUMERICAL_HERMITIAN_TOL: f64 = 1e-8;

fn check_square(m: &CMatrix) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c || r == 0 {
        return Err(Error::NotSquare { rows: r, cols: c });
    }
    Ok(r)
}

/// A validated physical state: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        let defect = linalg::hermiticity_defect(m.view());
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian { defect });
        }
        let tr = linalg::trace(m.view());
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let lowest = linalg::eigvalsh(&m)?[0];
        if lowest < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {lowest:.3e}")));
        }
        Ok(Self(m))
    }

    /// Projector onto a normalized pure state.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("state vector has norm^2 {norm}")));
        }
        let n = psi.len();
        let m = Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj());
        Self::new(linalg::hermitian_part(&m))
    }

    pub fn from_populations(p: &[f64]) -> Result<Self> {
        let n = p.len();
        let mut m = linalg::zeros(n, n);
        for (i, &x) in p.iter().enumerate() {
            m[[i, i]] = C64::new(x, 0.0);
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

/// A one-sided reduced object with no trace or positivity constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOperator(CMatrix);

impl ReducedOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square(&m)?;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

/// Column-major stacking of a square matrix.
pub fn vectorize(m: &CMatrix) -> Result<CVector> {
    let d = check_square(m)?;
    Ok(Array1::from_shape_fn(d * d, |k| m[[k % d, k / d]]))
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &CVector) -> Result<CMatrix> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "vector length {} is not a perfect square",
            v.len()
        )));
    }
    Ok(Array2::from_shape_fn((d, d), |(i, j)| v[i + j * d]))
}

/// A linear map on a vector space of operator coefficients. For maps on the
/// full `d x d` operator space the vector length is `d^2`; maps restricted to
/// an invariant block act on that block's entries only.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOperator {
    matrix: CMatrix,
}

impl SuperOperator {
    pub fn from_matrix(matrix: CMatrix) -> Result<Self> {
        check_square(&matrix)?;
        Ok(Self { matrix })
    }

    pub fn identity(size: usize) -> Self {
        Self { matrix: linalg::identity(size) }
    }

    pub fn zeros(size: usize) -> Self {
        Self { matrix: linalg::zeros(size, size) }
    }

    /// The map `M -> L M R^\dagger`.
    pub fn sandwich(left: &CMatrix, right: &CMatrix) -> Result<Self> {
        let d = check_square(left)?;
        let e = check_square(right)?;
        if d != e {
            return Err(Error::DimensionMismatch { expected: d, found: e });
        }
        Ok(Self { matrix: linalg::kron(&right.mapv(|z| z.conj()), left) })
    }

    /// The unitary channel `M -> U M U^\dagger`.
    pub fn unitary(u: &CMatrix) -> Result<Self> {
        Self::sandwich(u, u)
    }

    /// Length of the vectors this map acts on.
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// System dimension `d` when the map acts on the full `d x d` space.
    pub fn dim(&self) -> Option<usize> {
        let d = (self.size() as f64).sqrt().round() as usize;
        (d * d == self.size()).then_some(d)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector> {
        if v.len() != self.size() {
            return Err(Error::DimensionMismatch { expected: self.size(), found: v.len() });
        }
        Ok(self.matrix.dot(v))
    }

    /// Apply to a `d x d` matrix via column-major vectorization.
    pub fn apply_to(&self, m: &CMatrix) -> Result<CMatrix> {
        unvectorize(&self.apply(&vectorize(m)?)?)
    }

    pub fn frobenius_norm(&self) -> f64 {
        linalg::frobenius(self.matrix.view())
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(Self { matrix: linalg::inverse(&self.matrix)? })
    }

    /// Trace-preservation defect `max_j |sum_i S[(i,i), j]  - tr(basis_j)|`
    /// for maps on the full space.
    pub fn trace_defect(&self) -> Option<f64> {
        let d = self.dim()?;
        let mut worst = 0.0_f64;
        for j in 0..self.size() {
            let tr: C64 = (0..d).map(|i| self.matrix[[i + i * d, j]]).sum();
            let expected = if j % d == j / d { 1.0 } else { 0.0 };
            worst = worst.max((tr - expected).norm());
        }
        Some(worst)
    }
}

impl std::ops::Sub for &SuperOperator {
    type Output = SuperOperator;
    fn sub(self, rhs: &SuperOperator) -> SuperOperator {
        SuperOperator { matrix: &self.matrix - &rhs.matrix }
    }
}

/// `(a o b)(rho) = a(b(rho))`.
pub fn compose_maps(a: &SuperOperator, b: &SuperOperator) -> Result<SuperOperator> {
    if a.size() != b.size() {
        return Err(Error::DimensionMismatch { expected: a.size(), found: b.size() });
    }
    Ok(SuperOperator { matrix: a.matrix.dot(&b.matrix) })
}

/// Trace distance `1/2 tr|A - B|`, from the eigenvalues of the Hermitian
/// difference.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    let d = check_square(a)?;
    let e = check_square(b)?;
    if d != e {
        return Err(Error::DimensionMismatch { expected: d, found: e });
    }
    for m in [a, b] {
        let scale = linalg::max_abs(m.view()).max(1.0);
        let defect = linalg::hermiticity_defect(m.view());
        if defect > NUMERICAL_HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { defect });
        }
    }
    let diff = linalg::hermitian_part(&(a - b));
    Ok(0.5 * linalg::eigvalsh(&diff)?.iter().map(|x| x.abs()).sum::<f64>())
}

/// A sequence of `d x d` matrices on the uniform grid `t0 + n dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    values: Vec<CMatrix>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, values: Vec<CMatrix>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid spacing {dt} must be positive")));
        }
        if let Some(first) = values.first() {
            let d = check_square(first)?;
            for v in &values {
                let e = check_square(v)?;
                if e != d {
                    return Err(Error::DimensionMismatch { expected: d, found: e });
                }
            }
        }
        Ok(Self { t0, dt, values })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.nrows())
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    pub fn values(&self) -> &[CMatrix] {
        &self.values
    }

    pub fn into_values(self) -> Vec<CMatrix> {
        self.values
    }

    pub fn last(&self) -> Option<&CMatrix> {
        self.values.last()
    }

    /// First `n` points.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values.iter().take(n).cloned().collect(),
        }
    }

    /// Scalar series `f(rho(t_n))`.
    pub fn map_scalar<F: Fn(&CMatrix) -> C64>(&self, f: F) -> Vec<C64> {
        self.values.iter().map(f).collect()
    }

    /// `true` when both grids have the same origin, spacing and length.
    pub fn same_grid(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (self.t0 - other.t0).abs() <= 1e-12 * self.dt.max(1.0)
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    /// CSV with header `t,re_00,im_00,re_01,im_01,...`, entries in row-major
    /// `(i, j)` order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut header = String::from("t");
        for i in 0..d {
            for j in 0..d {
                header.push_str(&format!(",re_{i}{j},im_{i}{j}"));
            }
        }
        writeln!(w, "{header}")?;
        for (n, m) in self.values.iter().enumerate() {
            let mut line = format!("{:.12e}", self.time(n));
            for z in m.iter() {
                line.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidParameter("empty trajectory CSV".into()))??;
        let ncols = header.split(',').count();
        if ncols < 3 || (ncols - 1) % 2 != 0 {
            return Err(Error::InvalidParameter(format!("bad trajectory header '{header}'")));
        }
        let d2 = (ncols - 1) / 2;
        let d = (d2 as f64).sqrt().round() as usize;
        if d * d != d2 {
            return Err(Error::InvalidParameter(format!("bad trajectory header '{header}'")));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("bad number '{s}': {e}")))
        };
        let mut times = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != ncols {
                return Err(Error::InvalidParameter(format!("row has {} fields", fields.len())));
            }
            times.push(parse(fields[0])?);
            let mut m = linalg::zeros(d, d);
            for k in 0..d2 {
                m[[k / d, k % d]] = C64::new(parse(fields[1 + 2 * k])?, parse(fields[2 + 2 * k])?);
            }
            values.push(m);
        }
        let t0 = times.first().copied().unwrap_or(0.0);
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
                return Err(Error::GridMismatch("CSV time column is not uniform".into()));
            }
        }
        Self::new(t0, dt, values)
    }
}

/// Trapezoidal integral of the pointwise trace distance over `[t0, t0 +
/// horizon]`. A horizon between grid points is handled by linear
/// interpolation of the distance.
pub fn cumulative_trace_distance(a: &Trajectory, b: &Trajectory, horizon: f64) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch("trajectories are sampled on different grids".into()));
    }
    if a.is_empty() {
        return Err(Error::GridMismatch("empty trajectory".into()));
    }
    let span = a.dt() * (a.len() - 1) as f64;
    if horizon < 0.0 || horizon > span * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} outside the trajectory span {span}"
        )));
    }
    let steps = horizon / a.dt();
    let full = (steps + 1e-9).floor() as usize;
    let n_needed = (full + 2).min(a.len());
    let dist: Vec<f64> = (0..n_needed)
        .map(|n| trace_distance(&a.values()[n], &b.values()[n]))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for n in 0..full {
        total += 0.5 * a.dt() * (dist[n] + dist[n + 1]);
    }
    let frac = steps - full as f64;
    if frac > 1e-9 && full + 1 < dist.len() {
        let end = dist[full] + frac * (dist[full + 1] - dist[full]);
        total += 0.5 * frac * a.dt() * (dist[full] + end);
    }
    Ok(total)
}

/// Orthonormal Hermitian basis of the `d x d` operator space: the diagonal
/// matrix units followed by symmetrized and antisymmetrized off-diagonal pairs.
pub fn hermitian_basis(d: usize) -> Vec<CMatrix> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::with_capacity(d * d);
    for i in 0..d {
        basis.push(linalg::matrix_unit(d, i, i));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut sym = linalg::zeros(d, d);
            sym[[i, j]] = C64::new(s, 0.0);
            sym[[j, i]] = C64::new(s, 0.0);
            basis.push(sym);
            let mut asym = linalg::zeros(d, d);
            asym[[i, j]] = C64::new(0.0, -s);
            asym[[j, i]] = C64::new(0.0, s);
            basis.push(asym);
        }
    }
    basis
}

/// Random density matrix from a Ginibre matrix; used by tests only, so the
/// generator is supplied by the caller.
#[doc(hidden)]
pub fn density_from_ginibre(g: &CMatrix) -> DensityMatrix {
    let m = g.dot(&linalg::dagger(g));
    let tr = linalg::trace(m.view()).re;
    let m = linalg::hermitian_part(&m.mapv(|z| z / tr));
    DensityMatrix(m)
}
