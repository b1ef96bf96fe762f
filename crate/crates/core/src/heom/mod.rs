//! Hierarchical equations of motion for correlation functions that are sums of
//! exponentials.
//!
//! For a coupling `Q (x) X` with `C(t) = <X(t)X> = sum_j a_j exp(-nu_j t)` and
//! `C*(t) = sum_j b_j exp(-nu_j t)` over a conjugation-closed rate set,
//!
//! ```text
//! d/dt rho_n = -i[H, rho_n] - (sum_j n_j nu_j) rho_n
//!              - i sum_j [Q_j, rho_{n+e_j}]
//!              - i sum_j n_j (a_j Q_j rho_{n-e_j} - b_j rho_{n-e_j} Q_j).
//! ```
//!
//! `rho_0` is the reduced operator; the same equations propagate one-sided
//! objects such as `mu rho`. Propagation is restricted to the smallest
//! rectangular block of system indices that contains the initial support and
//! is closed under `H` and every `Q`.

mod checkpoint;
pub mod index;
mod stationary;

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use index::IndexSet;
pub use stationary::{RelaxOptions, StationaryMethod};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::models::{HamiltonianModel, PreparativeMap};
use crate::operators::Trajectory;

/// One exponential of the hierarchy with its coupling operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeomTerm {
    pub a: C64,
    pub b: C64,
    pub rate: C64,
    pub coupling: usize,
}

/// Collect the expansion of every coupled bath into hierarchy terms, merging
/// equal rates and pairing each rate with its conjugate.
pub fn heom_terms(model: &HamiltonianModel) -> Result<Vec<HeomTerm>> {
    let mut terms = Vec::new();
    for (ci, cpl) in model.couplings.iter().enumerate() {
        let mut rates: Vec<(C64, C64)> = Vec::new();
        for t in &cpl.bath.expansion {
            let nu = t.rate();
            match rates.iter_mut().find(|(r, _)| (*r - nu).norm() <= 1e-10 * nu.norm()) {
                Some((_, a)) => *a += t.amplitude(),
                None => rates.push((nu, t.amplitude())),
            }
        }
        if rates.is_empty() {
            return Err(Error::InvalidParameter(format!("coupling {ci} has an empty bath expansion")));
        }
        for &(nu, a) in &rates {
            let partner = rates
                .iter()
                .find(|(r, _)| (*r - nu.conj()).norm() <= 1e-10 * nu.norm())
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("expansion rate {nu} has no conjugate partner"))
                })?;
            terms.push(HeomTerm { a, b: partner.1.conj(), rate: nu, coupling: ci });
        }
    }
    Ok(terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeomOptions {
    /// Truncation depth `L`: ADOs with `sum n > L` are zero.
    pub depth: usize,
    /// RK4 steps per output grid step.
    pub substeps: usize,
    /// Propagate ADOs rescaled by `1 / prod sqrt(n_k!) s_k^n_k`.
    pub scaled: bool,
    /// Restrict propagation to the invariant block of the initial support.
    pub restrict_sector: bool,
    /// Normalized ADO norm treated as a blow-up.
    pub max_norm: f64,
}

impl Default for HeomOptions {
    fn default() -> Self {
        Self { depth: 8, substeps: 10, scaled: false, restrict_sector: true, max_norm: 1e6 }
    }
}

/// Auxiliary density operators of one hierarchy, row-major `d x d` blocks in
/// lexicographic multi-index order.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    dim: usize,
    terms: Vec<HeomTerm>,
    index: Arc<IndexSet>,
    ados: Vec<C64>,
    t: f64,
}

impl HierarchyState {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.index.depth()
    }

    pub fn terms(&self) -> &[HeomTerm] {
        &self.terms
    }

    pub fn index(&self) -> &IndexSet {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn raw(&self) -> &[C64] {
        &self.ados
    }

    pub fn ado(&self, k: usize) -> CMatrix {
        let d2 = self.dim * self.dim;
        ndarray::Array2::from_shape_vec((self.dim, self.dim), self.ados[k * d2..(k + 1) * d2].to_vec())
            .expect("ADO block has d*d entries")
    }

    /// The physical reduced operator (ADO with all-zero index).
    pub fn reduced_state(&self) -> CMatrix {
        self.ado(0)
    }

    /// `ADO_n <- L ADO_n R^\dagger` for every `n`.
    pub fn apply_system_operator(&self, left: &CMatrix, right: &CMatrix) -> Result<Self> {
        let d = self.dim;
        for m in [left, right] {
            if m.dim() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, found: m.nrows() });
            }
        }
        let rd = linalg::dagger(right);
        let mut out = self.clone();
        let d2 = d * d;
        out.ados.par_chunks_mut(d2).zip(self.ados.par_chunks(d2)).for_each(|(dst, src)| {
            if src.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                return;
            }
            let x = ndarray::ArrayView2::from_shape((d, d), src).expect("d*d block");
            let y = left.dot(&x).dot(&rd);
            dst.iter_mut().zip(y.iter()).for_each(|(a, b)| *a = *b);
        });
        Ok(out)
    }

    /// Apply a preparative map to every ADO, renormalizing by the trace of the
    /// reduced operator when requested.
    pub fn apply_preparation(&self, prep: &PreparativeMap) -> Result<Self> {
        let mut acc: Option<Self> = None;
        for k in &prep.kraus {
            let s = self.apply_system_operator(k, k)?;
            acc = Some(match acc {
                None => s,
                Some(mut a) => {
                    a.ados.iter_mut().zip(&s.ados).for_each(|(x, y)| *x += y);
                    a
                }
            });
        }
        let mut out = acc.expect("preparation has at least one Kraus operator");
        if prep.normalize {
            out.normalize_trace()?;
        }
        Ok(out)
    }

    /// Divide every ADO by the trace of the reduced operator.
    pub fn normalize_trace(&mut self) -> Result<()> {
        let tr = linalg::trace(self.reduced_state().view());
        if tr.norm() < 1e-300 {
            return Err(Error::InvalidState("reduced operator has zero trace".into()));
        }
        self.ados.iter_mut().for_each(|z| *z /= tr);
        Ok(())
    }

    /// Sum of Frobenius norms of all ADOs except the reduced operator.
    pub fn auxiliary_weight(&self) -> f64 {
        let d2 = self.dim * self.dim;
        self.ados[d2..].chunks(d2).map(|b| b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).sum()
    }
}

/// A hierarchy for a given model, depth and integrator settings.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    dim: usize,
    h: CMatrix,
    ops: Vec<CMatrix>,
    terms: Vec<HeomTerm>,
    by_coupling: Vec<Vec<usize>>,
    scales: Vec<f64>,
    index: Arc<IndexSet>,
    opts: HeomOptions,
}

/// Rows and columns of the propagated block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sector {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Hierarchy {
    pub fn new(model: &HamiltonianModel, opts: HeomOptions) -> Result<Self> {
        model.validate()?;
        if opts.depth < 1 {
            return Err(Error::InvalidParameter("hierarchy depth must be at least 1".into()));
        }
        if opts.substeps < 1 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        let terms = heom_terms(model)?;
        let count = index::index_count(terms.len(), opts.depth);
        if count > 5_000_000 {
            return Err(Error::InvalidParameter(format!("hierarchy with {count} ADOs is too large")));
        }
        let mut by_coupling = vec![Vec::new(); model.couplings.len()];
        for (j, t) in terms.iter().enumerate() {
            by_coupling[t.coupling].push(j);
        }
        let scales = terms.iter().map(|t| t.a.norm().max(t.b.norm()).sqrt().max(1e-300)).collect();
        let index = Arc::new(IndexSet::new(terms.len(), opts.depth));
        Ok(Self {
            dim: model.dim(),
            h: model.h_sys.clone(),
            ops: model.couplings.iter().map(|c| c.op.clone()).collect(),
            terms,
            by_coupling,
            scales,
            index,
            opts,
        })
    }

    pub fn options(&self) -> &HeomOptions {
        &self.opts
    }

    pub fn terms(&self) -> &[HeomTerm] {
        &self.terms
    }

    pub fn n_ados(&self) -> usize {
        self.index.len()
    }

    /// `rho (x) rho_E`: the reduced operator in ADO 0, every other ADO zero.
    pub fn init_product_state(&self, rho: &CMatrix) -> Result<HierarchyState> {
        let d = self.dim;
        if rho.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: rho.nrows() });
        }
        let mut ados = vec![C64::new(0.0, 0.0); self.index.len() * d * d];
        for (dst, src) in ados.iter_mut().zip(rho.iter()) {
            *dst = *src;
        }
        Ok(HierarchyState { dim: d, terms: self.terms.clone(), index: self.index.clone(), ados, t: 0.0 })
    }

    fn check_state(&self, state: &HierarchyState) -> Result<()> {
        if state.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: state.dim });
        }
        if state.index.len() != self.index.len() || state.index.n_terms() != self.terms.len() {
            return Err(Error::InvalidParameter("state hierarchy does not match the model".into()));
        }
        let same = state.terms.iter().zip(&self.terms).all(|(a, b)| {
            a.coupling == b.coupling
                && (a.a - b.a).norm() <= 1e-12 * b.a.norm().max(1e-300)
                && (a.rate - b.rate).norm() <= 1e-12 * b.rate.norm()
        });
        if !same {
            return Err(Error::InvalidParameter("state bath terms do not match the model".into()));
        }
        Ok(())
    }

    /// `prod_k sqrt(n_k!) s_k^n_k` for ADO `k`.
    fn normalization(&self, k: usize) -> f64 {
        self.index
            .get(k)
            .iter()
            .zip(&self.scales)
            .map(|(&n, &s)| (1..=n as u32).map(|m| (m as f64).sqrt() * s).product::<f64>())
            .product()
    }

    /// Smallest closed block containing the support of `state`.
    pub fn sector(&self, state: &HierarchyState) -> Sector {
        let d = self.dim;
        if !self.opts.restrict_sector {
            return Sector { rows: (0..d).collect(), cols: (0..d).collect() };
        }
        // Connected components of the coupling graph.
        let mut comp: Vec<usize> = (0..d).collect();
        fn root(comp: &mut [usize], mut i: usize) -> usize {
            while comp[i] != i {
                comp[i] = comp[comp[i]];
                i = comp[i];
            }
            i
        }
        for m in std::iter::once(&self.h).chain(&self.ops) {
            for i in 0..d {
                for j in 0..d {
                    if i != j && m[[i, j]] != C64::new(0.0, 0.0) {
                        let (a, b) = (root(&mut comp, i), root(&mut comp, j));
                        comp[a] = b;
                    }
                }
            }
        }
        let mut row_hit = vec![false; d];
        let mut col_hit = vec![false; d];
        for block in state.ados.chunks(d * d) {
            for i in 0..d {
                for j in 0..d {
                    if block[i * d + j] != C64::new(0.0, 0.0) {
                        row_hit[root(&mut comp, i)] = true;
                        col_hit[root(&mut comp, j)] = true;
                    }
                }
            }
        }
        let rows = (0..d).filter(|&i| row_hit[root(&mut comp, i)]).collect();
        let cols = (0..d).filter(|&j| col_hit[root(&mut comp, j)]).collect();
        Sector { rows, cols }
    }

    fn kernel(&self, sector: &Sector, scaled: bool) -> Kernel<'_> {
        let sub = |m: &CMatrix, a: &[usize], b: &[usize]| -> Vec<C64> {
            a.iter().flat_map(|&i| b.iter().map(move |&j| m[[i, j]])).collect()
        };
        let (r, c) = (sector.rows.len(), sector.cols.len());
        let gamma = (0..self.index.len())
            .map(|k| self.index.get(k).iter().zip(&self.terms).map(|(&n, t)| t.rate * n as f64).sum())
            .collect();
        Kernel {
            index: &self.index,
            terms: &self.terms,
            by_coupling: &self.by_coupling,
            scales: &self.scales,
            scaled,
            r,
            c,
            h_r: sub(&self.h, &sector.rows, &sector.rows),
            h_c: sub(&self.h, &sector.cols, &sector.cols),
            q_r: self.ops.iter().map(|q| sub(q, &sector.rows, &sector.rows)).collect(),
            q_c: self.ops.iter().map(|q| sub(q, &sector.cols, &sector.cols)).collect(),
            gamma,
        }
    }

    /// Working vector for a sector, divided by the ADO normalization when
    /// `scaled`.
    fn gather(&self, state: &HierarchyState, sector: &Sector, scaled: bool) -> Vec<C64> {
        let d = self.dim;
        let (r, c) = (sector.rows.len(), sector.cols.len());
        let mut x = vec![C64::new(0.0, 0.0); self.index.len() * r * c];
        x.par_chunks_mut((r * c).max(1)).enumerate().for_each(|(k, dst)| {
            let f = if scaled { 1.0 / self.normalization(k) } else { 1.0 };
            let src = &state.ados[k * d * d..(k + 1) * d * d];
            for (a, &i) in sector.rows.iter().enumerate() {
                for (b, &j) in sector.cols.iter().enumerate() {
                    dst[a * c + b] = src[i * d + j] * f;
                }
            }
        });
        x
    }

    fn scatter(&self, x: &[C64], sector: &Sector, scaled: bool, state: &mut HierarchyState) {
        let d = self.dim;
        let (r, c) = (sector.rows.len(), sector.cols.len());
        state.ados.par_chunks_mut(d * d).enumerate().for_each(|(k, dst)| {
            let f = if scaled { self.normalization(k) } else { 1.0 };
            let src = &x[k * r * c..(k + 1) * r * c];
            for (a, &i) in sector.rows.iter().enumerate() {
                for (b, &j) in sector.cols.iter().enumerate() {
                    dst[i * d + j] = src[a * c + b] * f;
                }
            }
        });
    }

    /// Largest ADO norm after rescaling to the normalized representation.
    fn normalized_max(&self, x: &[C64], block: usize, scaled: bool) -> f64 {
        x.par_chunks(block.max(1))
            .enumerate()
            .map(|(k, b)| {
                let n = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if scaled { n } else { n / self.normalization(k) }
            })
            .reduce(|| 0.0, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
    }

    /// `max_n |d rho_n / dt|_F` in the normalized representation.
    pub fn derivative_norm(&self, state: &HierarchyState) -> Result<f64> {
        self.check_state(state)?;
        let sector = self.sector(state);
        let kernel = self.kernel(&sector, true);
        let x = self.gather(state, &sector, true);
        let mut dx = vec![C64::new(0.0, 0.0); x.len()];
        kernel.apply(&x, &mut dx);
        Ok(self.normalized_max(&dx, sector.rows.len() * sector.cols.len(), true))
    }

    /// Propagate on the grid `t0 + n dt`, `n = 0..n_points`; returns the
    /// reduced trajectory (including the initial point) and the final state.
    pub fn propagate(
        &self,
        state: &HierarchyState,
        dt: f64,
        n_points: usize,
    ) -> Result<(Trajectory, HierarchyState)> {
        self.check_state(state)?;
        if !(dt > 0.0 && dt.is_finite()) || n_points == 0 {
            return Err(Error::InvalidParameter(format!("bad time grid (dt {dt}, {n_points} points)")));
        }
        let scaled = self.opts.scaled;
        let sector = self.sector(state);
        let kernel = self.kernel(&sector, scaled);
        let block = sector.rows.len() * sector.cols.len();
        let mut x = self.gather(state, &sector, scaled);
        let mut rk = Rk4::new(x.len());
        let h = dt / self.opts.substeps as f64;
        let mut out = state.clone();
        let mut values = Vec::with_capacity(n_points);
        values.push(state.reduced_state());
        for step in 1..n_points {
            for _ in 0..self.opts.substeps {
                rk.step(&kernel, &mut x, h);
            }
            let norm = self.normalized_max(&x, block, scaled);
            if !(norm <= self.opts.max_norm) {
                return Err(Error::Instability { norm, time: state.t + step as f64 * dt });
            }
            values.push(reduced_from_block(&x, &sector, self.dim, 1.0));
        }
        self.scatter(&x, &sector, scaled, &mut out);
        out.t = state.t + (n_points - 1) as f64 * dt;
        Ok((Trajectory::new(state.t, dt, values)?, out))
    }

    /// Relax `seed` to the stationary state of its sector.
    pub fn relax_to_stationary(&self, seed: &HierarchyState, opts: &RelaxOptions) -> Result<HierarchyState> {
        stationary::relax(self, seed, opts)
    }

    /// Global thermal state, relaxed from the system Gibbs state times the
    /// bath equilibrium.
    pub fn thermal_state(&self, beta: f64, opts: &RelaxOptions) -> Result<HierarchyState> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        let seed = self.init_product_state(&linalg::gibbs(&self.h, beta)?)?;
        self.relax_to_stationary(&seed, opts)
    }
}

fn reduced_from_block(x: &[C64], sector: &Sector, d: usize, f: f64) -> CMatrix {
    let c = sector.cols.len();
    let mut m = linalg::zeros(d, d);
    for (a, &i) in sector.rows.iter().enumerate() {
        for (b, &j) in sector.cols.iter().enumerate() {
            m[[i, j]] = x[a * c + b] * f;
        }
    }
    m
}

/// Right-hand side of the hierarchy restricted to one sector.
struct Kernel<'a> {
    index: &'a IndexSet,
    terms: &'a [HeomTerm],
    by_coupling: &'a [Vec<usize>],
    scales: &'a [f64],
    scaled: bool,
    r: usize,
    c: usize,
    h_r: Vec<C64>,
    h_c: Vec<C64>,
    q_r: Vec<Vec<C64>>,
    q_c: Vec<Vec<C64>>,
    gamma: Vec<C64>,
}

const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

impl Kernel<'_> {
    fn block(&self) -> usize {
        self.r * self.c
    }

    /// Coupling factors `(raise, lower)` for term `j` of ADO index `n`.
    fn factors(&self, n: &[u8], j: usize) -> (f64, f64) {
        let nj = n[j] as f64;
        if self.scaled {
            ((nj + 1.0).sqrt() * self.scales[j], nj.sqrt() / self.scales[j])
        } else {
            (1.0, nj)
        }
    }

    /// `out += coef * A x` with `A` of size `r x r`.
    fn left(&self, a: &[C64], x: &[C64], coef: C64, out: &mut [C64]) {
        let (r, c) = (self.r, self.c);
        for i in 0..r {
            for l in 0..r {
                let f = a[i * r + l];
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                let f = f * coef;
                for j in 0..c {
                    out[i * c + j] += f * x[l * c + j];
                }
            }
        }
    }

    /// `out += coef * x B` with `B` of size `c x c`.
    fn right(&self, b: &[C64], x: &[C64], coef: C64, out: &mut [C64]) {
        let (r, c) = (self.r, self.c);
        for l in 0..c {
            for j in 0..c {
                let f = b[l * c + j];
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                let f = f * coef;
                for i in 0..r {
                    out[i * c + j] += f * x[i * c + l];
                }
            }
        }
    }

    fn apply_one(&self, k: usize, x: &[C64], out: &mut [C64], p: &mut [C64], y: &mut [C64], z: &mut [C64]) {
        let bs = self.block();
        let xk = &x[k * bs..(k + 1) * bs];
        let g = -self.gamma[k];
        for (o, v) in out.iter_mut().zip(xk) {
            *o = g * v;
        }
        self.left(&self.h_r, xk, MINUS_I, out);
        self.right(&self.h_c, xk, -MINUS_I, out);
        let n = self.index.get(k);
        for (cc, js) in self.by_coupling.iter().enumerate() {
            let zero = C64::new(0.0, 0.0);
            p.fill(zero);
            y.fill(zero);
            z.fill(zero);
            let (mut any_p, mut any_m) = (false, false);
            for &j in js {
                let (fp, fm) = self.factors(n, j);
                if let Some(up) = self.index.plus(k, j) {
                    any_p = true;
                    for (a, v) in p.iter_mut().zip(&x[up * bs..(up + 1) * bs]) {
                        *a += v * fp;
                    }
                }
                if let Some(dn) = self.index.minus(k, j) {
                    any_m = true;
                    let (fa, fb) = (self.terms[j].a * fm, self.terms[j].b * fm);
                    for ((ya, za), v) in y.iter_mut().zip(z.iter_mut()).zip(&x[dn * bs..(dn + 1) * bs]) {
                        *ya += fa * v;
                        *za += fb * v;
                    }
                }
            }
            if any_p {
                self.left(&self.q_r[cc], p, MINUS_I, out);
                self.right(&self.q_c[cc], p, -MINUS_I, out);
            }
            if any_m {
                self.left(&self.q_r[cc], y, MINUS_I, out);
                self.right(&self.q_c[cc], z, -MINUS_I, out);
            }
        }
    }

    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let bs = self.block();
        if bs == 0 {
            return;
        }
        let n = self.index.len();
        let per_chunk = (n / (8 * rayon::current_num_threads())).clamp(8, 4096);
        out.par_chunks_mut(bs * per_chunk).enumerate().for_each(|(ci, chunk)| {
            let mut p = vec![C64::new(0.0, 0.0); bs];
            let mut y = p.clone();
            let mut z = p.clone();
            for (local, o) in chunk.chunks_mut(bs).enumerate() {
                self.apply_one(ci * per_chunk + local, x, o, &mut p, &mut y, &mut z);
            }
        });
    }

    /// Visit every matrix element `(row, col, value)` of the kernel, in the
    /// working representation. Rows and columns index `k * r * c + i * c + j`.
    fn for_each_entry<F: FnMut(usize, usize, C64)>(&self, mut f: F) {
        let (r, c, bs) = (self.r, self.c, self.block());
        for k in 0..self.index.len() {
            let n = self.index.get(k);
            let base = k * bs;
            for i in 0..r {
                for j in 0..c {
                    let row = base + i * c + j;
                    f(row, row, -self.gamma[k]);
                    for l in 0..r {
                        let v = self.h_r[i * r + l];
                        if v != C64::new(0.0, 0.0) {
                            f(row, base + l * c + j, MINUS_I * v);
                        }
                    }
                    for l in 0..c {
                        let v = self.h_c[l * c + j];
                        if v != C64::new(0.0, 0.0) {
                            f(row, base + i * c + l, -MINUS_I * v);
                        }
                    }
                    for (jt, term) in self.terms.iter().enumerate() {
                        let (fp, fm) = self.factors(n, jt);
                        let (qr, qc) = (&self.q_r[term.coupling], &self.q_c[term.coupling]);
                        if let Some(up) = self.index.plus(k, jt) {
                            let ub = up * bs;
                            for l in 0..r {
                                let v = qr[i * r + l];
                                if v != C64::new(0.0, 0.0) {
                                    f(row, ub + l * c + j, MINUS_I * v * fp);
                                }
                            }
                            for l in 0..c {
                                let v = qc[l * c + j];
                                if v != C64::new(0.0, 0.0) {
                                    f(row, ub + i * c + l, -MINUS_I * v * fp);
                                }
                            }
                        }
                        if let Some(dn) = self.index.minus(k, jt) {
                            let db = dn * bs;
                            for l in 0..r {
                                let v = qr[i * r + l];
                                if v != C64::new(0.0, 0.0) {
                                    f(row, db + l * c + j, MINUS_I * v * term.a * fm);
                                }
                            }
                            for l in 0..c {
                                let v = qc[l * c + j];
                                if v != C64::new(0.0, 0.0) {
                                    f(row, db + i * c + l, -MINUS_I * v * term.b * fm);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Rk4 {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    fn step(&mut self, kernel: &Kernel<'_>, x: &mut [C64], h: f64) {
        let axpy = |dst: &mut [C64], x: &[C64], k: &[C64], s: f64| {
            dst.par_iter_mut().zip(x.par_iter().zip(k.par_iter())).for_each(|(d, (a, b))| *d = a + b * s);
        };
        kernel.apply(x, &mut self.k1);
        axpy(&mut self.tmp, x, &self.k1, 0.5 * h);
        kernel.apply(&self.tmp, &mut self.k2);
        axpy(&mut self.tmp, x, &self.k2, 0.5 * h);
        kernel.apply(&self.tmp, &mut self.k3);
        axpy(&mut self.tmp, x, &self.k3, h);
        kernel.apply(&self.tmp, &mut self.k4);
        let (k1, k2, k3, k4) = (&self.k1, &self.k2, &self.k3, &self.k4);
        x.par_iter_mut().enumerate().for_each(|(i, v)| {
            *v += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        });
    }
}

/// Size the global thread pool from `KF_THREADS` (default: all cores). Has no
/// effect once the pool exists.
pub fn init_threads() {
    if let Some(n) = std::env::var("KF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

#[doc(hidden)]
pub fn kernel_matrix_for_tests(h: &Hierarchy, state: &HierarchyState, scaled: bool) -> (Vec<Vec<C64>>, Vec<C64>, Vec<C64>) {
    let sector = h.sector(state);
    let kernel = h.kernel(&sector, scaled);
    let x = h.gather(state, &sector, scaled);
    let n = x.len();
    let mut dense = vec![vec![C64::new(0.0, 0.0); n]; n];
    kernel.for_each_entry(|r, col, v| dense[r][col] += v);
    let mut dx = vec![C64::new(0.0, 0.0); n];
    kernel.apply(&x, &mut dx);
    (dense, x, dx)
}
