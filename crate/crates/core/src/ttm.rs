//! Transfer-tensor propagation.
//!
//! Dynamical maps `E_k` learned from product-state samples define tensors
//! `T_k = E_k - sum_{m<k} T_{k-m} E_m`. A correlated sample `rho(t_n)` then
//! yields the inhomogeneity `I_n = rho(t_n) - sum_k T_k rho(t_{n-k})`; once
//! both have decayed, `rho(t_n) = sum_k T_k rho(t_{n-k})` continues the sample.

use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, GateFailure, Result};
use crate::io::{read_container, write_container};
use crate::linalg::{self, CMatrix, CVector};
use crate::operators::{SuperOperator, Trajectory};

/// Largest acceptable condition number of the basis Gram matrix.
const MAX_GRAM_CONDITION: f64 = 1e12;

/// Norms at or below this are round-off and count as fully decayed.
pub const NOISE_FLOOR: f64 = 1e-10;

/// A rectangular block of a `dim x dim` operator space. Block entries are
/// vectorized column-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subspace {
    pub dim: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Subspace {
    pub fn full(dim: usize) -> Self {
        Self { dim, rows: (0..dim).collect(), cols: (0..dim).collect() }
    }

    pub fn block(dim: usize, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if rows.is_empty() || cols.is_empty() || rows.iter().chain(&cols).any(|&i| i >= dim) {
            return Err(Error::InvalidParameter(format!("block {rows:?} x {cols:?} does not fit dimension {dim}")));
        }
        Ok(Self { dim, rows, cols })
    }

    /// Number of block entries.
    pub fn size(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_full(&self) -> bool {
        *self == Self::full(self.dim)
    }

    pub fn vectorize(&self, m: &CMatrix) -> Result<CVector> {
        if m.dim() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, found: m.nrows() });
        }
        Ok(self.cols.iter().flat_map(|&j| self.rows.iter().map(move |&i| m[[i, j]])).collect())
    }

    /// Full matrix with the block filled from `v` and zeros elsewhere.
    pub fn unvectorize(&self, v: &CVector) -> Result<CMatrix> {
        if v.len() != self.size() {
            return Err(Error::DimensionMismatch { expected: self.size(), found: v.len() });
        }
        let r = self.rows.len();
        let mut m = linalg::zeros(self.dim, self.dim);
        for (b, &j) in self.cols.iter().enumerate() {
            for (a, &i) in self.rows.iter().enumerate() {
                m[[i, j]] = v[a + b * r];
            }
        }
        Ok(m)
    }

    /// Matrix units `|i><j|` of the block, in vectorization order.
    pub fn matrix_unit_basis(&self) -> Vec<CMatrix> {
        self.cols
            .iter()
            .flat_map(|&j| self.rows.iter().map(move |&i| linalg::matrix_unit(self.dim, i, j)))
            .collect()
    }

    /// Hermitian basis for square blocks, matrix units otherwise.
    pub fn default_basis(&self) -> Vec<CMatrix> {
        if self.rows != self.cols {
            return self.matrix_unit_basis();
        }
        crate::operators::hermitian_basis(self.rows.len())
            .into_iter()
            .map(|small| {
                let mut m = linalg::zeros(self.dim, self.dim);
                for (a, &i) in self.rows.iter().enumerate() {
                    for (b, &j) in self.rows.iter().enumerate() {
                        m[[i, j]] = small[[a, b]];
                    }
                }
                m
            })
            .collect()
    }
}

/// `E_1..E_n` on a uniform grid.
#[derive(Debug, Clone)]
pub struct DynamicalMapSeries {
    pub dt: f64,
    pub maps: Vec<SuperOperator>,
    pub subspace: Subspace,
    pub gram_condition: f64,
}

/// Learn `E_k`, `k = 1..=n_steps`, by propagating every basis element with
/// `sampler`, which must return a trajectory on the grid `n dt`,
/// `n = 0..=n_steps` (longer trajectories are truncated).
pub fn learn_maps<F>(
    sampler: F,
    basis: &[CMatrix],
    subspace: &Subspace,
    dt: f64,
    n_steps: usize,
) -> Result<DynamicalMapSeries>
where
    F: Fn(&CMatrix) -> Result<Trajectory> + Sync,
{
    let size = subspace.size();
    if basis.len() != size {
        return Err(Error::InvalidParameter(format!(
            "basis has {} elements, the subspace needs {size}",
            basis.len()
        )));
    }
    if n_steps == 0 {
        return Err(Error::InvalidParameter("at least one map is required".into()));
    }
    let mut b = linalg::zeros(size, size);
    for (m, elem) in basis.iter().enumerate() {
        b.column_mut(m).assign(&subspace.vectorize(elem)?);
    }
    let gram = linalg::dagger(&b).dot(&b);
    let ev = linalg::eigvalsh(&gram)?;
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let b_inv = linalg::inverse(&b)?;

    let samples: Vec<Trajectory> = basis.par_iter().map(&sampler).collect::<Result<_>>()?;
    for s in &samples {
        if (s.dt() - dt).abs() > 1e-12 * dt || s.len() < n_steps + 1 {
            return Err(Error::GridMismatch(format!(
                "sampler returned {} points at dt {}, expected {} at dt {dt}",
                s.len(),
                s.dt(),
                n_steps + 1
            )));
        }
    }
    let maps = (1..=n_steps)
        .map(|k| {
            let mut s = linalg::zeros(size, size);
            for (m, traj) in samples.iter().enumerate() {
                s.column_mut(m).assign(&subspace.vectorize(&traj.values()[k])?);
            }
            SuperOperator::from_matrix(s.dot(&b_inv))
        })
        .collect::<Result<_>>()?;
    Ok(DynamicalMapSeries { dt, maps, subspace: subspace.clone(), gram_condition: condition })
}

#[derive(Debug, Clone)]
pub struct TransferTensors {
    pub dt: f64,
    pub tensors: Vec<SuperOperator>,
    pub norms: Vec<f64>,
    pub subspace: Subspace,
}

impl TransferTensors {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// `E_k = sum_{m<k} T_{k-m} E_m + T_k`, rebuilt from the tensors.
    pub fn reconstruct_maps(&self) -> Vec<SuperOperator> {
        let mut maps: Vec<CMatrix> = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let mut e = self.tensors[k].matrix().clone();
            for m in 0..k {
                e = e + self.tensors[k - 1 - m].matrix().dot(&maps[m]);
            }
            maps.push(e);
        }
        maps.into_iter().map(|m| SuperOperator::from_matrix(m).expect("square")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = TensorHeader {
            kind: "transfer_tensors".into(),
            dt: self.dt,
            size: self.subspace.size(),
            count: self.len(),
            subspace: self.subspace.clone(),
        };
        let data: Vec<C64> = self.tensors.iter().flat_map(|t| t.matrix().iter().cloned().collect::<Vec<_>>()).collect();
        write_container(path, &header, &data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, data): (TensorHeader, Vec<C64>) = read_container(path)?;
        if h.kind != "transfer_tensors" || h.size != h.subspace.size() || data.len() != h.count * h.size * h.size {
            return Err(Error::InvalidState("file does not hold transfer tensors".into()));
        }
        let tensors: Vec<SuperOperator> = data
            .chunks_exact(h.size * h.size)
            .map(|c| SuperOperator::from_matrix(CMatrix::from_shape_vec((h.size, h.size), c.to_vec()).expect("size")))
            .collect::<Result<_>>()?;
        let norms = tensors.iter().map(|t| t.frobenius_norm()).collect();
        Ok(Self { dt: h.dt, tensors, norms, subspace: h.subspace })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    kind: String,
    dt: f64,
    size: usize,
    count: usize,
    subspace: Subspace,
}

pub fn tensors_from_maps(maps: &DynamicalMapSeries) -> Result<TransferTensors> {
    if maps.maps.is_empty() {
        return Err(Error::InvalidParameter("map series is empty".into()));
    }
    let mut tensors: Vec<CMatrix> = Vec::with_capacity(maps.maps.len());
    for k in 0..maps.maps.len() {
        let mut t = maps.maps[k].matrix().clone();
        for m in 0..k {
            t = t - tensors[k - 1 - m].dot(maps.maps[m].matrix());
        }
        tensors.push(t);
    }
    let tensors: Vec<SuperOperator> =
        tensors.into_iter().map(SuperOperator::from_matrix).collect::<Result<_>>()?;
    let norms = tensors.iter().map(|t| t.frobenius_norm()).collect();
    Ok(TransferTensors { dt: maps.dt, tensors, norms, subspace: maps.subspace.clone() })
}

#[derive(Debug, Clone)]
pub struct InhomogeneousSeries {
    pub dt: f64,
    /// `I_1..I_n` as full matrices, zero outside the subspace.
    pub terms: Vec<CMatrix>,
    pub norms: Vec<f64>,
}

fn check_grid(tensors: &TransferTensors, sample: &Trajectory) -> Result<()> {
    if (sample.dt() - tensors.dt).abs() > 1e-12 * tensors.dt {
        return Err(Error::GridMismatch(format!("sample dt {} differs from tensor dt {}", sample.dt(), tensors.dt)));
    }
    if sample.is_empty() {
        return Err(Error::InvalidParameter("sample is empty".into()));
    }
    if sample.dim() != tensors.subspace.dim {
        return Err(Error::DimensionMismatch { expected: tensors.subspace.dim, found: sample.dim() });
    }
    Ok(())
}

/// `sum_{k=1}^{min(n, K)} T_k x_{n-k}`.
fn memory_sum(tensors: &TransferTensors, history: &[CVector], n: usize) -> CVector {
    let mut acc = Array1::zeros(tensors.subspace.size());
    for k in 1..=n.min(tensors.len()) {
        acc = acc + tensors.tensors[k - 1].matrix().dot(&history[n - k]);
    }
    acc
}

pub fn inhomogeneity(tensors: &TransferTensors, sample: &Trajectory) -> Result<InhomogeneousSeries> {
    check_grid(tensors, sample)?;
    let sub = &tensors.subspace;
    let xs: Vec<CVector> = sample.values().iter().map(|m| sub.vectorize(m)).collect::<Result<_>>()?;
    let terms: Vec<CMatrix> = (1..xs.len())
        .map(|n| sub.unvectorize(&(&xs[n] - &memory_sum(tensors, &xs, n))))
        .collect::<Result<_>>()?;
    let norms = terms.iter().map(|m| linalg::frobenius(m.view())).collect();
    Ok(InhomogeneousSeries { dt: tensors.dt, terms, norms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateThresholds {
    pub tensor_tail: f64,
    pub inhom_tail: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self { tensor_tail: 1e-3, inhom_tail: 1e-2 }
    }
}

/// Number of trailing tensors whose norms form the tensor tail.
pub fn tail_window(k: usize) -> usize {
    (k / 10).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub k: usize,
    pub t: f64,
    pub norm_t: Option<f64>,
    pub norm_i: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    /// Largest norm in the trailing window over the largest norm.
    pub tensor_ratio: f64,
    /// Last inhomogeneity norm over the largest one (0 without terms).
    pub inhom_ratio: f64,
    pub thresholds: GateThresholds,
    pub tensor_pass: bool,
    pub inhom_pass: bool,
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.tensor_pass && self.inhom_pass
    }

    /// The failing threshold, tensors first.
    pub fn check(&self) -> Result<()> {
        if !self.tensor_pass {
            return Err(Error::DecayGate {
                which: GateFailure::TensorTail,
                ratio: self.tensor_ratio,
                threshold: self.thresholds.tensor_tail,
            });
        }
        if !self.inhom_pass {
            return Err(Error::DecayGate {
                which: GateFailure::InhomogeneityTail,
                ratio: self.inhom_ratio,
                threshold: self.thresholds.inhom_tail,
            });
        }
        Ok(())
    }

    /// CSV with header `k,t,norm_T,norm_I`; missing norms are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,t,norm_T,norm_I")?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(w, "{},{:.12e},{},{}", r.k, r.t, f(r.norm_t), f(r.norm_i))?;
        }
        Ok(())
    }
}

fn ratio(tail: f64, peak: f64) -> f64 {
    if tail <= NOISE_FLOOR { 0.0 } else { tail / peak }
}

pub fn decay_report(
    tensors: &TransferTensors,
    inhom: Option<&InhomogeneousSeries>,
    thresholds: GateThresholds,
) -> DecayReport {
    let nt = tensors.norms.len();
    let ni = inhom.map_or(0, |s| s.norms.len());
    let rows = (1..=nt.max(ni))
        .map(|k| DecayRow {
            k,
            t: k as f64 * tensors.dt,
            norm_t: tensors.norms.get(k - 1).copied(),
            norm_i: inhom.and_then(|s| s.norms.get(k - 1).copied()),
        })
        .collect();
    let peak_t = tensors.norms.iter().cloned().fold(0.0, f64::max);
    let tail_t = tensors.norms[nt.saturating_sub(tail_window(nt))..].iter().cloned().fold(0.0, f64::max);
    let tensor_ratio = ratio(tail_t, peak_t);
    let inhom_ratio = match inhom {
        Some(s) if !s.norms.is_empty() => {
            ratio(*s.norms.last().expect("non-empty"), s.norms.iter().cloned().fold(0.0, f64::max))
        }
        _ => 0.0,
    };
    DecayReport {
        rows,
        tensor_ratio,
        inhom_ratio,
        thresholds,
        tensor_pass: tensor_ratio <= thresholds.tensor_tail,
        inhom_pass: inhom_ratio <= thresholds.inhom_tail,
    }
}

/// Continue `sample` to `n_total` points after checking the decay gate. The
/// first `sample.len()` points are copied from the sample.
pub fn extend_trajectory(
    tensors: &TransferTensors,
    sample: &Trajectory,
    n_total: usize,
    thresholds: GateThresholds,
) -> Result<Trajectory> {
    let inhom = inhomogeneity(tensors, sample)?;
    decay_report(tensors, Some(&inhom), thresholds).check()?;
    extend_unchecked(tensors, sample, n_total)
}

/// [`extend_trajectory`] without the decay gate.
pub fn extend_unchecked(tensors: &TransferTensors, sample: &Trajectory, n_total: usize) -> Result<Trajectory> {
    check_grid(tensors, sample)?;
    let sub = &tensors.subspace;
    let mut xs: Vec<CVector> = sample.values().iter().map(|m| sub.vectorize(m)).collect::<Result<_>>()?;
    let mut values: Vec<CMatrix> = sample.values().iter().take(n_total).cloned().collect();
    xs.truncate(n_total.max(1));
    for n in xs.len()..n_total {
        let next = memory_sum(tensors, &xs, n);
        values.push(sub.unvectorize(&next)?);
        xs.push(next);
    }
    Trajectory::new(sample.t0(), sample.dt(), values)
}
