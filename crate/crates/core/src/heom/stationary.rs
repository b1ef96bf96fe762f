//! Stationary states of the hierarchy.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{Hierarchy, HierarchyState, Kernel, Rk4, Sector};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StationaryMethod {
    /// Linear solve when the stationary state is unique, otherwise propagation.
    #[default]
    Auto,
    Propagate,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxOptions {
    /// Bound on the normalized time derivative of every ADO.
    pub tol: f64,
    /// Propagation budget for [`StationaryMethod::Propagate`].
    pub t_max: f64,
    pub method: StationaryMethod,
    /// Largest system solved densely.
    pub direct_limit: usize,
    /// RK4 step for propagation; derived from the spectrum bound when absent.
    pub step: Option<f64>,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self { tol: 1e-9, t_max: 500.0, method: StationaryMethod::Auto, direct_limit: 3000, step: None }
    }
}

/// Dimension of the set of block operators commuting with `H` and every `Q`.
fn commutant_dimension(h: &Hierarchy, sector: &Sector) -> Result<usize> {
    let idx = &sector.rows;
    let r = idx.len();
    let sub = |m: &CMatrix| CMatrix::from_shape_fn((r, r), |(i, j)| m[[idx[i], idx[j]]]);
    let eye = linalg::identity(r);
    let mats: Vec<CMatrix> = std::iter::once(&h.h).chain(&h.ops).map(sub).collect();
    let mut stack = linalg::zeros(mats.len() * r * r, r * r);
    for (b, m) in mats.iter().enumerate() {
        let sup = linalg::kron(m, &eye) - linalg::kron(&eye, &m.t().to_owned());
        stack.slice_mut(ndarray::s![b * r * r..(b + 1) * r * r, ..]).assign(&sup);
    }
    let (s, _) = linalg::svd_right(&stack)?;
    let smax = s.iter().cloned().fold(1.0, f64::max);
    let rank = s.iter().filter(|&&v| v > 1e-9 * smax).count();
    Ok(r * r - rank)
}

pub(super) fn relax(h: &Hierarchy, seed: &HierarchyState, opts: &RelaxOptions) -> Result<HierarchyState> {
    h.check_state(seed)?;
    if !(opts.tol > 0.0) || !(opts.t_max > 0.0) {
        return Err(Error::InvalidParameter("relaxation needs positive tol and t_max".into()));
    }
    let sector = h.sector(seed);
    let square = sector.rows == sector.cols;
    let n = h.index.len() * sector.rows.len() * sector.cols.len();
    let method = match opts.method {
        StationaryMethod::Auto if square && commutant_dimension(h, &sector)? == 1 => {
            if n <= opts.direct_limit { StationaryMethod::Direct } else { StationaryMethod::Iterative }
        }
        StationaryMethod::Auto => StationaryMethod::Propagate,
        m => m,
    };
    if matches!(method, StationaryMethod::Direct | StationaryMethod::Iterative) && !square {
        return Err(Error::InvalidParameter("linear stationary solve needs a square sector".into()));
    }
    let out = match method {
        StationaryMethod::Direct => direct(h, seed, &sector)?,
        StationaryMethod::Iterative => iterative(h, seed, &sector, opts.tol)?,
        _ => return propagate(h, seed, &sector, opts),
    };
    let residual = h.derivative_norm(&out)?;
    if !(residual < opts.tol) {
        return Err(Error::StationaryNotReached { derivative_norm: residual, t_max: opts.t_max });
    }
    Ok(out)
}

/// Trace of the seed's reduced block, kept fixed by the solve.
fn seed_trace(h: &Hierarchy, seed: &HierarchyState, sector: &Sector) -> C64 {
    sector.rows.iter().map(|&i| seed.ados[i * h.dim + i]).sum()
}

fn direct(h: &Hierarchy, seed: &HierarchyState, sector: &Sector) -> Result<HierarchyState> {
    let kernel = h.kernel(sector, true);
    let r = sector.rows.len();
    let n = h.index.len() * r * r;
    let mut a = linalg::zeros(n, n);
    kernel.for_each_entry(|row, col, v| {
        if row != 0 {
            a[[row, col]] += v;
        }
    });
    for i in 0..r {
        a[[0, i * r + i]] = C64::new(1.0, 0.0);
    }
    let mut b = ndarray::Array1::zeros(n);
    b[0] = seed_trace(h, seed, sector);
    let x = linalg::solve(&a, &b)?;
    let mut out = seed.clone();
    out.ados.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
    h.scatter(x.as_slice().expect("contiguous"), sector, true, &mut out);
    Ok(out)
}

/// Exact inverse of the ADO-local part of the kernel, in the eigenbasis of `H`.
struct BlockJacobi {
    r: usize,
    u: Vec<C64>,
    e: Vec<f64>,
    gamma: Vec<C64>,
}

impl BlockJacobi {
    fn new(kernel: &Kernel<'_>) -> Result<Self> {
        let r = kernel.r;
        let hm = CMatrix::from_shape_vec((r, r), kernel.h_r.clone()).expect("r*r");
        let (e, u) = linalg::eigh(&hm)?;
        Ok(Self { r, u: u.iter().cloned().collect(), e: e.to_vec(), gamma: kernel.gamma.clone() })
    }

    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let r = self.r;
        let bs = r * r;
        let mut t = vec![C64::new(0.0, 0.0); bs];
        let mut s = vec![C64::new(0.0, 0.0); bs];
        for (k, (xb, ob)) in x.chunks(bs).zip(out.chunks_mut(bs)).enumerate() {
            // t = U^\dagger X U
            for a in 0..r {
                for j in 0..r {
                    s[a * r + j] = (0..r).map(|i| self.u[i * r + a].conj() * xb[i * r + j]).sum();
                }
            }
            for a in 0..r {
                for b in 0..r {
                    t[a * r + b] = (0..r).map(|j| s[a * r + j] * self.u[j * r + b]).sum();
                }
            }
            for a in 0..r {
                for b in 0..r {
                    let mut den = C64::new(0.0, -(self.e[a] - self.e[b])) - self.gamma[k];
                    if den.norm() < 1e-8 {
                        den = C64::new(1.0, 0.0);
                    }
                    t[a * r + b] /= den;
                }
            }
            // X = U t U^\dagger
            for i in 0..r {
                for b in 0..r {
                    s[i * r + b] = (0..r).map(|a| self.u[i * r + a] * t[a * r + b]).sum();
                }
            }
            for i in 0..r {
                for j in 0..r {
                    ob[i * r + j] = (0..r).map(|b| s[i * r + b] * self.u[j * r + b].conj()).sum();
                }
            }
        }
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted right-preconditioned GMRES. Returns the final relative residual.
fn gmres<A, P>(apply: A, precond: P, b: &[C64], x: &mut [C64], restart: usize, tol: f64, max_iter: usize) -> f64
where
    A: Fn(&[C64], &mut [C64]),
    P: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    let bnorm = norm(b).max(1e-300);
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut z = vec![C64::new(0.0, 0.0); n];
    let mut r = vec![C64::new(0.0, 0.0); n];
    let mut iters = 0;
    loop {
        apply(x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let beta = norm(&r);
        if beta / bnorm < tol || iters >= max_iter {
            return beta / bnorm;
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut hmat = vec![vec![C64::new(0.0, 0.0); restart]; restart + 1];
        let (mut cs, mut sn) = (vec![C64::new(0.0, 0.0); restart], vec![C64::new(0.0, 0.0); restart]);
        let mut g = vec![C64::new(0.0, 0.0); restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut m = 0;
        while m < restart && iters < max_iter {
            precond(&v[m], &mut z);
            apply(&z, &mut w);
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(vi, &w);
                hmat[i][m] = hij;
                w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let hn = norm(&w);
            hmat[m + 1][m] = C64::new(hn, 0.0);
            for i in 0..m {
                let t = cs[i].conj() * hmat[i][m] + sn[i].conj() * hmat[i + 1][m];
                hmat[i + 1][m] = -sn[i] * hmat[i][m] + cs[i] * hmat[i + 1][m];
                hmat[i][m] = t;
            }
            let (a, bb) = (hmat[m][m], hmat[m + 1][m]);
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt().max(1e-300);
            cs[m] = a / den;
            sn[m] = bb / den;
            hmat[m][m] = C64::new(den, 0.0);
            hmat[m + 1][m] = C64::new(0.0, 0.0);
            g[m + 1] = -sn[m] * g[m];
            g[m] = cs[m].conj() * g[m];
            m += 1;
            iters += 1;
            if g[m].norm() / bnorm < tol || hn < 1e-300 {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }
        let mut y = vec![C64::new(0.0, 0.0); m];
        for i in (0..m).rev() {
            let s: C64 = (i + 1..m).map(|k| hmat[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / hmat[i][i];
        }
        let mut upd = vec![C64::new(0.0, 0.0); n];
        for (i, yi) in y.iter().enumerate() {
            upd.iter_mut().zip(&v[i]).for_each(|(u, vk)| *u += yi * vk);
        }
        precond(&upd, &mut z);
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += zi);
    }
}

fn iterative(h: &Hierarchy, seed: &HierarchyState, sector: &Sector, tol: f64) -> Result<HierarchyState> {
    let kernel = h.kernel(sector, true);
    let r = sector.rows.len();
    let pre = BlockJacobi::new(&kernel)?;
    let apply = |x: &[C64], out: &mut [C64]| {
        kernel.apply(x, out);
        out[0] = (0..r).map(|i| x[i * r + i]).sum();
    };
    let mut x = h.gather(seed, sector, true);
    let mut b = vec![C64::new(0.0, 0.0); x.len()];
    b[0] = seed_trace(h, seed, sector);
    gmres(apply, |v, o| pre.apply(v, o), &b, &mut x, 60, (tol * 1e-3).max(1e-14), 20_000);
    let mut out = seed.clone();
    h.scatter(&x, sector, true, &mut out);
    Ok(out)
}

fn propagate(h: &Hierarchy, seed: &HierarchyState, sector: &Sector, opts: &RelaxOptions) -> Result<HierarchyState> {
    let kernel = h.kernel(sector, true);
    let block = sector.rows.len() * sector.cols.len();
    let step = match opts.step {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::InvalidParameter(format!("relaxation step {s} must be positive"))),
        None => {
            let hnorm = linalg::frobenius(h.h.view());
            let nu = h.terms.iter().map(|t| t.rate.norm()).fold(0.0, f64::max);
            let coupling: f64 = h
                .terms
                .iter()
                .zip(&h.scales)
                .map(|(t, s)| s * linalg::frobenius(h.ops[t.coupling].view()))
                .sum();
            let depth = h.opts.depth as f64;
            1.0 / (depth * nu + 2.0 * hnorm + 2.0 * depth.sqrt() * coupling + 1.0)
        }
    };
    let check_every = ((1.0 / step).ceil() as usize).max(1);
    let mut x = h.gather(seed, sector, true);
    let mut dx = vec![C64::new(0.0, 0.0); x.len()];
    let mut rk = Rk4::new(x.len());
    let mut t = 0.0;
    let mut out = seed.clone();
    loop {
        kernel.apply(&x, &mut dx);
        let dnorm = h.normalized_max(&dx, block, true);
        if dnorm < opts.tol {
            h.scatter(&x, sector, true, &mut out);
            out.t = seed.t + t;
            return Ok(out);
        }
        if t >= opts.t_max {
            return Err(Error::StationaryNotReached { derivative_norm: dnorm, t_max: opts.t_max });
        }
        for _ in 0..check_every {
            rk.step(&kernel, &mut x, step);
        }
        t += check_every as f64 * step;
        let n = h.normalized_max(&x, block, true);
        if !(n <= h.opts.max_norm) {
            return Err(Error::Instability { norm: n, time: seed.t + t });
        }
    }
}
