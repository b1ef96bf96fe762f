//! Globally adaptive Gauss-Kronrod (7/15) quadrature for smooth integrands on
//! a finite interval.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// `(kronrod, |kronrod - gauss|, integral of |f|)` on `[a, b]` for a
/// vector-valued integrand of fixed length.
fn gk15<F: Fn(f64, &mut [f64])>(f: &F, a: f64, b: f64, n: usize) -> (Vec<f64>, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; n];
    let mut gauss = vec![0.0; n];
    let mut abs_sum = 0.0;
    let mut buf = vec![0.0; n];
    for k in 0..8 {
        let x = half * XGK[k];
        let nodes: &[f64] = if k == 7 { &[0.0] } else { &[-1.0, 1.0] };
        for s in nodes {
            f(center + s * x, &mut buf);
            for i in 0..n {
                kron[i] += WGK[k] * buf[i];
                abs_sum += WGK[k] * buf[i].abs();
                if k % 2 == 1 {
                    gauss[i] += WG[k / 2] * buf[i];
                }
            }
        }
    }
    let err = kron.iter().zip(&gauss).map(|(k, g)| (k - g).abs()).fold(0.0, f64::max) * half.abs();
    (kron.iter().map(|k| k * half).collect(), err, abs_sum * half.abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Integrate a vector-valued `f` over `[a, b]` to relative accuracy `rel_tol`
/// measured against `int |f|`. The error estimate is the maximum over
/// components. Fails with [`Error::Quadrature`] if `fail_tol` is not met after
/// `max_segments` bisections.
pub fn integrate_vec<F: Fn(f64, &mut [f64])>(
    f: F,
    a: f64,
    b: f64,
    n: usize,
    rel_tol: f64,
    fail_tol: f64,
    max_segments: usize,
) -> Result<Vec<f64>> {
    let (value, err, scale) = gk15(&f, a, b, n);
    let mut total = value.clone();
    let mut total_err = err;
    let mut abs_total = scale;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, err });
    let mut segments = 1;
    while total_err > rel_tol * abs_total.max(f64::MIN_POSITIVE) && segments < max_segments {
        let Some(seg) = heap.pop() else { break };
        let mid = 0.5 * (seg.a + seg.b);
        let (v1, e1, s1) = gk15(&f, seg.a, mid, n);
        let (v2, e2, s2) = gk15(&f, mid, seg.b, n);
        for i in 0..n {
            total[i] += v1[i] + v2[i] - seg.value[i];
        }
        total_err += e1 + e2 - seg.err;
        abs_total = abs_total.max(s1 + s2);
        heap.push(Segment { a: seg.a, b: mid, value: v1, err: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, err: e2 });
        segments += 1;
    }
    // Recompute the error sum to shed accumulated rounding.
    total_err = heap.iter().map(|s| s.err).sum();
    let tolerance = fail_tol * abs_total.max(f64::MIN_POSITIVE);
    if total_err > tolerance {
        return Err(Error::Quadrature { estimate: total_err, tolerance });
    }
    Ok(total)
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let v = integrate_vec(|x, out: &mut [f64]| out[0] = f(x), a, b, 1, rel_tol, rel_tol.max(1e-8), 4000)?;
    Ok(v[0])
}
