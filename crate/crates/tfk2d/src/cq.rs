//! Convolution-quadrature weights for the discrete substantial derivative.
//!
//! The time operator L v = e^{-ct} D_t^alpha (e^{ct} v) - lambda^alpha v
//! (c = lambda - r - i rho U, node dependent) is discretised by Lubich
//! convolution quadrature: the weights d_j are the Taylor coefficients of
//! the per-node generating function
//!     (delta(zeta) + s)^alpha - (tau lambda)^alpha,   s = tau c,
//! with delta the backward-Euler or SBD generating polynomial. Backward
//! Euler admits a closed binomial recurrence; SBD weights come from
//! sampling the generator on a scaled circle and an inverse FFT.

use crate::grid::{Field, Grid, ProblemSpec};
use crate::special::{cq_symbol, Scheme};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

/// BE weights by the binomial recurrence on ((1+s) - zeta)^alpha.
pub fn be_weights_recurrence(
    alpha: f64,
    lambda: f64,
    tau: f64,
    s: Complex64,
    l: usize,
) -> Vec<Complex64> {
    let one_s = Complex64::new(1.0, 0.0) + s;
    assert!(one_s.norm() > 0.0);
    let mut d = Vec::with_capacity(l + 1);
    d.push(one_s.powf(alpha) - Complex64::new((tau * lambda).powf(alpha), 0.0));
    if l >= 1 {
        d.push(-alpha * one_s.powf(alpha - 1.0));
    }
    for j in 2..=l {
        let prev = d[j - 1];
        d.push(-(alpha - j as f64 + 1.0) * prev / (j as f64 * one_s));
    }
    d
}

/// Scheme-generic weights by sampling the generating function at K scaled
/// roots of unity (radius rho balances aliasing against roundoff) and an
/// inverse discrete Fourier transform.
pub fn cq_weights_fft(
    scheme: Scheme,
    alpha: f64,
    lambda: f64,
    tau: f64,
    s: Complex64,
    l: usize,
) -> Vec<Complex64> {
    let k = (4 * (l + 1)).next_power_of_two();
    // radius eps^{1/(4(l+1))}: roundoff amplification eps * rho^{-l} stays
    // near eps^{3/4} while aliasing decays like rho^K <= eps for K >= 4(l+1)
    let rho = f64::EPSILON.powf(1.0 / (4 * (l + 1)) as f64);
    let shift = Complex64::new((tau * lambda).powf(alpha), 0.0);
    let mut samples: Vec<Complex64> = (0..k)
        .map(|j| {
            let z = rho
                * Complex64::new(0.0, 2.0 * std::f64::consts::PI * j as f64 / k as f64).exp();
            (cq_symbol(scheme, z) + s).powf(alpha) - shift
        })
        .collect();
    // forward transform of the samples yields K * (Taylor coefficient * rho^j)
    FftPlanner::new().plan_fft_forward(k).process(&mut samples);
    (0..=l)
        .map(|j| samples[j] / (k as f64 * rho.powi(j as i32)))
        .collect()
}

/// Weight rows for every node; collapses to a single shared row when the
/// coefficients are spatially constant.
enum Rows {
    Uniform(Vec<Complex64>),
    PerNode(Vec<Vec<Complex64>>),
}

/// Per-node convolution-quadrature weights d_0..d_L.
pub struct CqWeightTable {
    pub scheme: Scheme,
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    pub steps: usize,
    rows: Rows,
}

fn scalar_weights(
    scheme: Scheme,
    alpha: f64,
    lambda: f64,
    tau: f64,
    s: Complex64,
    l: usize,
) -> Vec<Complex64> {
    match scheme {
        Scheme::BackwardEuler => be_weights_recurrence(alpha, lambda, tau, s, l),
        Scheme::Sbd => cq_weights_fft(scheme, alpha, lambda, tau, s, l),
    }
}

/// Build the weight table for all interior nodes.
pub fn build_table(spec: &ProblemSpec, grid: &Grid, scheme: Scheme, l: usize) -> CqWeightTable {
    let tau = spec.t_final / l as f64;
    let s_at = |x: f64, y: f64| tau * spec.c_coeff(x, y);
    let rows = if spec.reaction.is_const() && spec.weight.is_const() {
        Rows::Uniform(scalar_weights(scheme, spec.alpha, spec.lambda, tau, s_at(0.0, 0.0), l))
    } else {
        let nodes: Vec<(i64, i64)> = grid.iter_nodes().collect();
        Rows::PerNode(
            nodes
                .par_iter()
                .map(|&(p, q)| {
                    let (x, y) = grid.node(p, q);
                    scalar_weights(scheme, spec.alpha, spec.lambda, tau, s_at(x, y), l)
                })
                .collect(),
        )
    };
    CqWeightTable { scheme, alpha: spec.alpha, lambda: spec.lambda, tau, steps: l, rows }
}

impl CqWeightTable {
    /// Weight d_j at flat node index `node`.
    pub fn d(&self, node: usize, j: usize) -> Complex64 {
        match &self.rows {
            Rows::Uniform(r) => r[j],
            Rows::PerNode(rs) => rs[node][j],
        }
    }

    /// The d_0 diagonal as a field over the grid.
    pub fn d0_field(&self, m: usize) -> Field {
        (0..m).map(|i| self.d(i, 0)).collect()
    }

    /// Known part of the CQ sum at step n:
    /// (1/tau^alpha) sum_{k=1}^{n} diag(d_k) W^{n-k}, with history[i] = W^i.
    pub fn history_term(&self, history: &[Field], n: usize) -> Field {
        assert!(n <= self.steps && history.len() >= n, "history shorter than n");
        let m = history[0].len();
        let scale = self.tau.powf(-self.alpha);
        (0..m)
            .into_par_iter()
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 1..=n {
                    acc += self.d(i, k) * history[n - k][i];
                }
                acc * scale
            })
            .collect()
    }
}
