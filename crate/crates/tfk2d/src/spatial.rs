//! Discretization of -(Delta + gamma)^{beta/2} on (-l, l)^2 with
//! homogeneous Dirichlet exterior data.
//!
//! The principal-value integral over the singular 2x2 cell block around a
//! node is handled by a weighted trapezoidal rule (weight |x|^sigma with
//! sigma in (beta, 2]); every other cell uses bilinear interpolation of the
//! tempered difference quotient, which reduces to four moment integrals
//! H, H^xi, H^eta, H^{xi eta} per cell. The resulting weights are
//! translation invariant, so the operator is block-Toeplitz with Toeplitz
//! blocks; only the (4N-3)^2 offset kernel plus the node-dependent diagonal
//! (boundary partial sums + exterior integral W^inf) are stored.
//!
//! All moment integrals are computed in dimensionless cell coordinates
//! (unit spacing); the physical weights scale as h^{-beta}.

use crate::grid::Grid;
use crate::quad::{adaptive_1d, adaptive_2d, tensor_gl20, GL20};
use crate::special::{c2beta, upper_incomplete_gamma};
use rayon::prelude::*;
use std::io::{Read, Write};

/// W_{0,0} = int_0^h int_0^h (xi^2 + eta^2)^{(sigma-2-beta)/2}, by the polar
/// reduction to a 1D integral over [0, pi/4].
pub fn singular_cell_weight_w00(h: f64, sigma: f64, beta: f64) -> f64 {
    assert!(sigma > beta && sigma <= 2.0, "sigma must lie in (beta, 2]");
    h.powf(sigma - beta) * w00_hat(sigma, beta)
}

/// Dimensionless W_{0,0} at h = 1.
fn w00_hat(sigma: f64, beta: f64) -> f64 {
    // 8 GL20 panels resolve the smooth integrand well past 1e-12.
    let f = |t: f64| t.cos().powf(beta - sigma);
    let mut acc = 0.0;
    let w = std::f64::consts::FRAC_PI_4 / 8.0;
    for k in 0..8 {
        acc += GL20.integrate(k as f64 * w, (k + 1) as f64 * w, f);
    }
    2.0 / (sigma - beta) * acc
}

/// k_sigma: trapezoidal correction of the singular block, 4/3 at sigma = 2.
pub fn k_sigma(sigma: f64) -> f64 {
    if (sigma - 2.0).abs() < 1e-14 {
        4.0 / 3.0
    } else {
        1.0
    }
}

/// The four dimensionless moment integrals over the unit-spacing cell
/// [i, i+1] x [j, j+1] against (xi^2 + eta^2)^{-(2+beta)/2}.
fn hhat_cell(i: i64, j: i64, beta: f64) -> (f64, f64, f64, f64) {
    let e = -(2.0 + beta) / 2.0;
    let kern = move |x: f64, y: f64| (x * x + y * y).powf(e);
    let (ax, bx) = (i as f64, (i + 1) as f64);
    let (ay, by) = (j as f64, (j + 1) as f64);
    // nearest-corner distance decides fixed vs adaptive quadrature
    let cx = if i >= 0 { ax } else { bx.min(0.0).max(ax) };
    let cy = if j >= 0 { ay } else { by.min(0.0).max(ay) };
    let near = (cx * cx + cy * cy).sqrt() < 4.0;
    let int = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        if near {
            adaptive_2d(&|x, y| f(x, y), ax, bx, ay, by, 1e-12)
        } else {
            tensor_gl20(ax, bx, ay, by, &mut |x, y| f(x, y))
        }
    };
    (
        int(&|x, y| kern(x, y)),
        int(&|x, y| x * kern(x, y)),
        int(&|x, y| y * kern(x, y)),
        int(&|x, y| x * y * kern(x, y)),
    )
}

/// Moment integrals of the physical cell [xi_i, xi_{i+1}] x [eta_j, eta_{j+1}]
/// with the 1/h^2 prefactor. The cell must not touch the origin.
pub fn h_integrals(i: i64, j: i64, h: f64, beta: f64) -> (f64, f64, f64, f64) {
    assert!(
        !((-1..=0).contains(&i) && (-1..=0).contains(&j)),
        "origin-adjacent cells are handled by the singular-block rule"
    );
    let (h0, hx, hy, hxy) = hhat_cell(i, j, beta);
    let s = h.powf(-beta);
    (s / (h * h) * h0, s / h * hx, s / h * hy, s * hxy)
}

/// Cached dimensionless moment-integral table over the nonnegative cell
/// quadrant, extended to all cells by reflection/transpose symmetry.
struct HTable {
    side: usize, // cells 0..side-1 per axis
    h: Vec<f64>,
    hx: Vec<f64>,
    hy: Vec<f64>,
    hxy: Vec<f64>,
}

impl HTable {
    fn build(n: usize, beta: f64) -> Self {
        let side = 2 * n; // nonnegative cell indices 0..=2N-1
        let idx = |i: usize, j: usize| i * side + j;
        let mut h = vec![0.0; side * side];
        let mut hx = vec![0.0; side * side];
        let mut hy = vec![0.0; side * side];
        let mut hxy = vec![0.0; side * side];
        // compute the wedge j <= i, mirror by transpose
        let wedge: Vec<((usize, usize), (f64, f64, f64, f64))> = (0..side)
            .into_par_iter()
            .flat_map_iter(|i| (0..=i).map(move |j| (i, j)))
            .filter(|&(i, j)| !(i == 0 && j == 0))
            .map(|(i, j)| ((i, j), hhat_cell(i as i64, j as i64, beta)))
            .collect();
        for ((i, j), (a, b, c, d)) in wedge {
            h[idx(i, j)] = a;
            hx[idx(i, j)] = b;
            hy[idx(i, j)] = c;
            hxy[idx(i, j)] = d;
            if i != j {
                h[idx(j, i)] = a;
                hx[idx(j, i)] = c;
                hy[idx(j, i)] = b;
                hxy[idx(j, i)] = d;
            }
        }
        HTable { side, h, hx, hy, hxy }
    }

    /// Moment integrals of cell (i, j), any sign, via the even/odd
    /// reflections of the kernel about each axis.
    fn get(&self, i: i64, j: i64) -> (f64, f64, f64, f64) {
        let (iu, sx) = if i < 0 { ((-i - 1) as usize, -1.0) } else { (i as usize, 1.0) };
        let (ju, sy) = if j < 0 { ((-j - 1) as usize, -1.0) } else { (j as usize, 1.0) };
        debug_assert!(iu < self.side && ju < self.side && (iu, ju) != (0, 0));
        let k = iu * self.side + ju;
        (self.h[k], sx * self.hx[k], sy * self.hy[k], sx * sy * self.hxy[k])
    }
}

/// Dimensionless interpolation-weight tables over all offsets
/// (a, b) in [-(2N-1), 2N-1]^2, with the singular-block replacements baked
/// into the nine special near-origin entries.
struct WTables {
    n: usize,
    w1: Vec<f64>,
    w2: Vec<f64>,
    w3: Vec<f64>,
    w4: Vec<f64>,
}

impl WTables {
    fn idx(&self, a: i64, b: i64) -> usize {
        let r = 2 * self.n as i64 - 1;
        debug_assert!(a.abs() <= r && b.abs() <= r);
        ((a + r) * (2 * r + 1) + (b + r)) as usize
    }

    fn build(n: usize, beta: f64, sigma: f64) -> Self {
        let ht = HTable::build(n, beta);
        let side = 4 * n - 1; // offsets per axis
        let mut t = WTables {
            n,
            w1: vec![0.0; side * side],
            w2: vec![0.0; side * side],
            w3: vec![0.0; side * side],
            w4: vec![0.0; side * side],
        };
        let r = 2 * n as i64 - 1;
        let w1f = |a: i64, b: i64| {
            let (h, hx, hy, hxy) = ht.get(a, b);
            let (a1, b1) = ((a + 1) as f64, (b + 1) as f64);
            hxy - a1 * hy - b1 * hx + a1 * b1 * h
        };
        let w2f = |a: i64, b: i64| {
            let (h, hx, hy, hxy) = ht.get(a - 1, b);
            let (a1, b1) = ((a - 1) as f64, (b + 1) as f64);
            -(hxy - a1 * hy - b1 * hx + a1 * b1 * h)
        };
        let w3f = |a: i64, b: i64| {
            let (h, hx, hy, hxy) = ht.get(a, b - 1);
            let (a1, b1) = ((a + 1) as f64, (b - 1) as f64);
            -(hxy - a1 * hy - b1 * hx + a1 * b1 * h)
        };
        let w4f = |a: i64, b: i64| {
            let (h, hx, hy, hxy) = ht.get(a - 1, b - 1);
            let (a1, b1) = ((a - 1) as f64, (b - 1) as f64);
            hxy - a1 * hy - b1 * hx + a1 * b1 * h
        };
        for a in -r..=r {
            for b in -r..=r {
                let k = t.idx(a, b);
                // each W^k reads one shifted cell; skip where that cell
                // touches the origin (replaced below or never referenced)
                if !((-1..=0).contains(&a) && (-1..=0).contains(&b)) {
                    t.w1[k] = w1f(a, b);
                }
                if !((0..=1).contains(&a) && (-1..=0).contains(&b)) {
                    t.w2[k] = w2f(a, b);
                }
                if !((-1..=0).contains(&a) && (0..=1).contains(&b)) {
                    t.w3[k] = w3f(a, b);
                }
                if !((0..=1).contains(&a) && (0..=1).contains(&b)) {
                    t.w4[k] = w4f(a, b);
                }
            }
        }
        // singular-block replacements (weighted trapezoidal rule)
        let base = k_sigma(sigma) / 4.0 * w00_hat(sigma, beta);
        let diag = base / 2f64.sqrt().powf(sigma);
        for (tab, a, b, v) in [
            (1usize, -1i64, -1i64, diag),
            (2, 1, -1, diag),
            (3, -1, 1, diag),
            (4, 1, 1, diag),
            (1, -1, 0, base),
            (1, 0, -1, base),
            (2, 1, 0, base),
            (2, 0, -1, base),
            (3, -1, 0, base),
            (3, 0, 1, base),
            (4, 1, 0, base),
            (4, 0, 1, base),
        ] {
            let k = t.idx(a, b);
            match tab {
                1 => t.w1[k] = v,
                2 => t.w2[k] = v,
                3 => t.w3[k] = v,
                _ => t.w4[k] = v,
            }
        }
        t
    }

    fn sum(&self, a: i64, b: i64) -> f64 {
        let k = self.idx(a, b);
        self.w1[k] + self.w2[k] + self.w3[k] + self.w4[k]
    }
}

/// Physical bilinear-interpolation weights at offset (i, j); offsets inside
/// the special 3x3 block are rejected.
pub fn interpolation_weights_w(i: i64, j: i64, h: f64, beta: f64) -> (f64, f64, f64, f64) {
    assert!(
        i.abs() > 1 || j.abs() > 1,
        "offsets inside the singular 3x3 block use special_weights"
    );
    let hm = |ci: i64, cj: i64| {
        let (h0, hx, hy, hxy) = hhat_cell(ci, cj, beta);
        (h0, hx, hy, hxy)
    };
    let s = h.powf(-beta);
    let (h0, hx, hy, hxy) = hm(i, j);
    let w1 = hxy - (i + 1) as f64 * hy - (j + 1) as f64 * hx + ((i + 1) * (j + 1)) as f64 * h0;
    let (h0, hx, hy, hxy) = hm(i - 1, j);
    let w2 = -(hxy - (i - 1) as f64 * hy - (j + 1) as f64 * hx + ((i - 1) * (j + 1)) as f64 * h0);
    let (h0, hx, hy, hxy) = hm(i, j - 1);
    let w3 = -(hxy - (i + 1) as f64 * hy - (j - 1) as f64 * hx + ((i + 1) * (j - 1)) as f64 * h0);
    let (h0, hx, hy, hxy) = hm(i - 1, j - 1);
    let w4 = hxy - (i - 1) as f64 * hy - (j - 1) as f64 * hx + ((i - 1) * (j - 1)) as f64 * h0;
    (s * w1, s * w2, s * w3, s * w4)
}

/// The nine near-origin replacement weights from the singular-block rule,
/// returned as ((W1 diag, W2 diag, W3 diag, W4 diag), axis value):
/// diagonal entries sit at offsets (-1,-1)/(1,-1)/(-1,1)/(1,1), the axis
/// value is shared by the eight axis-adjacent entries.
pub fn special_weights(h: f64, sigma: f64, beta: f64) -> (f64, f64) {
    let base = k_sigma(sigma) / 4.0 * singular_cell_weight_w00(h, sigma, beta) / h.powf(sigma);
    (base / 2f64.sqrt().powf(sigma), base)
}

/// Distance from an interior point to the boundary of the square [-l, l]^2
/// along direction theta.
pub fn exit_distance(x0: f64, y0: f64, l: f64, theta: f64) -> f64 {
    let (c, s) = (theta.cos(), theta.sin());
    let mut r = f64::INFINITY;
    if c.abs() > 1e-300 {
        let t = if c > 0.0 { (l - x0) / c } else { (-l - x0) / c };
        r = r.min(t);
    }
    if s.abs() > 1e-300 {
        let t = if s > 0.0 { (l - y0) / s } else { (-l - y0) / s };
        r = r.min(t);
    }
    r
}

/// Radial tail int_R^inf e^{-gamma r} r^{-1-beta} dr.
fn radial_tail(r: f64, beta: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        r.powf(-beta) / beta
    } else {
        gamma.powf(beta) * upper_incomplete_gamma(-beta, gamma * r)
    }
}

/// Exterior integral W^inf at the interior node (p, q): the tempered kernel
/// integrated over R^2 \ Omega, by polar decomposition around the node with
/// panel splits at the four corner directions and a closed-form radial tail.
pub fn exterior_integral_winf(p: i64, q: i64, grid: &Grid, beta: f64, gamma: f64) -> f64 {
    let (x0, y0) = grid.node(p, q);
    winf_at_point(x0, y0, grid.l, beta, gamma)
}

/// W^inf for an arbitrary interior point (used by the continuous-operator
/// oracle as well as node assembly).
pub fn winf_at_point(x0: f64, y0: f64, l: f64, beta: f64, gamma: f64) -> f64 {
    // corner directions split the angular integrand's derivative jumps
    let mut angles: Vec<f64> = [(l, l), (-l, l), (-l, -l), (l, -l)]
        .iter()
        .map(|&(cx, cy)| {
            let a = (cy - y0).atan2(cx - x0);
            if a < 0.0 {
                a + 2.0 * std::f64::consts::PI
            } else {
                a
            }
        })
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.push(angles[0] + 2.0 * std::f64::consts::PI);
    let f = |theta: f64| radial_tail(exit_distance(x0, y0, l, theta), beta, gamma);
    let mut acc = 0.0;
    for w in angles.windows(2) {
        if w[1] - w[0] > 1e-14 {
            acc += adaptive_1d(&f, w[0], w[1], 1e-11);
        }
    }
    acc
}

/// Assembled discretization of -(Delta + gamma)^{beta/2}.
///
/// `kernel` holds the translation-invariant off-diagonal weights over
/// offsets (dp, dq) in [-(2N-2), 2N-2]^2 (center entry zero, all others
/// strictly negative); `diag` the node-dependent diagonal including the
/// boundary partial sums and W^inf. The represented matrix is symmetric
/// positive definite.
#[derive(Debug, Clone)]
pub struct SpatialOperator {
    pub grid: Grid,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub kernel: Vec<f64>,
    pub diag: Vec<f64>,
    pub winf: Vec<f64>,
}

impl SpatialOperator {
    /// Kernel side length, 4N - 3.
    pub fn kside(&self) -> usize {
        4 * self.grid.n - 3
    }

    /// Off-diagonal weight at offset (dp, dq); zero at the center.
    pub fn kernel_at(&self, dp: i64, dq: i64) -> f64 {
        let r = 2 * self.grid.n as i64 - 2;
        debug_assert!(dp.abs() <= r && dq.abs() <= r);
        self.kernel[((dp + r) * (2 * r + 1) + (dq + r)) as usize]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpatialError {
    #[error("beta must lie in [0.05, 1.95], got {0}")]
    BetaOutOfRange(f64),
    #[error("sigma must lie in (beta, 2], got sigma={sigma} beta={beta}")]
    SigmaOutOfRange { sigma: f64, beta: f64 },
    #[error("kernel i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad kernel file magic")]
    BadMagic,
    #[error("kernel file truncated or inconsistent")]
    BadLayout,
}

/// Build the full spatial operator for the given mesh and parameters.
pub fn assemble(grid: &Grid, beta: f64, gamma: f64, sigma: f64) -> Result<SpatialOperator, SpatialError> {
    if !(0.05..=1.95).contains(&beta) {
        return Err(SpatialError::BetaOutOfRange(beta));
    }
    if !(sigma > beta && sigma <= 2.0) {
        return Err(SpatialError::SigmaOutOfRange { sigma, beta });
    }
    let n = grid.n;
    let ni = n as i64;
    let h = grid.h;
    let c = c2beta(beta, gamma);
    let hb = h.powf(-beta);
    let t = WTables::build(n, beta, sigma);
    let damp = |a: i64, b: i64| (-gamma * h * ((a * a + b * b) as f64).sqrt()).exp();

    // off-diagonal kernel over interior-to-interior offsets
    let kr = 2 * ni - 2;
    let kside = (2 * kr + 1) as usize;
    let mut kernel = vec![0.0; kside * kside];
    // compute one representative per +- offset pair and mirror it, so the
    // matrix is symmetric to the last bit
    for a in 0..=kr {
        for b in -kr..=kr {
            if a == 0 && b <= 0 {
                continue;
            }
            let w = -c * hb * t.sum(a, b) * damp(a, b);
            kernel[((a + kr) * (2 * kr + 1) + (b + kr)) as usize] = w;
            kernel[((kr - a) * (2 * kr + 1) + (kr - b)) as usize] = w;
        }
    }

    // node-dependent diagonal: negated row sum over interior offsets plus
    // boundary partial sums plus the exterior integral
    let nodes: Vec<(i64, i64)> = grid.iter_nodes().collect();
    let winf: Vec<f64> = nodes
        .par_iter()
        .map(|&(p, q)| exterior_integral_winf(p, q, grid, beta, gamma))
        .collect();
    let diag: Vec<f64> = nodes
        .par_iter()
        .zip(&winf)
        .map(|(&(p, q), &wi)| {
            let mut s = 0.0;
            for i in 1 - ni..ni {
                for j in 1 - ni..ni {
                    if (i, j) != (p, q) {
                        s += t.sum(i - p, j - q) * damp(i - p, j - q);
                    }
                }
            }
            let k1 = |a: i64, b: i64| t.w1[t.idx(a, b)] * damp(a, b);
            let k2 = |a: i64, b: i64| t.w2[t.idx(a, b)] * damp(a, b);
            let k3 = |a: i64, b: i64| t.w3[t.idx(a, b)] * damp(a, b);
            let k4 = |a: i64, b: i64| t.w4[t.idx(a, b)] * damp(a, b);
            s += k1(-ni - p, -ni - q) + k2(ni - p, -ni - q) + k3(-ni - p, ni - q) + k4(ni - p, ni - q);
            for i in 1 - ni..ni {
                s += k1(i - p, -ni - q) + k2(i - p, -ni - q);
                s += k3(i - p, ni - q) + k4(i - p, ni - q);
            }
            for j in 1 - ni..ni {
                s += k1(-ni - p, j - q) + k3(-ni - p, j - q);
                s += k2(ni - p, j - q) + k4(ni - p, j - q);
            }
            c * (hb * s + wi)
        })
        .collect();

    Ok(SpatialOperator { grid: *grid, beta, gamma, sigma, kernel, diag, winf })
}

/// Reference O(M^2) matvec w = A_s v.
pub fn apply_dense(op: &SpatialOperator, v: &[num_complex::Complex64]) -> Vec<num_complex::Complex64> {
    let g = &op.grid;
    assert_eq!(v.len(), g.m(), "dimension mismatch");
    let nodes: Vec<(i64, i64)> = g.iter_nodes().collect();
    nodes
        .par_iter()
        .map(|&(p, q)| {
            let mut acc = op.diag[g.index(p, q)] * v[g.index(p, q)];
            for &(i, j) in &nodes {
                if (i, j) != (p, q) {
                    acc += op.kernel_at(i - p, j - q) * v[g.index(i, j)];
                }
            }
            acc
        })
        .collect()
}

const KERNEL_MAGIC: &[u8; 8] = b"TFLKRN01";

/// Serialize an assembled operator (little-endian f64 payload).
pub fn dump_kernel<W: Write>(op: &SpatialOperator, mut w: W) -> Result<(), SpatialError> {
    w.write_all(KERNEL_MAGIC)?;
    for &x in &[op.grid.l, op.grid.n as f64, op.beta, op.gamma, op.sigma] {
        w.write_all(&x.to_le_bytes())?;
    }
    for arr in [&op.kernel, &op.diag, &op.winf] {
        for &x in arr.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Deserialize an operator written by [`dump_kernel`].
pub fn load_kernel<R: Read>(mut r: R) -> Result<SpatialOperator, SpatialError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != KERNEL_MAGIC {
        return Err(SpatialError::BadMagic);
    }
    let mut f = || -> Result<f64, SpatialError> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let l = f()?;
    let n = f()? as usize;
    let beta = f()?;
    let gamma = f()?;
    let sigma = f()?;
    if n < 2 || !(l > 0.0) {
        return Err(SpatialError::BadLayout);
    }
    let grid = Grid { l, n, h: l / n as f64 };
    let kside = 4 * n - 3;
    let m = grid.m();
    let mut read_vec = |len: usize| -> Result<Vec<f64>, SpatialError> {
        let mut v = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b).map_err(|_| SpatialError::BadLayout)?;
            v.push(f64::from_le_bytes(b));
        }
        Ok(v)
    };
    let kernel = read_vec(kside * kside)?;
    let diag = read_vec(m)?;
    let winf = read_vec(m)?;
    Ok(SpatialOperator { grid, beta, gamma, sigma, kernel, diag, winf })
}
