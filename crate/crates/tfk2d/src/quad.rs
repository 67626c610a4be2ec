//! Gauss-Legendre quadrature rules and adaptive integration helpers.
//!
//! All the singular-kernel moment integrals in this crate reduce to smooth
//! integrands away from the origin, so tensor Gauss rules plus dyadic
//! subdivision near the singularity are sufficient.

use once_cell::sync::Lazy;

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Newton iteration on the Legendre polynomial roots.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_and_deriv(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Integrate f over [a, b] with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let s = 0.5 * (b - a);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(c + s * x);
        }
        acc * s
    }
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub static GL16: Lazy<GaussRule> = Lazy::new(|| GaussRule::new(16));
pub static GL20: Lazy<GaussRule> = Lazy::new(|| GaussRule::new(20));

/// Adaptive 1D quadrature: refine by bisection until the GL16 value on a
/// panel agrees with the sum over its halves.
pub fn adaptive_1d<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let whole = GL16.integrate(a, b, f);
    adaptive_1d_rec(f, a, b, whole, tol, 0)
}

fn adaptive_1d_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = GL16.integrate(a, m, f);
    let right = GL16.integrate(m, b, f);
    let refined = left + right;
    if depth >= 50 || (refined - whole).abs() <= tol * (1.0 + refined.abs()) {
        refined
    } else {
        adaptive_1d_rec(f, a, m, left, 0.5 * tol, depth + 1)
            + adaptive_1d_rec(f, m, b, right, 0.5 * tol, depth + 1)
    }
}

/// Tensor GL20 product rule over the box [ax, bx] x [ay, by].
pub fn tensor_gl20<F: FnMut(f64, f64) -> f64>(ax: f64, bx: f64, ay: f64, by: f64, f: &mut F) -> f64 {
    let cx = 0.5 * (ax + bx);
    let sx = 0.5 * (bx - ax);
    let cy = 0.5 * (ay + by);
    let sy = 0.5 * (by - ay);
    let mut acc = 0.0;
    for (&xi, &wi) in GL20.nodes.iter().zip(&GL20.weights) {
        let x = cx + sx * xi;
        let mut row = 0.0;
        for (&yj, &wj) in GL20.nodes.iter().zip(&GL20.weights) {
            row += wj * f(x, cy + sy * yj);
        }
        acc += wi * row;
    }
    acc * sx * sy
}

/// Adaptive 2D quadrature by quadtree subdivision of the box.
pub fn adaptive_2d<F: Fn(f64, f64) -> f64>(
    f: &F,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
    tol: f64,
) -> f64 {
    let mut g = |x, y| f(x, y);
    let whole = tensor_gl20(ax, bx, ay, by, &mut g);
    adaptive_2d_rec(f, ax, bx, ay, by, whole, tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_2d_rec<F: Fn(f64, f64) -> f64>(
    f: &F,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let mx = 0.5 * (ax + bx);
    let my = 0.5 * (ay + by);
    let mut g = |x, y| f(x, y);
    let q = [
        (ax, mx, ay, my),
        (mx, bx, ay, my),
        (ax, mx, my, by),
        (mx, bx, my, by),
    ];
    let parts: Vec<f64> = q
        .iter()
        .map(|&(a, b, c, d)| tensor_gl20(a, b, c, d, &mut g))
        .collect();
    let refined: f64 = parts.iter().sum();
    if depth >= 24 || (refined - whole).abs() <= tol * (1.0 + refined.abs()) {
        refined
    } else {
        q.iter()
            .zip(parts)
            .map(|(&(a, b, c, d), p)| adaptive_2d_rec(f, a, b, c, d, p, 0.25 * tol, depth + 1))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        // GL20 is exact for degree <= 39.
        let val = GL20.integrate(0.0, 1.0, |x| x.powi(17));
        assert_relative_eq!(val, 1.0 / 18.0, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_1d_handles_mild_singularity() {
        // \int_0^1 x^{-1/2} dx = 2
        let v = adaptive_1d(&|x: f64| x.max(1e-300).powf(-0.5), 1e-14, 1.0, 1e-11);
        assert_relative_eq!(v, 2.0 - 2.0 * 1e-7, max_relative = 1e-6);
    }

    #[test]
    fn adaptive_2d_matches_separable_product() {
        let v = adaptive_2d(&|x, y| (x * y).exp(), 0.0, 1.0, 0.0, 2.0, 1e-12);
        // \int\int e^{xy} over [0,1]x[0,2]; oracle by 1D adaptive of (e^{2x}-1)/x.
        let oracle = adaptive_1d(&|x: f64| ((2.0 * x).exp() - 1.0) / x.max(1e-30), 1e-12, 1.0, 1e-13);
        assert_relative_eq!(v, oracle, max_relative = 1e-10);
    }
}
