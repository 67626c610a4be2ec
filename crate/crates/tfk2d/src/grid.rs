//! Mesh and problem-definition types shared by every other module.
//!
//! The domain is the open square (-l, l)^2 with homogeneous Dirichlet data
//! outside; interior nodes are x_p = p*h, y_q = q*h for |p|,|q| < N with
//! h = l/N. Vectors over the mesh use x-major ordering: p runs in the outer
//! loop, q in the inner one.

use num_complex::Complex64;
use std::sync::Arc;

/// Uniform tensor mesh on (-l, l)^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Half-width of the square domain.
    pub l: f64,
    /// Intervals per half-axis; the boundary nodes p = +-N carry no unknowns.
    pub n: usize,
    /// Mesh spacing, l / N.
    pub h: f64,
}

/// Complex nodal vector in canonical ordering; length (2N-1)^2.
pub type Field = Vec<Complex64>;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("resolution must be at least 2, got {0}")]
    ResolutionTooSmall(usize),
    #[error("half-width must be positive, got {0}")]
    NonpositiveHalfWidth(f64),
}

pub fn make_grid(l: f64, n: usize) -> Result<Grid, GridError> {
    if n < 2 {
        return Err(GridError::ResolutionTooSmall(n));
    }
    if !(l > 0.0) {
        return Err(GridError::NonpositiveHalfWidth(l));
    }
    Ok(Grid { l, n, h: l / n as f64 })
}

impl Grid {
    /// Interior nodes per axis.
    pub fn side(&self) -> usize {
        2 * self.n - 1
    }

    /// Total interior nodes M = (2N-1)^2.
    pub fn m(&self) -> usize {
        self.side() * self.side()
    }

    /// Flat index of interior node (p, q), p and q in (-N, N).
    pub fn index(&self, p: i64, q: i64) -> usize {
        let n = self.n as i64;
        debug_assert!(p.abs() < n && q.abs() < n);
        ((p + n - 1) * (2 * n - 1) + (q + n - 1)) as usize
    }

    /// Inverse of `index`.
    pub fn coords(&self, idx: usize) -> (i64, i64) {
        let side = self.side() as i64;
        let n = self.n as i64;
        (idx as i64 / side - (n - 1), idx as i64 % side - (n - 1))
    }

    /// Physical coordinates of interior node (p, q).
    pub fn node(&self, p: i64, q: i64) -> (f64, f64) {
        (p as f64 * self.h, q as f64 * self.h)
    }

    /// Iterate interior node multi-indices in canonical order.
    pub fn iter_nodes(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let n = self.n as i64;
        (1 - n..n).flat_map(move |p| (1 - n..n).map(move |q| (p, q)))
    }
}

/// Sample a scalar function at every interior node (the paper's V operator).
pub fn project_field<F: Fn(f64, f64) -> Complex64>(g: F, grid: &Grid) -> Field {
    grid.iter_nodes()
        .map(|(p, q)| {
            let (x, y) = grid.node(p, q);
            g(x, y)
        })
        .collect()
}

/// Real-valued convenience wrapper around [`project_field`].
pub fn project_field_re<F: Fn(f64, f64) -> f64>(g: F, grid: &Grid) -> Field {
    project_field(|x, y| Complex64::new(g(x, y), 0.0), grid)
}

/// Spatially varying real coefficient: either a constant or a closure over
/// physical coordinates. Keeping the constant case explicit lets the
/// convolution-quadrature table detect the uniform fast path.
#[derive(Clone)]
pub enum Coeff {
    Const(f64),
    Fn(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Coeff {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Coeff::Const(c) => *c,
            Coeff::Fn(f) => f(x, y),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Coeff::Const(_))
    }
}

impl std::fmt::Debug for Coeff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coeff::Const(c) => write!(f, "Coeff::Const({c})"),
            Coeff::Fn(_) => write!(f, "Coeff::Fn(..)"),
        }
    }
}

/// Source-term evaluator: complex value at (t, x, y).
pub type SourceFn = Arc<dyn Fn(f64, f64, f64) -> Complex64 + Send + Sync>;

/// Full problem definition for the backward tempered fractional
/// Feynman-Kac equation on (-l, l)^2.
#[derive(Clone)]
pub struct ProblemSpec {
    /// Time-fractional order, in (0, 1).
    pub alpha: f64,
    /// Space-fractional order, in (0, 2).
    pub beta: f64,
    /// Spatial tempering parameter, >= 0.
    pub gamma: f64,
    /// Temporal tempering parameter, > 0.
    pub lambda: f64,
    /// Fourier variable of the path functional (rho = 0 gives real data).
    pub rho: f64,
    /// Exponent of the singular-cell quadrature weight, in (beta, 2].
    pub sigma: f64,
    /// Reaction rate r(x, y); must be negative on the closed domain.
    pub reaction: Coeff,
    /// Functional weight U(x, y), entering as J*rho*U with J = sqrt(-1).
    pub weight: Coeff,
    /// Initial condition G0(x, y).
    pub g0: Arc<dyn Fn(f64, f64) -> Complex64 + Send + Sync>,
    /// Source term f(t, x, y) of the reformulated equation.
    pub source: SourceFn,
    /// Final time.
    pub t_final: f64,
}

impl ProblemSpec {
    /// c(x) = lambda - r(x) - J*rho*U(x); for rho = 0 this is real.
    pub fn c_coeff(&self, x: f64, y: f64) -> Complex64 {
        Complex64::new(self.lambda - self.reaction.eval(x, y), -self.rho * self.weight.eval(x, y))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(0.0 < self.beta && self.beta < 2.0) {
            return Err(format!("beta must lie in (0,2), got {}", self.beta));
        }
        if !(self.beta < self.sigma && self.sigma <= 2.0) {
            return Err(format!(
                "sigma must lie in (beta, 2], got sigma={} beta={}",
                self.sigma, self.beta
            ));
        }
        if !(self.lambda > 0.0) {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.gamma < 0.0 {
            return Err(format!("gamma must be nonnegative, got {}", self.gamma));
        }
        Ok(())
    }
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("gamma", &self.gamma)
            .field("lambda", &self.lambda)
            .field("rho", &self.rho)
            .field("sigma", &self.sigma)
            .field("t_final", &self.t_final)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn make_grid_arithmetic() {
        let g = make_grid(1.0, 8).unwrap();
        assert_eq!(g.h, 0.125);
        assert_eq!(g.m(), 225);
        let g = make_grid(1.0, 2).unwrap();
        assert_eq!(g.h, 0.5);
        assert_eq!(g.m(), 9);
        let g = make_grid(2.0, 4).unwrap();
        assert_eq!(g.h, 0.5);
        assert_eq!(g.m(), 49);
        assert!(make_grid(1.0, 1).is_err());
        assert!(make_grid(-1.0, 4).is_err());
        assert!(make_grid(0.0, 4).is_err());
    }

    #[test]
    fn index_roundtrip_bijection() {
        let g = make_grid(1.0, 5).unwrap();
        let mut seen = vec![false; g.m()];
        for (p, q) in g.iter_nodes() {
            let idx = g.index(p, q);
            assert!(!seen[idx]);
            seen[idx] = true;
            assert_eq!(g.coords(idx), (p, q));
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn project_field_samples_nodes() {
        let g = make_grid(1.0, 2).unwrap();
        let f = project_field_re(|x, y| (1.0 - x * x) * (1.0 - y * y), &g);
        assert_relative_eq!(f[g.index(0, 0)].re, 1.0);
        assert_relative_eq!(f[g.index(1, 1)].re, 0.5625);
        let z = project_field_re(|_, _| 0.0, &g);
        assert!(z.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn project_field_is_linear() {
        let g = make_grid(1.5, 3).unwrap();
        let a = 2.75;
        let g1 = |x: f64, y: f64| x * x - 0.3 * y;
        let g2 = |x: f64, y: f64| (x * y).sin();
        let lhs = project_field_re(|x, y| a * g1(x, y) + g2(x, y), &g);
        let f1 = project_field_re(g1, &g);
        let f2 = project_field_re(g2, &g);
        for i in 0..g.m() {
            assert_relative_eq!(lhs[i].re, a * f1[i].re + f2[i].re, epsilon = 1e-14);
        }
    }
}
