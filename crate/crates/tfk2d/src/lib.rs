//! Finite-difference / convolution-quadrature solver for the 2D backward
//! tempered fractional Feynman-Kac equation with reaction.
//!
//! The equation couples a tempered Caputo derivative in time with the
//! tempered fractional Laplacian (Delta + gamma)^{beta/2} in space on the
//! square (-l, l)^2 with homogeneous Dirichlet exterior data. Space is
//! discretised by a weighted-trapezoidal / bilinear-interpolation rule that
//! yields a block-Toeplitz-Toeplitz-block operator; time by Lubich
//! convolution quadrature (backward Euler or second-order backward
//! difference). Linear systems are solved by COCG with an optional
//! block-circulant preconditioner, with all matvecs done via FFT.

pub mod cq;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod quad;
pub mod solver;
pub mod spatial;
pub mod special;
pub mod study;
