//! Periodic finite-difference operators, the curvature weight, the spectral
//! screened-Poisson solver and the vector shrinkage operator.
//!
//! `gradient` uses forward differences and `divergence` backward differences,
//! both with periodic wraparound, so that `<∇a, b> = -<a, div b>` holds
//! exactly and `div ∘ ∇` is the 5-point periodic Laplacian diagonalized by
//! the DFT.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};

pub fn gradient(phi: &ScalarField) -> VectorField {
    let (w, h) = phi.dims();
    let p = phi.as_slice();
    let mut gx = ScalarField::zeros(w, h);
    let mut gy = ScalarField::zeros(w, h);
    {
        let (sx, sy) = (gx.as_mut_slice(), gy.as_mut_slice());
        for y in 0..h {
            let row = y * w;
            let down = ((y + 1) % h) * w;
            for x in 0..w {
                let right = (x + 1) % w;
                sx[row + x] = p[row + right] - p[row + x];
                sy[row + x] = p[down + x] - p[row + x];
            }
        }
    }
    VectorField { x: gx, y: gy }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let (w, h) = v.dims();
    let (vx, vy) = (v.x.as_slice(), v.y.as_slice());
    let mut out = ScalarField::zeros(w, h);
    let o = out.as_mut_slice();
    for y in 0..h {
        let row = y * w;
        let up = ((y + h - 1) % h) * w;
        for x in 0..w {
            let left = (x + w - 1) % w;
            o[row + x] = (vx[row + x] - vx[row + left]) + (vy[row + x] - vy[up + x]);
        }
    }
    out
}

/// Five-point periodic Laplacian, `div(grad(phi))`.
pub fn laplacian(phi: &ScalarField) -> ScalarField {
    divergence(&gradient(phi))
}

/// Signed curvature `div(∇φ / max(ε, |∇φ|))`.
pub fn curvature(phi: &ScalarField, epsilon: f64) -> ScalarField {
    let g = gradient(phi);
    let mut nx = g.x;
    let mut ny = g.y;
    for (a, b) in nx.as_mut_slice().iter_mut().zip(ny.as_mut_slice()) {
        let norm = a.hypot(*b).max(epsilon);
        *a /= norm;
        *b /= norm;
    }
    divergence(&VectorField { x: nx, y: ny })
}

/// Elastica edge weight `g = α + β|κ|`.
pub fn curvature_weight(phi: &ScalarField, alpha: f64, beta: f64, epsilon: f64) -> ScalarField {
    debug_assert!(alpha >= 0.0 && beta >= 0.0 && epsilon > 0.0);
    if beta == 0.0 {
        return ScalarField::filled(phi.width(), phi.height(), alpha);
    }
    curvature(phi, epsilon).map(|k| alpha + beta * k.abs())
}

/// Cached FFTs and Laplacian eigenvalues for one grid size.
#[derive(Clone)]
pub struct SpectralPlan {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    /// Laplacian symbol in transposed (column-major) layout.
    eigen_t: Vec<f64>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl SpectralPlan {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "grid must be non-empty");
        let mut planner = FftPlanner::new();
        let lx: Vec<f64> = (0..width)
            .map(|k| -4.0 * (PI * k as f64 / width as f64).sin().powi(2))
            .collect();
        let ly: Vec<f64> = (0..height)
            .map(|k| -4.0 * (PI * k as f64 / height as f64).sin().powi(2))
            .collect();
        let mut eigen_t = Vec::with_capacity(width * height);
        for ex in &lx {
            for ey in &ly {
                eigen_t.push(ex + ey);
            }
        }
        eigen_t[0] = 0.0;
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            eigen_t,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Eigenvalue of the periodic Laplacian at frequency `(kx, ky)`.
    pub fn eigenvalue(&self, kx: usize, ky: usize) -> f64 {
        self.eigen_t[kx * self.height + ky]
    }
}

fn transpose(src: &[Complex<f64>], dst: &mut [Complex<f64>], w: usize, h: usize) {
    for y in 0..h {
        for x in 0..w {
            dst[x * h + y] = src[y * w + x];
        }
    }
}

impl SpectralPlan {
    /// Multiplies the spectrum of `field` by `symbol(λ)`, where `λ` is the
    /// Laplacian eigenvalue of each frequency.
    fn apply_symbol(&self, field: &ScalarField, symbol: impl Fn(f64) -> f64) -> Result<ScalarField> {
        if field.dims() != self.dims() {
            return Err(Error::dims(self.dims(), field.dims()));
        }
        let (w, h) = self.dims();
        let mut a: Vec<Complex<f64>> = field.as_slice().iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mut b = vec![Complex::new(0.0, 0.0); w * h];
        self.row_fwd.process(&mut a);
        transpose(&a, &mut b, w, h);
        self.col_fwd.process(&mut b);
        let norm = (w * h) as f64;
        for (c, &lam) in b.iter_mut().zip(&self.eigen_t) {
            *c *= symbol(lam) / norm;
        }
        self.col_inv.process(&mut b);
        transpose(&b, &mut a, h, w);
        self.row_inv.process(&mut a);
        ScalarField::from_vec(w, h, a.into_iter().map(|c| c.re).collect())
    }

    /// Discrete heat flow `exp(tΔ) field`; `t = 0` is the identity.
    pub fn heat(&self, field: &ScalarField, t: f64) -> Result<ScalarField> {
        if !(t >= 0.0) {
            return Err(Error::param("smoothing", "heat time must be >= 0"));
        }
        if t == 0.0 {
            return Ok(field.clone());
        }
        self.apply_symbol(field, |lam| (t * lam).exp())
    }
}

/// Solves `(−μΔ + τ)φ = rhs` with periodic boundaries.
pub fn solve_screened_poisson(
    rhs: &ScalarField,
    mu: f64,
    tau: f64,
    plan: &SpectralPlan,
) -> Result<ScalarField> {
    if !(mu > 0.0) || !(tau > 0.0) {
        return Err(Error::param("mu/tau", "both must be positive"));
    }
    plan.apply_symbol(rhs, |lam| 1.0 / (-mu * lam + tau))
}

/// Pointwise minimizer of `g|w| + (μ/2)|w − t|²`:
/// `w = max(|t| − g/μ, 0) · t/|t|`, and `w = 0` when `|t| <= g/μ`.
pub fn shrink(target: &VectorField, weight: &ScalarField, mu: f64) -> VectorField {
    let mut out = target.clone();
    let ws = weight.as_slice();
    let (ox, oy) = (out.x.as_mut_slice(), out.y.as_mut_slice());
    for i in 0..ws.len() {
        let (tx, ty) = (ox[i], oy[i]);
        let norm = tx.hypot(ty);
        let cut = ws[i] / mu;
        if norm <= cut {
            ox[i] = 0.0;
            oy[i] = 0.0;
        } else if cut > 0.0 {
            let s = (norm - cut) / norm;
            ox[i] = tx * s;
            oy[i] = ty * s;
        }
    }
    out
}
