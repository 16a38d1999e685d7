//! Conjugate gradients for symmetric positive semi-definite operators.

use crate::ct::{Projector, Sinogram};
use crate::error::{Error, Result};
use crate::volume::{dot, Volume3D};

/// A symmetric positive semi-definite linear map on flat buffers.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// Writes `M x` into `out`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// `A*A` for a slice-wise projector over `depth` slices.
pub struct NormalOperator<'a> {
    projector: &'a Projector,
    depth: usize,
}

impl<'a> NormalOperator<'a> {
    pub fn new(projector: &'a Projector, depth: usize) -> Self {
        Self { projector, depth }
    }

    /// Right-hand side `A* y` of the normal equations.
    pub fn rhs(&self, y: &Sinogram) -> Result<Volume3D> {
        self.projector.backproject(y)
    }
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.projector.width() * self.projector.height() * self.depth
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.projector.normal_apply(x, out);
    }
}

/// Dense row-major matrix, mostly for tests and small systems.
pub struct DenseOperator {
    n: usize,
    entries: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::invalid("dense operator needs n*n entries"));
        }
        Ok(Self { n, entries })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut entries = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            entries[i * n + i] = *d;
        }
        Self { n, entries }
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (row, o) in self.entries.chunks_exact(self.n).zip(out.iter_mut()) {
            *o = dot(row, x);
        }
    }
}

pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    /// Steps actually taken; fewer than requested on convergence or breakdown.
    pub iterations: usize,
    /// Set when a search direction had non-positive curvature and the
    /// iterate was returned early.
    pub breakdown: bool,
    /// `‖rhs - M x_m‖` for `m = 0..=iterations`.
    pub residual_norms: Vec<f64>,
}

/// Runs `iters` conjugate-gradient steps on `op x = rhs` from `init`.
///
/// Stops early once `‖r‖ < 1e-10 (1 + ‖rhs‖)`. Zero curvature along a search
/// direction ends the run with `breakdown` set instead of failing, since
/// `A*A` is singular under sparse views.
pub fn cg<Op: LinearOperator + ?Sized>(
    op: &Op,
    rhs: &[f64],
    init: &[f64],
    iters: usize,
) -> Result<CgOutcome> {
    let n = op.dim();
    if rhs.len() != n || init.len() != n {
        return Err(Error::invalid(format!(
            "cg shapes disagree: operator {n}, rhs {}, init {}",
            rhs.len(),
            init.len()
        )));
    }
    let mut x = init.to_vec();
    if iters == 0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            breakdown: false,
            residual_norms: Vec::new(),
        });
    }
    let tol = 1e-10 * (1.0 + dot(rhs, rhs).sqrt());
    let mut mx = vec![0.0; n];
    op.apply(&x, &mut mx);
    let mut r: Vec<f64> = rhs.iter().zip(&mx).map(|(b, m)| b - m).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut residual_norms = vec![rr.sqrt()];
    let mut mp = vec![0.0; n];
    let mut breakdown = false;
    let mut taken = 0;
    for it in 0..iters {
        if !rr.is_finite() {
            return Err(Error::NumericFailure {
                message: "non-finite residual".into(),
                iteration: Some(it),
            });
        }
        if rr.sqrt() < tol {
            break;
        }
        op.apply(&p, &mut mp);
        let curvature = dot(&p, &mp);
        if !curvature.is_finite() {
            return Err(Error::NumericFailure {
                message: "non-finite curvature".into(),
                iteration: Some(it),
            });
        }
        if curvature <= f64::MIN_POSITIVE * rr.max(1.0) {
            breakdown = true;
            break;
        }
        let alpha = rr / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * mp[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        taken = it + 1;
        residual_norms.push(rr.sqrt());
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure {
            message: "non-finite iterate".into(),
            iteration: Some(taken),
        });
    }
    Ok(CgOutcome {
        x,
        iterations: taken,
        breakdown,
        residual_norms,
    })
}

/// [`cg`] on volumes.
pub fn cg_volume<Op: LinearOperator + ?Sized>(
    op: &Op,
    rhs: &Volume3D,
    init: &Volume3D,
    iters: usize,
) -> Result<(Volume3D, CgOutcome)> {
    if !rhs.same_shape(init) {
        return Err(Error::invalid("cg rhs and init shapes differ"));
    }
    let out = cg(op, rhs.data(), init.data(), iters)?;
    let (w, h, d) = rhs.dims();
    let v = Volume3D::from_vec(w, h, d, out.x.clone())?;
    Ok((v, out))
}
