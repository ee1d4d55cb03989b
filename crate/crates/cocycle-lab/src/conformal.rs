//! The space of conformal structures on Rᵈ: symmetric positive-definite
//! matrices of determinant one, carrying the GL(d,R)-invariant metric of
//! nonpositive curvature. Provides the distance, the group action, the
//! near-identity perturbation bound, Karcher means, and minimal enclosing
//! balls (circumcenters).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is singular or too ill-conditioned to invert")]
    SingularMatrix,
    #[error("matrix is not symmetric positive definite (eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("perturbation norm {norm} exceeds the lemma hypothesis threshold {threshold}")]
    HypothesisViolated { norm: f64, threshold: f64 },
    #[error("{0} did not converge within {1} iterations")]
    NoConvergence(&'static str, usize),
}

/// A conformal structure: symmetric positive definite with det = 1,
/// renormalized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalStructure {
    matrix: DMatrix<f64>,
}

impl ConformalStructure {
    pub fn identity(dim: usize) -> ConformalStructure {
        ConformalStructure {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    /// Symmetrizes and det-normalizes the input; rejects non-SPD matrices.
    pub fn new(matrix: DMatrix<f64>) -> Result<ConformalStructure, ConformalError> {
        let d = matrix.nrows();
        if matrix.ncols() != d || d == 0 {
            return Err(ConformalError::DimensionMismatch(d, matrix.ncols()));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let asym = (&matrix - matrix.transpose()).norm() / (1.0 + matrix.norm());
        if asym > 1e-10 {
            return Err(ConformalError::NotPositiveDefinite(asym));
        }
        let eigen = sym.clone().symmetric_eigen();
        let min = eigen.eigenvalues.min();
        if min <= 0.0 || !min.is_finite() {
            return Err(ConformalError::NotPositiveDefinite(min));
        }
        let log_det: f64 = eigen.eigenvalues.iter().map(|l| l.ln()).sum();
        let scale = (-log_det / d as f64).exp();
        Ok(ConformalStructure {
            matrix: sym * scale,
        })
    }

    pub fn from_diagonal(entries: &[f64]) -> Result<ConformalStructure, ConformalError> {
        ConformalStructure::new(DMatrix::from_diagonal(&DVector::from_row_slice(entries)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn condition_number(&self) -> f64 {
        let eigen = self.matrix.clone().symmetric_eigen();
        eigen.eigenvalues.max() / eigen.eigenvalues.min()
    }
}

/// Eigendecomposition of a small symmetric matrix by cyclic Jacobi sweeps.
/// Converges to machine precision where a general QR-based solver leaves
/// ~1e-11 eigenvector error, which would put a floor under the Karcher
/// gradient and the minimax balance checks.
fn jacobi_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..40 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-18 * (a[(p, p)].abs() + a[(q, q)].abs()) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(p, k)] = a[(k, p)];
                        a[(k, q)] = s * akp + c * akq;
                        a[(q, k)] = a[(k, q)];
                    }
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diagonal(), v)
}

/// Applies `f` to the spectrum of a symmetric matrix.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, q) = jacobi_eigen(m);
    let d = DMatrix::from_diagonal(&values.map(f));
    &q * d * q.transpose()
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, f64::sqrt)
}

fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| 1.0 / l.sqrt())
}

fn sym_log(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, f64::ln)
}

fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, f64::exp)
}

/// Spectral norm of an arbitrary matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Distance `√d/2 · ‖log spec(C₁⁻¹C₂)‖₂`. At the identity this is the
/// spectral log-norm formula; in general it is the unique invariant
/// extension. The spectrum is taken from the congruent symmetric form
/// `L⁻¹ C₂ L⁻ᵀ` with `C₁ = LLᵀ`; triangular solves keep the computation
/// backward stable where an eigenvector-based inverse square root is not.
pub fn distance(c1: &ConformalStructure, c2: &ConformalStructure) -> Result<f64, ConformalError> {
    if c1.dim() != c2.dim() {
        return Err(ConformalError::DimensionMismatch(c1.dim(), c2.dim()));
    }
    let chol = c1
        .matrix
        .clone()
        .cholesky()
        .ok_or(ConformalError::NotPositiveDefinite(0.0))?;
    let mut y = c2.matrix.clone();
    chol.l().solve_lower_triangular_mut(&mut y);
    let mut yt = y.transpose();
    chol.l().solve_lower_triangular_mut(&mut yt);
    let sym = (&yt + yt.transpose()) * 0.5;
    let (values, _) = jacobi_eigen(&sym);
    let sum: f64 = values.iter().map(|l| l.ln().powi(2)).sum();
    Ok(0.5 * (c1.dim() as f64).sqrt() * sum.sqrt())
}

/// Push-forward of a conformal structure by an invertible linear map:
/// `A(C) = det(AᵀA)^{1/d} (A⁻¹)ᵀ C A⁻¹`. This is an isometry for the
/// invariant metric and a left action.
pub fn act(a: &DMatrix<f64>, c: &ConformalStructure) -> Result<ConformalStructure, ConformalError> {
    let d = c.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(ConformalError::DimensionMismatch(a.nrows(), d));
    }
    let inv = a
        .clone()
        .try_inverse()
        .ok_or(ConformalError::SingularMatrix)?;
    let pushed = inv.transpose() * &c.matrix * &inv;
    // det(AᵀA)^{1/d} is exactly the factor restoring det = 1; `new` applies it.
    ConformalStructure::new(pushed)
}

/// Both sides of the near-identity perturbation bound
/// `dist(C, A(C)) ≤ 3d·cond(C)·‖A − Id‖`, valid for
/// `‖A − Id‖ ≤ (6·cond(C))⁻¹`.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationBound {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn perturbation_bound_check(
    c: &ConformalStructure,
    a: &DMatrix<f64>,
) -> Result<PerturbationBound, ConformalError> {
    let d = c.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(ConformalError::DimensionMismatch(a.nrows(), d));
    }
    let dev = a - DMatrix::<f64>::identity(d, d);
    let norm = spectral_norm(&dev);
    let cond = c.condition_number();
    let threshold = 1.0 / (6.0 * cond);
    if norm > threshold {
        return Err(ConformalError::HypothesisViolated { norm, threshold });
    }
    let lhs = distance(c, &act(a, c)?)?;
    let rhs = 3.0 * d as f64 * cond * norm;
    Ok(PerturbationBound { lhs, rhs })
}

/// Point at parameter `t` on the geodesic from `c1` to `c2`:
/// `C₁^{1/2} (C₁^{-1/2} C₂ C₁^{-1/2})ᵗ C₁^{1/2}`.
pub fn geodesic(
    c1: &ConformalStructure,
    c2: &ConformalStructure,
    t: f64,
) -> Result<ConformalStructure, ConformalError> {
    if c1.dim() != c2.dim() {
        return Err(ConformalError::DimensionMismatch(c1.dim(), c2.dim()));
    }
    let root = sym_sqrt(&c1.matrix);
    let inv_root = sym_inv_sqrt(&c1.matrix);
    let inner = spectral_map(&(&inv_root * &c2.matrix * &inv_root), |l| l.powf(t));
    ConformalStructure::new(&root * inner * root)
}

const KARCHER_MAX_ITER: usize = 500;
const KARCHER_GRAD_TOL: f64 = 1e-10;

/// Weighted Karcher mean: the unique minimizer of `Σ wᵢ dist(·, Cᵢ)²`.
/// Fixed-point iteration in the exp/log chart with step halving; the returned
/// point has Riemannian gradient norm below 1e-10.
pub fn karcher_mean(
    structures: &[ConformalStructure],
    weights: &[f64],
) -> Result<ConformalStructure, ConformalError> {
    karcher_mean_from(structures, weights, None)
}

fn karcher_mean_from(
    structures: &[ConformalStructure],
    weights: &[f64],
    start: Option<&ConformalStructure>,
) -> Result<ConformalStructure, ConformalError> {
    assert!(!structures.is_empty(), "mean of an empty set");
    assert_eq!(structures.len(), weights.len());
    let total: f64 = weights.iter().sum();
    assert!(weights.iter().all(|w| *w >= 0.0) && total > 0.0);
    let d = structures[0].dim();
    for c in structures {
        if c.dim() != d {
            return Err(ConformalError::DimensionMismatch(c.dim(), d));
        }
    }
    if structures.len() == 1 {
        return Ok(structures[0].clone());
    }
    let mut x = start.cloned().unwrap_or_else(|| structures[0].clone());
    let objective = |x: &ConformalStructure| -> Result<f64, ConformalError> {
        let mut sum = 0.0;
        for (c, w) in structures.iter().zip(weights) {
            sum += w / total * distance(x, c)?.powi(2);
        }
        Ok(sum)
    };
    let mut fx = objective(&x)?;
    for _ in 0..KARCHER_MAX_ITER {
        let root = sym_sqrt(&x.matrix);
        let inv_root = sym_inv_sqrt(&x.matrix);
        let mut tangent = DMatrix::<f64>::zeros(d, d);
        for (c, w) in structures.iter().zip(weights) {
            tangent += sym_log(&(&inv_root * &c.matrix * &inv_root)) * (w / total);
        }
        // Frobenius gradient norm in the normal chart at x.
        let grad_norm = tangent.norm();
        if grad_norm < KARCHER_GRAD_TOL {
            return Ok(x);
        }
        let mut step = 1.0;
        loop {
            let candidate = ConformalStructure::new(&root * sym_exp(&(&tangent * step)) * &root)?;
            let fc = objective(&candidate)?;
            // Near the minimizer the true decrease (~grad²) sits below float
            // resolution of the objective; accept anything within noise so the
            // fixed-point contraction keeps taking full steps.
            if fc <= fx + 1e-14 * (1.0 + fx.abs()) || step < 1e-8 {
                x = candidate;
                fx = fc;
                break;
            }
            step *= 0.5;
        }
    }
    Err(ConformalError::NoConvergence(
        "karcher mean",
        KARCHER_MAX_ITER,
    ))
}

/// Minimal enclosing ball of a finite set of conformal structures.
#[derive(Debug, Clone)]
pub struct EnclosingBall {
    pub center: ConformalStructure,
    pub radius: f64,
    /// Number of points attaining the radius (within 1e-8·(1+radius)); at
    /// least two unless the radius is zero.
    pub support: usize,
}

/// Circumcenter in the nonpositively-curved metric. A softmax-weighted
/// Karcher-mean homotopy localizes the farthest set, then a Newton solve of
/// the balance system (equal distances to the support points plus convex
/// stationarity of their log directions) polishes the center to machine
/// precision. The support set is grown or pruned until the KKT signs and the
/// coverage of the remaining points both hold.
pub fn minimal_enclosing_ball(
    structures: &[ConformalStructure],
) -> Result<EnclosingBall, ConformalError> {
    assert!(!structures.is_empty(), "ball of an empty set");
    let n = structures.len();
    if n == 1 {
        return Ok(EnclosingBall {
            center: structures[0].clone(),
            radius: 0.0,
            support: 1,
        });
    }
    let uniform = vec![1.0; n];
    let mut center = karcher_mean(structures, &uniform)?;
    let dists = |center: &ConformalStructure| -> Result<Vec<f64>, ConformalError> {
        structures.iter().map(|c| distance(center, c)).collect()
    };
    let mut d = dists(&center)?;
    let mut radius = d.iter().cloned().fold(0.0, f64::max);
    if radius < 1e-13 {
        return Ok(EnclosingBall {
            center,
            radius,
            support: n,
        });
    }
    // Homotopy warm start.
    let mut sharpness = 4.0 / (radius * radius);
    for _stage in 0..30 {
        let max_sq = radius * radius;
        let weights: Vec<f64> = d
            .iter()
            .map(|di| (sharpness * (di * di - max_sq)).exp())
            .collect();
        let next = karcher_mean_from(structures, &weights, Some(&center))?;
        let moved = distance(&next, &center)?;
        center = next;
        d = dists(&center)?;
        radius = d.iter().cloned().fold(0.0, f64::max);
        if moved < 1e-9 * (1.0 + radius) {
            break;
        }
        sharpness *= 3.0;
    }
    // Active-set Newton polish.
    let mut active: Vec<usize> = pick_active(&d, radius, 1e-3);
    for _round in 0..12 {
        if let Some(polished) = balance_newton(structures, &active, &center)? {
            let pd = dists(&polished)?;
            let pr = active.iter().map(|&i| pd[i]).fold(0.0, f64::max);
            // Coverage: pull any outside point into the active set and redo.
            let mut worst: Option<(usize, f64)> = None;
            for (i, di) in pd.iter().enumerate() {
                if !active.contains(&i)
                    && *di > pr + 1e-12 * (1.0 + pr)
                    && worst.is_none_or(|(_, w)| *di > w)
                {
                    worst = Some((i, *di));
                }
            }
            match worst {
                Some((i, _)) => {
                    center = polished;
                    d = pd;
                    radius = d.iter().cloned().fold(0.0, f64::max);
                    active.push(i);
                }
                None => {
                    center = polished;
                    d = pd;
                    radius = pr;
                    break;
                }
            }
        } else {
            // Newton failed (degenerate support guess): widen the active set.
            let wider = pick_active(&d, radius, 0.3);
            if wider.len() == active.len() {
                break;
            }
            active = wider;
        }
    }
    let support = d
        .iter()
        .filter(|di| radius - **di < 1e-8 * (1.0 + radius))
        .count();
    Ok(EnclosingBall {
        center,
        radius,
        support,
    })
}

fn pick_active(d: &[f64], radius: f64, rel_slack: f64) -> Vec<usize> {
    let slack = rel_slack * (1.0 + radius);
    (0..d.len()).filter(|&i| radius - d[i] < slack).collect()
}

/// Orthonormal basis of trace-free symmetric d×d matrices (the tangent space
/// of the det-1 SPD manifold in the normal chart).
fn tangent_basis(dim: usize) -> Vec<DMatrix<f64>> {
    let mut basis = Vec::new();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mut b = DMatrix::<f64>::zeros(dim, dim);
            b[(i, j)] = inv_sqrt2;
            b[(j, i)] = inv_sqrt2;
            basis.push(b);
        }
    }
    for k in 1..dim {
        // diag(1,...,1,-k,0,...)/√(k²+k): orthogonal to previous diagonals.
        let mut b = DMatrix::<f64>::zeros(dim, dim);
        let norm = ((k * k + k) as f64).sqrt();
        for i in 0..k {
            b[(i, i)] = 1.0 / norm;
        }
        b[(k, k)] = -(k as f64) / norm;
        basis.push(b);
    }
    basis
}

/// Newton solve for the minimax balance system at a fixed support set:
/// unknowns are normal-chart coordinates of the center and the convex
/// weights; equations are `Σ λᵢ Log_x(Cᵢ) = 0`, equal squared distances,
/// and `Σ λᵢ = 1`. Returns None when the Jacobian is singular or Newton
/// leaves the trust region.
fn balance_newton(
    structures: &[ConformalStructure],
    active: &[usize],
    start: &ConformalStructure,
) -> Result<Option<ConformalStructure>, ConformalError> {
    let dim = start.dim();
    let basis = tangent_basis(dim);
    let t = basis.len();
    let m = active.len();
    if m == 1 {
        return Ok(Some(structures[active[0]].clone()));
    }
    let n_unknowns = t + m;
    let chart_root = sym_sqrt(start.matrix());

    // x(ξ) = X₀^{1/2} exp(Σ ξ_k B_k) X₀^{1/2}
    let point_at = |xi: &DVector<f64>| -> Result<ConformalStructure, ConformalError> {
        let mut g = DMatrix::<f64>::zeros(dim, dim);
        for (k, b) in basis.iter().enumerate() {
            g += b * xi[k];
        }
        ConformalStructure::new(&chart_root * sym_exp(&g) * &chart_root)
    };

    let residual = |z: &DVector<f64>| -> Result<DVector<f64>, ConformalError> {
        let xi = z.rows(0, t).into_owned();
        let lambda = z.rows(t, m).into_owned();
        let x = point_at(&xi)?;
        let inv_root = sym_inv_sqrt(x.matrix());
        let mut f = DVector::<f64>::zeros(n_unknowns);
        // Stationarity: Σ λᵢ Log_x(Cᵢ) = 0 expressed in the basis.
        let mut combined = DMatrix::<f64>::zeros(dim, dim);
        let mut dsq = Vec::with_capacity(m);
        for (idx, &i) in active.iter().enumerate() {
            let log = sym_log(&(&inv_root * structures[i].matrix() * &inv_root));
            combined += &log * lambda[idx];
            dsq.push(distance(&x, &structures[i])?.powi(2));
        }
        for (k, b) in basis.iter().enumerate() {
            f[k] = combined.dot(b);
        }
        for idx in 1..m {
            f[t + idx - 1] = dsq[idx] - dsq[0];
        }
        f[t + m - 1] = lambda.iter().sum::<f64>() - 1.0;
        Ok(f)
    };

    let mut z = DVector::<f64>::zeros(n_unknowns);
    for idx in 0..m {
        z[t + idx] = 1.0 / m as f64;
    }
    let scale = 1.0 + distance(start, &structures[active[0]])?;
    for _iter in 0..40 {
        let f = residual(&z)?;
        if f.norm() < 1e-13 * scale {
            break;
        }
        // Finite-difference Jacobian; the system is small.
        let h = 1e-7;
        let mut jac = DMatrix::<f64>::zeros(n_unknowns, n_unknowns);
        for col in 0..n_unknowns {
            let mut zp = z.clone();
            zp[col] += h;
            let fp = residual(&zp)?;
            for row in 0..n_unknowns {
                jac[(row, col)] = (fp[row] - f[row]) / h;
            }
        }
        let delta = match jac.lu().solve(&(-&f)) {
            Some(delta) => delta,
            None => return Ok(None),
        };
        if !delta.iter().all(|v| v.is_finite()) || delta.norm() > 10.0 * scale {
            return Ok(None);
        }
        z += delta;
    }
    let f = residual(&z)?;
    if f.norm() > 1e-10 * scale {
        return Ok(None);
    }
    // Reject supports with meaningfully negative weights (not a true ball).
    for idx in 0..m {
        if z[t + idx] < -1e-8 {
            return Ok(None);
        }
    }
    Ok(Some(point_at(&z.rows(0, t).into_owned())?))
}
