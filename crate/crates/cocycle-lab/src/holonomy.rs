//! Stable and unstable holonomies as certified limits.
//!
//! Along a local stable leaf the products `(Fⁿ_y)⁻¹ ∘ Fⁿ_x` telescope into
//! `Id + Σᵢ (Fⁱ_y)⁻¹ ∘ rᵢ ∘ Fⁱ_x` with `rᵢ = F(yᵢ)⁻¹F(xᵢ) − Id`; fiber
//! bunching makes the increments decay geometrically with ratio θ, so a
//! partial sum plus the observed geometric envelope certifies the limit. The
//! leaf partner is propagated through the exact linear relation
//! `yᵢ = xᵢ + t·λₛⁱ·v_s`, never by independent iteration, so the pair stays
//! on the leaf to machine precision at every depth.

use crate::cocycle::{CocycleError, CocycleSpec};
use crate::torus::{LeafKind, ToralAutomorphism, TorusError, TorusPoint, DEFAULT_LEAF_RADIUS};
use nalgebra::DMatrix;
use thiserror::Error;

/// Transversal deviation below which a point counts as lying on a leaf.
pub const LEAF_TOLERANCE: f64 = 1e-9;

/// Hard cap on series terms before giving up on a tolerance.
pub const MAX_SERIES_TERMS: usize = 2000;

/// Hard cap on contraction steps when extending along a global leaf.
pub const MAX_EXTENSION_STEPS: usize = 128;

#[derive(Debug, Error)]
pub enum HolonomyError {
    #[error("cocycle is not fiber bunched on the sample grid (margin {margin})")]
    NotFiberBunched { margin: f64 },
    #[error("target is not on the local {leaf:?} leaf (transversal {transversal:.3e}, along-leaf {along:.3e})")]
    NotOnLeaf {
        leaf: LeafKind,
        transversal: f64,
        along: f64,
    },
    #[error("series tail {reached:.3e} above tolerance {tol:.3e} after {terms} terms")]
    ToleranceUnreachable {
        reached: f64,
        tol: f64,
        terms: usize,
    },
    #[error("orbit did not contract into the local chart within {0} steps")]
    LeafEscape(usize),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error(transparent)]
    Torus(#[from] TorusError),
}

/// A computed holonomy with its provenance.
#[derive(Debug, Clone)]
pub struct HolonomyMap {
    pub from: TorusPoint,
    pub to: TorusPoint,
    pub leaf: LeafKind,
    pub matrix: DMatrix<f64>,
    /// Series terms actually summed (plus conjugation depth for extensions).
    pub n_used: usize,
    /// Certified bound on `‖true limit − matrix‖` from the observed
    /// geometric envelope of the increments.
    pub tail_bound: f64,
    /// Geometric ratio used for the certificate.
    pub theta: f64,
    /// Norms of the summed increments, for decay-rate diagnostics.
    pub increment_norms: Vec<f64>,
}

/// Holonomy calculator for one cocycle, carrying the certified contraction
/// ratio θ obtained from a fiber-bunching sweep.
pub struct HolonomyEngine<'a> {
    cocycle: &'a CocycleSpec,
    theta: f64,
    margin: f64,
}

impl<'a> HolonomyEngine<'a> {
    /// Certifies fiber bunching on the grid and fixes the series ratio
    /// θ = 1.05 · margin, capped below one. A grid maximum can undershoot
    /// the true supremum; the certificate ratio must not.
    pub fn new(
        cocycle: &'a CocycleSpec,
        grid: &[TorusPoint],
    ) -> Result<HolonomyEngine<'a>, HolonomyError> {
        let m = cocycle.fiber_bunching_margin(grid, cocycle.beta())?;
        if m.margin >= 1.0 {
            return Err(HolonomyError::NotFiberBunched { margin: m.margin });
        }
        let theta = (1.05 * m.margin).min(0.5 * (1.0 + m.margin));
        Ok(HolonomyEngine {
            cocycle,
            theta,
            margin: m.margin,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn cocycle(&self) -> &CocycleSpec {
        self.cocycle
    }

    fn base(&self) -> &ToralAutomorphism {
        self.cocycle.base()
    }

    /// Leaf coordinate of `y` relative to `x`, requiring the transversal
    /// component to vanish.
    fn leaf_coordinate(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        leaf: LeafKind,
    ) -> Result<f64, HolonomyError> {
        let (s, u) = self.base().su_coordinates(x, y);
        let (along, transversal) = match leaf {
            LeafKind::Stable => (s, u),
            LeafKind::Unstable => (u, s),
        };
        let radius = DEFAULT_LEAF_RADIUS * self.base().lattice().min_period();
        if transversal.abs() > LEAF_TOLERANCE || along.abs() > radius {
            return Err(HolonomyError::NotOnLeaf {
                leaf,
                transversal: transversal.abs(),
                along: along.abs(),
            });
        }
        Ok(along)
    }

    /// `H^s_{xy} = lim (Fⁿ_y)⁻¹ Fⁿ_x` for `y` on the local stable leaf of
    /// `x`, summed until the certified tail drops below `tol`.
    pub fn stable_holonomy(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        tol: f64,
    ) -> Result<HolonomyMap, HolonomyError> {
        let t = self.leaf_coordinate(x, y, LeafKind::Stable)?;
        self.series(x, y, t, LeafKind::Stable, tol, 0)
    }

    /// `H^u_{xy} = lim_{n→−∞} (Fⁿ_y)⁻¹ Fⁿ_x` for `y` on the local unstable
    /// leaf of `x`.
    pub fn unstable_holonomy(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        tol: f64,
    ) -> Result<HolonomyMap, HolonomyError> {
        let t = self.leaf_coordinate(x, y, LeafKind::Unstable)?;
        self.series(x, y, t, LeafKind::Unstable, tol, 0)
    }

    /// Shared series core. `min_terms` forces extra terms past the certified
    /// stop, for two-scale uniqueness probes.
    fn series(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        t: f64,
        leaf: LeafKind,
        tol: f64,
        min_terms: usize,
    ) -> Result<HolonomyMap, HolonomyError> {
        let d = self.cocycle.fiber_dim();
        if x == y {
            return Ok(HolonomyMap {
                from: x.clone(),
                to: y.clone(),
                leaf,
                matrix: DMatrix::identity(d, d),
                n_used: 0,
                tail_bound: 0.0,
                theta: self.theta,
                increment_norms: Vec::new(),
            });
        }
        let lambda = match leaf {
            LeafKind::Stable => self.base().contracting_eigenvalue(),
            LeafKind::Unstable => 1.0 / self.base().expanding_eigenvalue(),
        };
        let dir = match leaf {
            LeafKind::Stable => self.base().stable_direction(),
            LeafKind::Unstable => self.base().unstable_direction(),
        };
        let mut sum = DMatrix::<f64>::identity(d, d);
        let mut a = DMatrix::<f64>::identity(d, d);
        let mut b_inv = DMatrix::<f64>::identity(d, d);
        let mut x_i = x.clone();
        let mut leaf_factor = t;
        let mut c5: f64 = 0.0;
        let mut increments = Vec::new();
        let mut tail = f64::INFINITY;
        for i in 0..MAX_SERIES_TERMS {
            let term = match leaf {
                LeafKind::Stable => {
                    // rᵢ = F(yᵢ)⁻¹ F(xᵢ) − Id at the current forward depth.
                    let y_i = x_i.translate_f64(leaf_factor * dir[0], leaf_factor * dir[1]);
                    let fx = self.cocycle.eval(&x_i);
                    let fy_inv = self.cocycle.eval_inverse(&y_i)?;
                    let r = &fy_inv * &fx - DMatrix::<f64>::identity(d, d);
                    let term = &b_inv * &r * &a;
                    a = &fx * &a;
                    b_inv = &b_inv * &fy_inv;
                    x_i = self.base().step(&x_i);
                    leaf_factor *= lambda;
                    term
                }
                LeafKind::Unstable => {
                    // Backward depth i+1: r̄ᵢ = F(y₋)F(x₋)⁻¹ − Id.
                    let x_prev = self.base().step_back(&x_i);
                    let y_factor = leaf_factor * lambda;
                    let y_prev = x_prev.translate_f64(y_factor * dir[0], y_factor * dir[1]);
                    let fx_inv = self.cocycle.eval_inverse(&x_prev)?;
                    let fy = self.cocycle.eval(&y_prev);
                    let r = &fy * &fx_inv - DMatrix::<f64>::identity(d, d);
                    let term = &b_inv * &r * &a;
                    a = &fx_inv * &a;
                    b_inv = &b_inv * &fy;
                    x_i = x_prev;
                    leaf_factor = y_factor;
                    term
                }
            };
            let norm = crate::conformal::spectral_norm(&term);
            sum += &term;
            increments.push(norm);
            let n = i + 1;
            c5 = c5.max(norm / self.theta.powi(i as i32));
            tail = c5 * self.theta.powi(n as i32) / (1.0 - self.theta);
            if tail < tol && n >= min_terms {
                return Ok(HolonomyMap {
                    from: x.clone(),
                    to: y.clone(),
                    leaf,
                    matrix: sum,
                    n_used: n,
                    tail_bound: tail,
                    theta: self.theta,
                    increment_norms: increments,
                });
            }
        }
        Err(HolonomyError::ToleranceUnreachable {
            reached: tail,
            tol,
            terms: MAX_SERIES_TERMS,
        })
    }

    /// Holonomy along a global stable leaf: contract with `m` forward steps
    /// until the pair is local, then conjugate back:
    /// `H = (Fᵐ_y)⁻¹ ∘ H^s_{fᵐx, fᵐy} ∘ Fᵐ_x`.
    pub fn extend_stable(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        tol: f64,
    ) -> Result<HolonomyMap, HolonomyError> {
        self.extend(x, y, LeafKind::Stable, tol)
    }

    /// Mirror along a global unstable leaf, contracting backward.
    pub fn extend_unstable(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        tol: f64,
    ) -> Result<HolonomyMap, HolonomyError> {
        self.extend(x, y, LeafKind::Unstable, tol)
    }

    fn extend(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        leaf: LeafKind,
        tol: f64,
    ) -> Result<HolonomyMap, HolonomyError> {
        let d = self.cocycle.fiber_dim();
        let mut fx = x.clone();
        let mut fy = y.clone();
        // Products F^m at x and (F^m)⁻¹ at y along the contraction.
        let mut fwd_x = DMatrix::<f64>::identity(d, d);
        let mut inv_y = DMatrix::<f64>::identity(d, d);
        for m in 0..=MAX_EXTENSION_STEPS {
            if self.leaf_coordinate(&fx, &fy, leaf).is_ok() {
                let local = match leaf {
                    LeafKind::Stable => self.stable_holonomy(&fx, &fy, tol)?,
                    LeafKind::Unstable => self.unstable_holonomy(&fx, &fy, tol)?,
                };
                let matrix = &inv_y * &local.matrix * &fwd_x;
                // Conjugation scales the certified tail by the factor norms.
                let scale = crate::conformal::spectral_norm(&inv_y)
                    * crate::conformal::spectral_norm(&fwd_x);
                return Ok(HolonomyMap {
                    from: x.clone(),
                    to: y.clone(),
                    leaf,
                    matrix,
                    n_used: local.n_used + m,
                    tail_bound: local.tail_bound * scale,
                    theta: self.theta,
                    increment_norms: local.increment_norms,
                });
            }
            match leaf {
                LeafKind::Stable => {
                    fwd_x = self.cocycle.eval(&fx) * fwd_x;
                    inv_y *= self.cocycle.eval_inverse(&fy)?;
                    fx = self.base().step(&fx);
                    fy = self.base().step(&fy);
                }
                LeafKind::Unstable => {
                    fx = self.base().step_back(&fx);
                    fy = self.base().step_back(&fy);
                    fwd_x = self.cocycle.eval_inverse(&fx)? * fwd_x;
                    inv_y *= self.cocycle.eval(&fy);
                }
            }
        }
        Err(HolonomyError::LeafEscape(MAX_EXTENSION_STEPS))
    }

    /// Fiber transport along the canonical two-leg su-path between any two
    /// points: stable leg to the corner, unstable leg to the target. The
    /// decomposition comes straight from the eigenbasis (no chart-radius
    /// gate: the leg relation is exact modulo the lattice and the extension
    /// machinery contracts long legs into the local charts). Returns the
    /// composed map and a propagated error bound.
    pub fn transport_su(
        &self,
        from: &TorusPoint,
        to: &TorusPoint,
        tol: f64,
    ) -> Result<(DMatrix<f64>, f64), HolonomyError> {
        let (s, _u) = self.base().su_coordinates(from, to);
        let dir = self.base().stable_direction();
        let corner = from.translate_f64(s * dir[0], s * dir[1]);
        let stable = self.extend_stable(from, &corner, tol)?;
        let unstable = self.extend_unstable(&corner, to, tol)?;
        let matrix = &unstable.matrix * &stable.matrix;
        let bound = unstable.tail_bound * crate::conformal::spectral_norm(&stable.matrix)
            + stable.tail_bound * crate::conformal::spectral_norm(&unstable.matrix)
            + stable.tail_bound * unstable.tail_bound;
        Ok((matrix, bound))
    }

    /// Composition, equivariance, and Hölder diagnostics over leaf triples
    /// `(x, x + t_y·v_s, x + t_z·v_s)`.
    pub fn verify_axioms(
        &self,
        triples: &[(TorusPoint, f64, f64)],
        tol: f64,
    ) -> Result<AxiomReport, HolonomyError> {
        let mut report = AxiomReport {
            tolerance: tol,
            ..AxiomReport::default()
        };
        for (x, ty, tz) in triples {
            let y = self.base().stable_point(x, *ty)?;
            let z = self.base().stable_point(x, *tz)?;
            let h_xy = self.stable_holonomy(x, &y, tol * 1e-2)?;
            let h_xz = self.stable_holonomy(x, &z, tol * 1e-2)?;
            let h_yz = self.stable_holonomy(&y, &z, tol * 1e-2)?;
            let comp = (&h_yz.matrix * &h_xy.matrix) - &h_xz.matrix;
            report.max_composition_defect = report
                .max_composition_defect
                .max(crate::conformal::spectral_norm(&comp));

            // Equivariance at one step: H_{xy} = F(y)⁻¹ ∘ H_{fx,fy} ∘ F(x).
            let fx = self.base().step(x);
            let fy = self.base().step(&y);
            let h_up = self.stable_holonomy(&fx, &fy, tol * 1e-2)?;
            let rebuilt = self.cocycle.eval_inverse(&y)? * &h_up.matrix * self.cocycle.eval(x);
            let eq = &rebuilt - &h_xy.matrix;
            report.max_equivariance_defect = report
                .max_equivariance_defect
                .max(crate::conformal::spectral_norm(&eq));

            // Hölder constant in ‖H − Id‖ ≤ C·dist^β.
            let dist = crate::torus::torus_dist(x, &y);
            if dist > 0.0 {
                let dev = &h_xy.matrix
                    - DMatrix::<f64>::identity(h_xy.matrix.nrows(), h_xy.matrix.ncols());
                report.holder_constant = report
                    .holder_constant
                    .max(crate::conformal::spectral_norm(&dev) / dist.powf(self.cocycle.beta()));
            }

            // Cauchy/uniqueness probe: doubling the summed terms moves the
            // result by less than twice the certified tail.
            let probe = self.series(x, &y, *ty, LeafKind::Stable, tol * 1e-2, h_xy.n_used * 2)?;
            let diff = crate::conformal::spectral_norm(&(&probe.matrix - &h_xy.matrix));
            report.max_uniqueness_defect =
                report.max_uniqueness_defect.max(if h_xy.tail_bound > 0.0 {
                    diff / (2.0 * h_xy.tail_bound)
                } else {
                    0.0
                });

            report.max_tail_bound = report.max_tail_bound.max(h_xy.tail_bound);
            report.triples += 1;
        }
        report.pass = report.max_composition_defect < tol && report.max_equivariance_defect < tol;
        Ok(report)
    }

    /// Table of `‖(Fⁱ_y)⁻¹‖·‖Fⁱ_x‖` against the fiber-bunching envelope
    /// `θⁱ·ν⁻ⁱᵝ`, with the empirical constant C₀ = max ratio.
    pub fn lemma_fi_table(
        &self,
        x: &TorusPoint,
        t: f64,
        i_max: usize,
    ) -> Result<FiTable, HolonomyError> {
        let y = self.base().stable_point(x, t)?;
        let _ = self.leaf_coordinate(x, &y, LeafKind::Stable)?;
        let d = self.cocycle.fiber_dim();
        let nu = self.base().contraction_rate();
        let beta = self.cocycle.beta();
        let lambda = self.base().contracting_eigenvalue();
        let dir = self.base().stable_direction();
        let mut a = DMatrix::<f64>::identity(d, d);
        let mut b_inv = DMatrix::<f64>::identity(d, d);
        let mut x_i = x.clone();
        let mut leaf_factor = t;
        let mut rows = Vec::with_capacity(i_max + 1);
        let mut c0: f64 = 0.0;
        for i in 0..=i_max {
            let product =
                crate::conformal::spectral_norm(&b_inv) * crate::conformal::spectral_norm(&a);
            let envelope = self.theta.powi(i as i32) * nu.powf(-(i as f64) * beta);
            c0 = c0.max(product / envelope);
            rows.push(FiRow {
                i,
                product,
                envelope,
            });
            let y_i = x_i.translate_f64(leaf_factor * dir[0], leaf_factor * dir[1]);
            let fx = self.cocycle.eval(&x_i);
            let fy_inv = self.cocycle.eval_inverse(&y_i)?;
            a = &fx * &a;
            b_inv = &b_inv * &fy_inv;
            x_i = self.base().step(&x_i);
            leaf_factor *= lambda;
        }
        Ok(FiTable { rows, c0 })
    }
}

#[derive(Debug, Clone, Default)]
pub struct AxiomReport {
    pub pass: bool,
    pub triples: usize,
    pub max_composition_defect: f64,
    pub max_equivariance_defect: f64,
    /// Empirical constant in `‖H_{xy} − Id‖ ≤ C·dist(x,y)^β`.
    pub holder_constant: f64,
    /// Max over triples of (recomputation shift)/(2·tail); below one means
    /// every certificate honored the Cauchy property.
    pub max_uniqueness_defect: f64,
    pub max_tail_bound: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FiRow {
    pub i: usize,
    /// `‖(Fⁱ_y)⁻¹‖·‖Fⁱ_x‖`.
    pub product: f64,
    /// `θⁱ·ν⁻ⁱᵝ` (the envelope without its constant).
    pub envelope: f64,
}

#[derive(Debug, Clone)]
pub struct FiTable {
    pub rows: Vec<FiRow>,
    /// Empirical constant: max over rows of product/envelope.
    pub c0: f64,
}

/// Least-squares slope of `ln(values[i])` against `i`, ignoring zeros; the
/// decay-rate diagnostic for increment sequences.
pub fn log_slope(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (i as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
