//! Hölder matrix cocycles over toral automorphisms: evaluation, renormalized
//! iterates, quasiconformal distortion, fiber-bunching margins, and the
//! rotation–diagonal example family together with its cover models.

use crate::expr::Expr;
use crate::torus::{ratio_to_f64, Lattice, Rational, ToralAutomorphism, TorusError, TorusPoint};
use nalgebra::DMatrix;
use thiserror::Error;

/// Iterate budget for a single `iterate` call.
pub const DEFAULT_ITERATE_MAX: i64 = 20_000_000;

/// Running products are rescaled when their norm leaves this window, so
/// 10⁷-step products stay finite in double precision.
const RENORM_MAX: f64 = 1e30;
const RENORM_MIN: f64 = 1e-30;

/// Condition-number cap for inverting a single fiber map.
const FIBER_COND_CAP: f64 = 1e14;

#[derive(Debug, Error)]
pub enum CocycleError {
    #[error("fiber map at ({0}, {1}) is numerically singular (condition {2:.3e})")]
    SingularFiberMap(f64, f64, f64),
    #[error("base matrix must be congruent to the identity modulo 4")]
    CongruenceViolated,
    #[error("epsilon {0} outside (0, 1)")]
    EpsilonOutOfRange(f64),
    #[error("iterate count {0} exceeds the budget {1}")]
    IterateBudget(i64, i64),
    #[error("expression matrix needs {0} entries, got {1}")]
    WrongEntryCount(usize, usize),
    #[error("fiber dimension {0} outside supported range 1..=6")]
    UnsupportedFiberDim(usize),
    #[error(transparent)]
    Torus(#[from] TorusError),
}

/// Closed-form families the laboratory knows how to evaluate.
#[derive(Debug, Clone)]
pub enum CocycleKind {
    /// Constant matrix.
    Constant { matrix: DMatrix<f64> },
    /// Entrywise closed-form matrix (row-major expressions).
    ExprMatrix {
        dim: usize,
        entries: Vec<Expr>,
        sources: Vec<String>,
    },
    /// `scale(x) · R(angle(x))`: conformal w.r.t. the Euclidean structure.
    Conformal {
        scale: Expr,
        angle: Expr,
        sources: Vec<String>,
    },
    /// The rotation–diagonal example projected to the base torus:
    /// `F(x) = R(π/2·((M−Id)₁·x)) · S(x)`.
    Example46 { epsilon: f64 },
    /// The same example on the 4-cover in product form
    /// `C̄(f̄x̄)·Ā(x̄)·C̄(x̄)⁻¹`.
    Example46Cover { epsilon: f64 },
    /// The diagonal model `Ā(x̄) = diag(1+ε·cos(πx̄₁), 1−ε·cos(πx̄₁))` on the
    /// 4-cover.
    Example46Diagonal { epsilon: f64 },
}

impl CocycleKind {
    pub fn name(&self) -> &'static str {
        match self {
            CocycleKind::Constant { .. } => "constant",
            CocycleKind::ExprMatrix { .. } => "expr",
            CocycleKind::Conformal { .. } => "conformal",
            CocycleKind::Example46 { .. } => "example46",
            CocycleKind::Example46Cover { .. } => "example46_cover",
            CocycleKind::Example46Diagonal { .. } => "example46_diagonal",
        }
    }
}

/// A matrix cocycle over a toral automorphism.
#[derive(Debug, Clone)]
pub struct CocycleSpec {
    base: ToralAutomorphism,
    fiber_dim: usize,
    /// Hölder exponent of x ↦ F(x); 1 for all built-in closed forms.
    beta: f64,
    kind: CocycleKind,
    /// Empirical Hölder constant from the construction grid.
    holder_constant: f64,
}

impl CocycleSpec {
    pub fn new(
        base: ToralAutomorphism,
        kind: CocycleKind,
        beta: f64,
    ) -> Result<CocycleSpec, CocycleError> {
        assert!(beta > 0.0 && beta <= 1.0, "beta must lie in (0, 1]");
        let fiber_dim = match &kind {
            CocycleKind::Constant { matrix } => matrix.nrows(),
            CocycleKind::ExprMatrix { dim, entries, .. } => {
                if entries.len() != dim * dim {
                    return Err(CocycleError::WrongEntryCount(dim * dim, entries.len()));
                }
                *dim
            }
            CocycleKind::Conformal { .. }
            | CocycleKind::Example46 { .. }
            | CocycleKind::Example46Cover { .. }
            | CocycleKind::Example46Diagonal { .. } => 2,
        };
        if fiber_dim == 0 || fiber_dim > 6 {
            return Err(CocycleError::UnsupportedFiberDim(fiber_dim));
        }
        match &kind {
            CocycleKind::Example46 { epsilon }
            | CocycleKind::Example46Cover { epsilon }
            | CocycleKind::Example46Diagonal { epsilon } => {
                if !(*epsilon > 0.0 && *epsilon < 1.0) {
                    return Err(CocycleError::EpsilonOutOfRange(*epsilon));
                }
                let m = base.matrix();
                let congruent = (m[0][0] - 1) % 4 == 0
                    && m[0][1] % 4 == 0
                    && m[1][0] % 4 == 0
                    && (m[1][1] - 1) % 4 == 0;
                if !congruent {
                    return Err(CocycleError::CongruenceViolated);
                }
            }
            _ => {}
        }
        let mut spec = CocycleSpec {
            base,
            fiber_dim,
            beta,
            kind,
            holder_constant: 0.0,
        };
        spec.holder_constant = spec.construction_checks()?;
        Ok(spec)
    }

    /// Invertibility on a sample grid plus an empirical Hölder constant from
    /// neighboring sample pairs.
    fn construction_checks(&self) -> Result<f64, CocycleError> {
        let n = 16;
        let lattice = self.base.lattice();
        let mut holder: f64 = 0.0;
        let mut prev_row: Vec<(TorusPoint, DMatrix<f64>)> = Vec::new();
        for i in 0..n {
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                let x = TorusPoint::from_rationals(
                    Rational::new(i as i128 * lattice.period(0) as i128, n as i128),
                    Rational::new(j as i128 * lattice.period(1) as i128, n as i128),
                    lattice,
                );
                let f = self.eval(&x);
                self.invert_fiber(&f, &x)?;
                if j > 0 {
                    let (py, pf): &(TorusPoint, DMatrix<f64>) = &row[j - 1];
                    let dist = crate::torus::torus_dist(&x, py);
                    holder = holder.max((&f - pf).norm() / dist.powf(self.beta));
                }
                if let Some((py, pf)) = prev_row.get(j) {
                    let dist = crate::torus::torus_dist(&x, py);
                    holder = holder.max((&f - pf).norm() / dist.powf(self.beta));
                }
                row.push((x, f));
            }
            prev_row = row;
        }
        Ok(holder)
    }

    pub fn base(&self) -> &ToralAutomorphism {
        &self.base
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kind(&self) -> &CocycleKind {
        &self.kind
    }

    pub fn holder_constant(&self) -> f64 {
        self.holder_constant
    }

    /// The fiber map over `x`.
    pub fn eval(&self, x: &TorusPoint) -> DMatrix<f64> {
        match &self.kind {
            CocycleKind::Constant { matrix } => matrix.clone(),
            CocycleKind::ExprMatrix { dim, entries, .. } => {
                let [x1, x2] = x.coords_f64();
                DMatrix::from_fn(*dim, *dim, |i, j| entries[i * dim + j].eval(x1, x2))
            }
            CocycleKind::Conformal { scale, angle, .. } => {
                let [x1, x2] = x.coords_f64();
                rotation(angle.eval(x1, x2)) * scale.eval(x1, x2)
            }
            CocycleKind::Example46 { epsilon } => {
                // Rotation angle π/2 · ((M−Id)₁ · x) reduced exactly mod 4.
                let m = self.base.matrix();
                let c = x.coords();
                let turns = exact_turns_mod4(
                    (m[0][0] - 1) as i128,
                    m[0][1] as i128,
                    (*c[0].numer(), *c[0].denom()),
                    (*c[1].numer(), *c[1].denom()),
                );
                let theta = turns * std::f64::consts::FRAC_PI_2;
                let [x1, _] = x.coords_f64();
                let (s2, c2) = (2.0 * std::f64::consts::PI * x1).sin_cos();
                let eps = *epsilon;
                let sym = DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        1.0 + 0.5 * eps * (1.0 + c2),
                        0.5 * eps * s2,
                        0.5 * eps * s2,
                        1.0 - 0.5 * eps * (1.0 + c2),
                    ],
                );
                rotation(theta) * sym
            }
            CocycleKind::Example46Cover { epsilon } => {
                let fx = self.base.step(x);
                example46_rotation(&fx)
                    * example46_diagonal(x, *epsilon)
                    * example46_rotation(x).transpose()
            }
            CocycleKind::Example46Diagonal { epsilon } => example46_diagonal(x, *epsilon),
        }
    }

    /// Inverse of the fiber map over `x`.
    pub fn eval_inverse(&self, x: &TorusPoint) -> Result<DMatrix<f64>, CocycleError> {
        let f = self.eval(x);
        self.invert_fiber(&f, x)
    }

    fn invert_fiber(
        &self,
        f: &DMatrix<f64>,
        at: &TorusPoint,
    ) -> Result<DMatrix<f64>, CocycleError> {
        let svd = f.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let [x1, x2] = at.coords_f64();
        if smin.is_nan() || smin <= 0.0 || smax / smin > FIBER_COND_CAP {
            return Err(CocycleError::SingularFiberMap(x1, x2, smax / smin));
        }
        f.clone()
            .try_inverse()
            .ok_or(CocycleError::SingularFiberMap(x1, x2, f64::INFINITY))
    }

    /// Renormalized iterate `Fⁿ_x` together with log-norm data. The inverse
    /// norm comes from a parallel product of pointwise inverses rather than
    /// inverting the accumulated matrix, so `log_conorm` stays accurate even
    /// when the distortion dwarfs double-precision resolution.
    pub fn iterate(&self, x: &TorusPoint, n: i64) -> Result<IterateResult, CocycleError> {
        let mut tracker = if n >= 0 {
            ProductTracker::forward(self, x)
        } else {
            ProductTracker::backward(self, x)
        };
        tracker.advance(n.unsigned_abs())?;
        Ok(tracker.into_result())
    }

    /// Quasiconformal distortion `K_F(x,n) = ‖Fⁿ_x‖·‖(Fⁿ_x)⁻¹‖` (and its log).
    pub fn distortion(&self, x: &TorusPoint, n: i64) -> Result<Distortion, CocycleError> {
        let it = self.iterate(x, n)?;
        Ok(Distortion {
            log_k: it.log_distortion(),
            k: it.log_distortion().exp(),
        })
    }

    /// Max over the grid of `‖F(x)‖·‖F(x)⁻¹‖·ν^β`; strictly below one
    /// certifies fiber bunching on the grid, and the value doubles as the
    /// geometric ratio θ for holonomy tail estimates.
    pub fn fiber_bunching_margin(
        &self,
        grid: &[TorusPoint],
        beta: f64,
    ) -> Result<BunchingMargin, CocycleError> {
        assert!(!grid.is_empty(), "empty grid");
        let nu = self.base.contraction_rate();
        let mut margin: f64 = 0.0;
        for x in grid {
            let f = self.eval(x);
            let svd = f.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            let [x1, x2] = x.coords_f64();
            if smin.is_nan() || smin <= 0.0 {
                return Err(CocycleError::SingularFiberMap(x1, x2, f64::INFINITY));
            }
            margin = margin.max(smax / smin * nu.powf(beta));
        }
        Ok(BunchingMargin {
            margin,
            theta: margin,
        })
    }
}

/// Incremental renormalized products `Fⁿ_x` and `(Fⁿ_x)⁻¹` along an orbit,
/// for single-pass profiles of norms and distortion at many orbit lengths.
pub struct ProductTracker<'a> {
    spec: &'a CocycleSpec,
    point: TorusPoint,
    fwd: Accumulator,
    inv: Accumulator,
    steps: i64,
    direction: i64,
}

impl<'a> ProductTracker<'a> {
    pub fn forward(spec: &'a CocycleSpec, x: &TorusPoint) -> ProductTracker<'a> {
        ProductTracker {
            spec,
            point: x.clone(),
            fwd: Accumulator::identity(spec.fiber_dim),
            inv: Accumulator::identity(spec.fiber_dim),
            steps: 0,
            direction: 1,
        }
    }

    pub fn backward(spec: &'a CocycleSpec, x: &TorusPoint) -> ProductTracker<'a> {
        ProductTracker {
            spec,
            point: x.clone(),
            fwd: Accumulator::identity(spec.fiber_dim),
            inv: Accumulator::identity(spec.fiber_dim),
            steps: 0,
            direction: -1,
        }
    }

    /// Multiplies `k` more fiber maps into the running products.
    pub fn advance(&mut self, k: u64) -> Result<(), CocycleError> {
        for _ in 0..k {
            if self.steps.abs() >= DEFAULT_ITERATE_MAX {
                return Err(CocycleError::IterateBudget(self.steps, DEFAULT_ITERATE_MAX));
            }
            if self.direction > 0 {
                let f = self.spec.eval(&self.point);
                let f_inv = self.spec.invert_fiber(&f, &self.point)?;
                self.fwd.left_mul(&f);
                self.inv.right_mul(&f_inv);
                self.point = self.spec.base.step(&self.point);
            } else {
                // F⁻ᵏ_x = F(f⁻ᵏx)⁻¹ ∘ ... ∘ F(f⁻¹x)⁻¹: new factors enter on
                // the left; the inverse collects plain fiber maps on the right.
                self.point = self.spec.base.step_back(&self.point);
                let f = self.spec.eval(&self.point);
                let f_inv = self.spec.invert_fiber(&f, &self.point)?;
                self.fwd.left_mul(&f_inv);
                self.inv.right_mul(&f);
            }
            self.steps += self.direction;
        }
        Ok(())
    }

    /// Signed number of steps taken so far.
    pub fn steps(&self) -> i64 {
        self.steps
    }

    /// Renormalized representative of the running product `Fⁿ_x` (the true
    /// product is a positive scalar multiple).
    pub fn current_matrix(&self) -> &DMatrix<f64> {
        &self.fwd.matrix
    }

    /// Current orbit point `fⁿx`.
    pub fn point(&self) -> &TorusPoint {
        &self.point
    }

    /// `log ‖Fⁿ_x‖` at the current length (one SVD).
    pub fn log_norm(&self) -> f64 {
        self.fwd.log_scale + spectral_norm_log(&self.fwd.matrix)
    }

    /// `log ‖(Fⁿ_x)⁻¹‖⁻¹` at the current length (one SVD).
    pub fn log_conorm(&self) -> f64 {
        -(self.inv.log_scale + spectral_norm_log(&self.inv.matrix))
    }

    /// `log K_F(x, n)` at the current length.
    pub fn log_distortion(&self) -> f64 {
        self.log_norm() - self.log_conorm()
    }

    pub fn into_result(self) -> IterateResult {
        IterateResult::from_accumulators(self.fwd, self.inv, self.point)
    }
}

/// A renormalizing matrix-product accumulator.
struct Accumulator {
    matrix: DMatrix<f64>,
    log_scale: f64,
}

impl Accumulator {
    fn identity(d: usize) -> Accumulator {
        Accumulator {
            matrix: DMatrix::identity(d, d),
            log_scale: 0.0,
        }
    }

    fn left_mul(&mut self, f: &DMatrix<f64>) {
        self.matrix = f * &self.matrix;
        self.renorm();
    }

    fn right_mul(&mut self, f: &DMatrix<f64>) {
        self.matrix = &self.matrix * f;
        self.renorm();
    }

    fn renorm(&mut self) {
        let norm = self.matrix.norm();
        if !(RENORM_MIN..=RENORM_MAX).contains(&norm) {
            self.matrix /= norm;
            self.log_scale += norm.ln();
        }
    }
}

/// Iterate of a cocycle along an orbit segment.
#[derive(Debug, Clone)]
pub struct IterateResult {
    /// Renormalized representative; the true product is `exp(log_scale)·matrix`.
    pub matrix: DMatrix<f64>,
    pub log_scale: f64,
    /// `log ‖Fⁿ_x‖` (spectral norm).
    pub log_norm: f64,
    /// `log (‖(Fⁿ_x)⁻¹‖⁻¹)`, the log of the smallest singular value.
    pub log_conorm: f64,
    /// The orbit endpoint `fⁿx`.
    pub end_point: TorusPoint,
}

impl IterateResult {
    fn from_accumulators(
        fwd: Accumulator,
        inv: Accumulator,
        end_point: TorusPoint,
    ) -> IterateResult {
        let log_norm = fwd.log_scale + spectral_norm_log(&fwd.matrix);
        let log_conorm = -(inv.log_scale + spectral_norm_log(&inv.matrix));
        IterateResult {
            matrix: fwd.matrix,
            log_scale: fwd.log_scale,
            log_norm,
            log_conorm,
            end_point,
        }
    }

    /// `log K_F = log‖Fⁿ‖ + log‖(Fⁿ)⁻¹‖`.
    pub fn log_distortion(&self) -> f64 {
        self.log_norm - self.log_conorm
    }

    /// The full product without renormalization; only usable when the scale
    /// fits in double precision.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        &self.matrix * self.log_scale.exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Distortion {
    pub k: f64,
    pub log_k: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BunchingMargin {
    /// `max ‖F‖·‖F⁻¹‖·ν^β` over the grid.
    pub margin: f64,
    /// Geometric ratio for holonomy series (equal to the margin; callers
    /// typically inflate a grid maximum before certifying tails).
    pub theta: f64,
}

fn spectral_norm_log(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max().ln()
}

/// `(k₁·x₁ + k₂·x₂) mod 4` for exact rational coordinates, as a float.
fn exact_turns_mod4(k1: i128, k2: i128, (n0, d0): (i128, i128), (n1, d1): (i128, i128)) -> f64 {
    let combine = |den: i128, a0: i128, a1: i128| -> Option<f64> {
        let num = k1.checked_mul(a0)?.checked_add(k2.checked_mul(a1)?)?;
        let modulus = den.checked_mul(4)?;
        let num = if modulus & (modulus - 1) == 0 {
            num & (modulus - 1)
        } else {
            num.rem_euclid(modulus)
        };
        Some(num as f64 / den as f64)
    };
    let fast = if d0 == d1 {
        combine(d0, n0, n1)
    } else {
        let g = num_integer::gcd(d0, d1);
        (d0 / g)
            .checked_mul(d1)
            .and_then(|den| combine(den, n0.checked_mul(d1 / g)?, n1.checked_mul(d0 / g)?))
    };
    match fast {
        Some(v) => v,
        None => {
            let turns = Rational::new(n0, d0) * Rational::from_integer(k1)
                + Rational::new(n1, d1) * Rational::from_integer(k2);
            let den = *turns.denom();
            ratio_to_f64(Rational::new(turns.numer().rem_euclid(4 * den), den))
        }
    }
}

pub fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `Ā(x̄) = diag(1 + ε·cos(πx̄₁), 1 − ε·cos(πx̄₁))`, defined on the 4-cover.
pub fn example46_diagonal(x: &TorusPoint, epsilon: f64) -> DMatrix<f64> {
    let [x1, _] = x.coords_f64();
    let c = (std::f64::consts::PI * x1).cos();
    DMatrix::from_row_slice(2, 2, &[1.0 + epsilon * c, 0.0, 0.0, 1.0 - epsilon * c])
}

/// `C̄(x̄) = R(π·x̄₁/2)`, defined on the 4-cover.
pub fn example46_rotation(x: &TorusPoint) -> DMatrix<f64> {
    let [x1, _] = x.coords_f64();
    rotation(std::f64::consts::FRAC_PI_2 * x1)
}

/// The full example family: the base-torus cocycle, its lifts to the
/// intermediate and full covers, the product-form model on the 4-cover, and
/// the diagonal model it is conjugate to.
#[derive(Debug, Clone)]
pub struct Example46Family {
    pub plane: CocycleSpec,
    pub cover2: CocycleSpec,
    pub cover4: CocycleSpec,
    pub cover4_product: CocycleSpec,
    pub diagonal: CocycleSpec,
    pub epsilon: f64,
}

/// Builds the example family over a base matrix congruent to Id mod 4.
pub fn example46_family(
    matrix: [[i64; 2]; 2],
    epsilon: f64,
) -> Result<Example46Family, CocycleError> {
    let base = ToralAutomorphism::new(matrix, Lattice::UNIT)?;
    let plane = CocycleSpec::new(base.clone(), CocycleKind::Example46 { epsilon }, 1.0)?;
    let (base2, _) = base.cover_lift([2, 1])?;
    let cover2 = CocycleSpec::new(base2, CocycleKind::Example46 { epsilon }, 1.0)?;
    let (base4, _) = base.cover_lift([4, 1])?;
    let cover4 = CocycleSpec::new(base4.clone(), CocycleKind::Example46 { epsilon }, 1.0)?;
    let cover4_product =
        CocycleSpec::new(base4.clone(), CocycleKind::Example46Cover { epsilon }, 1.0)?;
    let diagonal = CocycleSpec::new(base4, CocycleKind::Example46Diagonal { epsilon }, 1.0)?;
    Ok(Example46Family {
        plane,
        cover2,
        cover4,
        cover4_product,
        diagonal,
        epsilon,
    })
}

/// Uniform nx×ny grid of exact rational points on the lattice.
pub fn uniform_grid(lattice: Lattice, nx: usize, ny: usize) -> Vec<TorusPoint> {
    let mut grid = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            grid.push(TorusPoint::from_rationals(
                Rational::new(i as i128 * lattice.period(0) as i128, nx as i128),
                Rational::new(j as i128 * lattice.period(1) as i128, ny as i128),
                lattice,
            ));
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cat_map() -> ToralAutomorphism {
        ToralAutomorphism::new([[2, 1], [1, 1]], Lattice::UNIT).unwrap()
    }

    fn constant(matrix: DMatrix<f64>) -> CocycleSpec {
        CocycleSpec::new(cat_map(), CocycleKind::Constant { matrix }, 1.0).unwrap()
    }

    fn unipotent() -> CocycleSpec {
        constant(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]))
    }

    fn random_point(rng: &mut ChaCha8Rng, lattice: Lattice) -> TorusPoint {
        TorusPoint::from_f64(
            rng.gen_range(0.0..lattice.period(0) as f64),
            rng.gen_range(0.0..lattice.period(1) as f64),
            lattice,
        )
    }

    #[test]
    fn iterate_zero_is_identity() {
        let c = unipotent();
        let x = TorusPoint::from_f64(0.3, 0.7, Lattice::UNIT);
        let it = c.iterate(&x, 0).unwrap();
        assert_eq!(it.matrix, DMatrix::identity(2, 2));
        assert_eq!(it.log_norm, 0.0);
    }

    #[test]
    fn constant_unipotent_power() {
        // Nilpotent part adds up: [[1,1],[0,1]]⁵ = [[1,5],[0,1]].
        let c = unipotent();
        let x = TorusPoint::from_f64(0.1, 0.2, Lattice::UNIT);
        let it = c.iterate(&x, 5).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 0.0, 1.0]);
        assert!((it.full_matrix() - expected).norm() < 1e-12);
    }

    #[test]
    fn cocycle_identity_on_random_segments() {
        let fam = example46_family([[41, 32], [32, 25]], 0.1).unwrap();
        let c = &fam.plane;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = random_point(&mut rng, Lattice::UNIT);
            let n = rng.gen_range(1..=20i64);
            let k = rng.gen_range(1..=20i64);
            let whole = c.iterate(&x, n + k).unwrap();
            let first = c.iterate(&x, k).unwrap();
            let second = c.iterate(&first.end_point, n).unwrap();
            let lhs = whole.full_matrix();
            let rhs = second.full_matrix() * first.full_matrix();
            assert!((&lhs - &rhs).norm() < 1e-9 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn negative_iterate_inverts_positive() {
        let fam = example46_family([[41, 32], [32, 25]], 0.1).unwrap();
        let c = &fam.plane;
        let x = TorusPoint::from_f64(0.37, 0.21, Lattice::UNIT);
        let fwd = c.iterate(&x, 7).unwrap();
        let back = c.iterate(&fwd.end_point, -7).unwrap();
        assert_eq!(back.end_point, x);
        let prod = back.full_matrix() * fwd.full_matrix();
        assert!((prod - DMatrix::<f64>::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn distortion_of_conformal_cocycle_is_one() {
        let c = CocycleSpec::new(
            cat_map(),
            CocycleKind::Conformal {
                scale: Expr::parse("1 + 0.5*cos(2*pi*x2)").unwrap(),
                angle: Expr::parse("2*pi*x1 + 1").unwrap(),
                sources: vec![],
            },
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let x = random_point(&mut rng, Lattice::UNIT);
            let n = rng.gen_range(1..100i64);
            let k = c.distortion(&x, n).unwrap();
            assert!((k.k - 1.0).abs() < 1e-10, "K = {}", k.k);
        }
    }

    #[test]
    fn distortion_of_unipotent_matches_quadratic_oracle() {
        // σ_max² of [[1,1],[0,1]] solves λ² − 3λ + 1 = 0; with det 1 the
        // distortion is σ_max².
        let c = unipotent();
        let x = TorusPoint::from_f64(0.5, 0.5, Lattice::UNIT);
        let k = c.distortion(&x, 1).unwrap();
        let expected = (3.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((k.k - expected).abs() < 1e-12);
    }

    #[test]
    fn example46_fixed_point_distortion_is_eleven_ninths_power() {
        let fam = example46_family([[41, 32], [32, 25]], 0.1).unwrap();
        let origin = TorusPoint::origin(Lattice::UNIT);
        // F(0) = diag(1.1, 0.9) exactly.
        let f0 = fam.plane.eval(&origin);
        assert!((f0[(0, 0)] - 1.1).abs() < 1e-15);
        assert!((f0[(1, 1)] - 0.9).abs() < 1e-15);
        assert!(f0[(0, 1)].abs() < 1e-15 && f0[(1, 0)].abs() < 1e-15);
        for n in 1..=8 {
            let k = fam.plane.distortion(&origin, n).unwrap();
            let expected = (11.0f64 / 9.0).powi(n as i32);
            assert!(
                (k.k - expected).abs() < 1e-12 * expected,
                "n={n}: {} vs {expected}",
                k.k
            );
        }
    }

    #[test]
    fn example46_epsilon_zero_limit_is_conformal() {
        // ε → 0 is outside the constructor domain; check tiny ε distortion
        // instead: K stays within O(ε) of 1.
        let fam = example46_family([[41, 32], [32, 25]], 1e-9).unwrap();
        let x = TorusPoint::from_f64(0.3, 0.8, Lattice::UNIT);
        let k = fam.plane.distortion(&x, 50).unwrap();
        assert!((k.k - 1.0).abs() < 1e-6);
        assert!(matches!(
            example46_family([[41, 32], [32, 25]], 0.0),
            Err(CocycleError::EpsilonOutOfRange(_))
        ));
        assert!(matches!(
            example46_family([[2, 1], [1, 1]], 0.1),
            Err(CocycleError::CongruenceViolated)
        ));
    }

    #[test]
    fn bunching_margins_match_direct_products() {
        let id = constant(DMatrix::identity(2, 2));
        let grid = uniform_grid(Lattice::UNIT, 8, 8);
        let nu = cat_map().contraction_rate();
        let m = id.fiber_bunching_margin(&grid, 1.0).unwrap();
        assert!((m.margin - nu).abs() < 1e-12);
        assert!(m.margin < 1.0);

        let spread = constant(DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 0.1]));
        let m = spread.fiber_bunching_margin(&grid, 1.0).unwrap();
        assert!((m.margin - 100.0 * nu).abs() < 1e-9);
        assert!(m.margin > 1.0);
    }

    #[test]
    fn example46_is_fiber_bunched_up_to_half() {
        let grid = uniform_grid(Lattice::UNIT, 100, 100);
        for eps in [0.1, 0.5] {
            let fam = example46_family([[41, 32], [32, 25]], eps).unwrap();
            let nu = fam.plane.base().contraction_rate();
            let m = fam.plane.fiber_bunching_margin(&grid, 1.0).unwrap();
            // Pointwise distortion of F(x) is at most (1+ε)/(1−ε).
            let bound = (1.0 + eps) / (1.0 - eps) * nu;
            assert!(
                m.margin <= bound + 1e-12,
                "eps={eps}: {} vs {bound}",
                m.margin
            );
            assert!(m.margin < 1.0);
        }
    }

    #[test]
    fn cover_product_form_matches_projected_plane_form() {
        let fam = example46_family([[41, 32], [32, 25]], 0.1).unwrap();
        let cover = fam.cover4_product.base().lattice();
        let proj_lattice = fam.plane.base().lattice();
        let grid = uniform_grid(cover, 100, 100);
        let mut worst: f64 = 0.0;
        for x in &grid {
            let projected = TorusPoint::from_rationals(x.coords()[0], x.coords()[1], proj_lattice);
            let diff = (fam.plane.eval(&projected) - fam.cover4_product.eval(x)).norm();
            worst = worst.max(diff);
        }
        assert!(worst < 1e-12, "worst deviation {worst}");
    }

    #[test]
    fn distortion_is_submultiplicative_and_time_reversible() {
        let fam = example46_family([[41, 32], [32, 25]], 0.3).unwrap();
        let c = &fam.plane;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x = random_point(&mut rng, Lattice::UNIT);
            let n = rng.gen_range(1..15i64);
            let k = rng.gen_range(1..15i64);
            let whole = c.distortion(&x, n + k).unwrap();
            let first = c.iterate(&x, k).unwrap();
            let second = c.distortion(&first.end_point, n).unwrap();
            let k_first = first.log_distortion();
            assert!(whole.log_k <= k_first + second.log_k + 1e-9);

            // K(x, n) = K(fⁿx, −n).
            let fwd = c.iterate(&x, n).unwrap();
            let back = c.distortion(&fwd.end_point, -n).unwrap();
            assert!((fwd.log_distortion() - back.log_k).abs() < 1e-9);
        }
    }

    #[test]
    fn long_products_stay_finite_via_renormalization() {
        let c = constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]));
        let x = TorusPoint::origin(Lattice::UNIT);
        let it = c.iterate(&x, 2_000).unwrap();
        assert!((it.log_norm - 2000.0 * 2.0f64.ln()).abs() < 1e-6);
        assert!((it.log_conorm + 2000.0 * 2.0f64.ln()).abs() < 1e-6);
        assert!(it.matrix.norm().is_finite());
    }

    #[test]
    fn singular_expression_matrix_is_rejected() {
        // diag(cos(2πx₁), 1) vanishes at x₁ = 1/4, which the construction
        // grid hits.
        let kind = CocycleKind::ExprMatrix {
            dim: 2,
            entries: vec![
                Expr::parse("cos(2*pi*x1)").unwrap(),
                Expr::parse("0").unwrap(),
                Expr::parse("0").unwrap(),
                Expr::parse("1").unwrap(),
            ],
            sources: vec![],
        };
        assert!(matches!(
            CocycleSpec::new(cat_map(), kind, 1.0),
            Err(CocycleError::SingularFiberMap(..))
        ));
    }

    #[test]
    fn holder_constant_is_finite_and_positive() {
        let fam = example46_family([[41, 32], [32, 25]], 0.1).unwrap();
        assert!(fam.plane.holder_constant().is_finite());
        assert!(fam.plane.holder_constant() > 0.0);
        let c = constant(DMatrix::identity(2, 2));
        assert_eq!(c.holder_constant(), 0.0);
    }
}
