//! Base dynamics: hyperbolic automorphisms of the 2-torus and its finite covers.
//!
//! Points carry exact rational coordinates (`Ratio<i128>`), so orbit stepping,
//! matrix-power application, periodic-point enumeration, and cover projections
//! all agree exactly; floating point enters only through the eigen-splitting
//! and leaf parametrizations. The torus is `R²/L` for a rectangular lattice
//! `L = p₁Z × p₂Z`, which covers the standard torus as well as the `2Z×Z` and
//! `4Z×Z` covers used by the rotation–diagonal example family.

use num_bigint::BigInt;
use num_integer::Integer as _;
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Rational = num_rational::Ratio<i128>;

/// Local stable/unstable leaves are trusted inside this radius (a quarter of
/// the shortest lattice period for the standard torus).
pub const DEFAULT_LEAF_RADIUS: f64 = 0.25;

/// Points closer than this are resolved with the local product structure.
pub const DEFAULT_PRODUCT_RADIUS: f64 = 0.25;

/// Cap on `|det(Mⁿ - Id)|` before periodic-point enumeration refuses to run.
pub const DEFAULT_PERIODIC_CAP: u128 = 200_000;

/// Cap on `|n|` for exact matrix-power application.
pub const DEFAULT_ITERATE_CAP: i64 = 1 << 40;

/// Denominators are clamped at 2¹⁰⁰ when decoding floats; the positional
/// error of the clamp is below 2⁻¹⁰⁰ and keeps every intermediate of the
/// lattice arithmetic inside `i128`.
const MAX_DEN_LOG2: i32 = 100;

#[derive(Debug, Error)]
pub enum TorusError {
    #[error("matrix determinant must be ±1, got {0}")]
    NotUnimodular(i128),
    #[error("matrix is not hyperbolic: |trace| must exceed 2 in SL(2,Z) (eigenvalue modulus {0:.6} on or near the unit circle)")]
    NotHyperbolic(f64),
    #[error("lattice {0} is not invariant under the matrix and its inverse")]
    LatticeNotInvariant(Lattice),
    #[error("iterate count {0} exceeds the exact-arithmetic budget {1}")]
    IterateOverflow(i64, i64),
    #[error("leaf parameter {t} exceeds the local leaf radius {radius}")]
    LeafRadiusExceeded { t: f64, radius: f64 },
    #[error("points at distance {dist} lie outside the product chart (radius {radius})")]
    OutsideProductChart { dist: f64, radius: f64 },
    #[error("{count} periodic points of period {period} exceed the cap {cap}")]
    TooManyPeriodicPoints { period: u32, count: u128, cap: u128 },
    #[error("point lives on lattice {point} but the automorphism acts on {auto}")]
    LatticeMismatch { point: Lattice, auto: Lattice },
    #[error("periods {0:?} do not define a finite-index sublattice of the base lattice")]
    NotACover([i64; 2]),
    #[error("exact rational arithmetic overflowed an i128")]
    RationalOverflow,
}

/// Rectangular lattice `p₁Z × p₂Z` in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lattice {
    periods: [i64; 2],
}

impl Lattice {
    /// The standard integer lattice Z².
    pub const UNIT: Lattice = Lattice { periods: [1, 1] };

    pub fn new(p1: i64, p2: i64) -> Option<Lattice> {
        (p1 > 0 && p2 > 0).then_some(Lattice { periods: [p1, p2] })
    }

    pub fn periods(&self) -> [i64; 2] {
        self.periods
    }

    pub fn period(&self, i: usize) -> i64 {
        self.periods[i]
    }

    pub fn min_period(&self) -> f64 {
        self.periods.iter().copied().min().unwrap() as f64
    }

    /// Checks that the integer matrix maps this lattice into itself:
    /// `p_i | p_j · m[i][j]` for all i, j.
    fn invariant_under(&self, m: &[[i128; 2]; 2]) -> bool {
        (0..2).all(|i| {
            (0..2).all(|j| (self.periods[j] as i128 * m[i][j]) % self.periods[i] as i128 == 0)
        })
    }
}

impl std::fmt::Display for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}Z x {}Z", self.periods[0], self.periods[1])
    }
}

/// Decode a float into an exact rational, reducing huge denominators to 2⁹⁰.
fn f64_to_rational(x: f64) -> Rational {
    if x == 0.0 || !x.is_finite() {
        return Rational::zero();
    }
    let bits = x.to_bits();
    let sign: i128 = if bits >> 63 == 1 { -1 } else { 1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    let (mantissa, exp) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1 << 52), exp_bits - 1075)
    };
    if exp >= 0 {
        // Inputs are already reduced mod the lattice, so the shift is small.
        let shift = exp.min(60) as u32;
        Rational::from_integer(sign * (mantissa << shift))
    } else if exp >= -MAX_DEN_LOG2 {
        Rational::new(sign * mantissa, 1i128 << (-exp) as u32)
    } else {
        let shift = (-exp - MAX_DEN_LOG2) as u32;
        let num = if shift >= 127 {
            0
        } else {
            round_shift(mantissa, shift)
        };
        Rational::new(sign * num, 1i128 << MAX_DEN_LOG2 as u32)
    }
}

fn round_shift(m: i128, shift: u32) -> i128 {
    let half = 1i128 << (shift - 1);
    (m + half) >> shift
}

/// Canonical `num/den` with `num ≥ 0`; power-of-two denominators reduce by a
/// trailing-zeros shift instead of a general gcd.
fn reduce_ratio(num: i128, den: i128) -> Rational {
    debug_assert!(num >= 0 && den > 0);
    if den & (den - 1) == 0 {
        let shift = num.trailing_zeros().min(den.trailing_zeros());
        Rational::new_raw(num >> shift, den >> shift)
    } else {
        Rational::new(num, den)
    }
}

fn reduce_coord(x: Rational, period: i64) -> Rational {
    let den = *x.denom();
    let modulus = period as i128 * den;
    let num = x.numer().rem_euclid(modulus);
    Rational::new(num, den)
}

/// A point of the torus `R²/L`, stored as the canonical representative with
/// exact rational coordinates in `[0, p₁) × [0, p₂)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TorusPoint {
    coords: [Rational; 2],
    lattice: Lattice,
}

impl TorusPoint {
    pub fn from_f64(x: f64, y: f64, lattice: Lattice) -> TorusPoint {
        let p1 = lattice.period(0) as f64;
        let p2 = lattice.period(1) as f64;
        TorusPoint::from_rationals(
            f64_to_rational(x.rem_euclid(p1)),
            f64_to_rational(y.rem_euclid(p2)),
            lattice,
        )
    }

    pub fn from_rationals(x: Rational, y: Rational, lattice: Lattice) -> TorusPoint {
        TorusPoint {
            coords: [
                reduce_coord(x, lattice.period(0)),
                reduce_coord(y, lattice.period(1)),
            ],
            lattice,
        }
    }

    pub fn origin(lattice: Lattice) -> TorusPoint {
        TorusPoint::from_rationals(Rational::zero(), Rational::zero(), lattice)
    }

    pub fn coords(&self) -> &[Rational; 2] {
        &self.coords
    }

    pub fn coords_f64(&self) -> [f64; 2] {
        [ratio_to_f64(self.coords[0]), ratio_to_f64(self.coords[1])]
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// The point `self + (dx, dy)` reduced to the fundamental domain. The
    /// offset is decoded exactly, so translating back by `(-dx, -dy)` returns
    /// the original point.
    pub fn translate_f64(&self, dx: f64, dy: f64) -> TorusPoint {
        TorusPoint::from_rationals(
            self.coords[0] + f64_to_rational(dx),
            self.coords[1] + f64_to_rational(dy),
            self.lattice,
        )
    }
}

pub fn ratio_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Quotient metric: Euclidean distance minimized over the 3² nearest lattice
/// translates of the difference vector.
pub fn torus_dist(a: &TorusPoint, b: &TorusPoint) -> f64 {
    debug_assert_eq!(a.lattice, b.lattice);
    let pa = a.coords_f64();
    let pb = b.coords_f64();
    let p1 = a.lattice.period(0) as f64;
    let p2 = a.lattice.period(1) as f64;
    let dx0 = pb[0] - pa[0];
    let dy0 = pb[1] - pa[1];
    let mut best = f64::INFINITY;
    for kx in -1..=1 {
        for ky in -1..=1 {
            let dx = dx0 + kx as f64 * p1;
            let dy = dy0 + ky as f64 * p2;
            best = best.min((dx * dx + dy * dy).sqrt());
        }
    }
    best
}

/// Stable or unstable leaf tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Stable,
    Unstable,
}

/// One leg of an su-path: a segment inside a single stable or unstable leaf.
#[derive(Debug, Clone)]
pub struct SuLeg {
    pub leaf: LeafKind,
    pub start: TorusPoint,
    pub end: TorusPoint,
    /// Signed leaf coordinate of the segment; |length| is the leaf distance.
    pub length: f64,
}

/// A hyperbolic integer matrix acting on a torus, with its eigen-splitting.
#[derive(Debug, Clone)]
pub struct ToralAutomorphism {
    matrix: [[i64; 2]; 2],
    inverse: [[i64; 2]; 2],
    lattice: Lattice,
    det: i64,
    /// Eigenvalue of modulus > 1 (signed).
    lambda_u: f64,
    /// Eigenvalue of modulus < 1 (signed).
    lambda_s: f64,
    /// Unit eigenvector for `lambda_u`.
    v_u: [f64; 2],
    /// Unit eigenvector for `lambda_s`.
    v_s: [f64; 2],
}

impl ToralAutomorphism {
    /// Validates and eigen-splits an integer matrix on the given lattice.
    pub fn new(matrix: [[i64; 2]; 2], lattice: Lattice) -> Result<ToralAutomorphism, TorusError> {
        let m = [
            [matrix[0][0] as i128, matrix[0][1] as i128],
            [matrix[1][0] as i128, matrix[1][1] as i128],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() != 1 {
            return Err(TorusError::NotUnimodular(det));
        }
        let det = det as i64;
        // Integer inverse: adj(M)/det with det = ±1.
        let inverse = [
            [det * matrix[1][1], -det * matrix[0][1]],
            [-det * matrix[1][0], det * matrix[0][0]],
        ];
        let trace = matrix[0][0] as f64 + matrix[1][1] as f64;
        let disc = trace * trace - 4.0 * det as f64;
        if disc <= 0.0 {
            return Err(TorusError::NotHyperbolic(1.0));
        }
        // Stable quadratic formula: the large root first, the small one by det.
        let big = 0.5 * (trace + trace.signum() * disc.sqrt());
        let small = det as f64 / big;
        let (lambda_u, lambda_s) = if big.abs() >= small.abs() {
            (big, small)
        } else {
            (small, big)
        };
        if lambda_u.abs() <= 1.0 + 1e-9 || lambda_s.abs() >= 1.0 - 1e-9 {
            return Err(TorusError::NotHyperbolic(
                lambda_u.abs().min(1.0 / lambda_s.abs()),
            ));
        }
        if !lattice.invariant_under(&m) {
            return Err(TorusError::LatticeNotInvariant(lattice));
        }
        let minv = [
            [inverse[0][0] as i128, inverse[0][1] as i128],
            [inverse[1][0] as i128, inverse[1][1] as i128],
        ];
        if !lattice.invariant_under(&minv) {
            return Err(TorusError::LatticeNotInvariant(lattice));
        }
        let v_u = eigenvector(&matrix, lambda_u);
        let v_s = eigenvector(&matrix, lambda_s);
        Ok(ToralAutomorphism {
            matrix,
            inverse,
            lattice,
            det,
            lambda_u,
            lambda_s,
            v_u,
            v_s,
        })
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn inverse_matrix(&self) -> [[i64; 2]; 2] {
        self.inverse
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    pub fn expanding_eigenvalue(&self) -> f64 {
        self.lambda_u
    }

    pub fn contracting_eigenvalue(&self) -> f64 {
        self.lambda_s
    }

    /// Contraction rate ν = |λ_s| < 1; for unimodular matrices this also
    /// equals the inverse expansion rate 1/|λ_u|.
    pub fn contraction_rate(&self) -> f64 {
        self.lambda_s.abs()
    }

    pub fn unstable_direction(&self) -> [f64; 2] {
        self.v_u
    }

    pub fn stable_direction(&self) -> [f64; 2] {
        self.v_s
    }

    /// Condition number of the eigenbasis matrix `[v_s v_u]`, controlling
    /// su-path leg lengths.
    pub fn eigenbasis_condition(&self) -> f64 {
        let det = self.v_s[0] * self.v_u[1] - self.v_s[1] * self.v_u[0];
        // Columns are unit vectors: σ_max ≤ √2, σ_min = |det|/σ_max.
        2.0 / det.abs()
    }

    fn check_lattice(&self, x: &TorusPoint) -> Result<(), TorusError> {
        if x.lattice != self.lattice {
            return Err(TorusError::LatticeMismatch {
                point: x.lattice,
                auto: self.lattice,
            });
        }
        Ok(())
    }

    /// One exact forward step `x ↦ Mx mod L`.
    pub fn step(&self, x: &TorusPoint) -> TorusPoint {
        self.step_matrix(&self.matrix, x)
    }

    /// One exact backward step `x ↦ M⁻¹x mod L`.
    pub fn step_back(&self, x: &TorusPoint) -> TorusPoint {
        self.step_matrix(&self.inverse, x)
    }

    fn step_matrix(&self, m: &[[i64; 2]; 2], x: &TorusPoint) -> TorusPoint {
        if let Some(point) = self.step_fast(m, x) {
            return point;
        }
        // Rare general path: mismatched or huge denominators.
        let c = &x.coords;
        let x0 = c[0] * Rational::from_integer(m[0][0] as i128)
            + c[1] * Rational::from_integer(m[0][1] as i128);
        let x1 = c[0] * Rational::from_integer(m[1][0] as i128)
            + c[1] * Rational::from_integer(m[1][1] as i128);
        TorusPoint::from_rationals(x0, x1, self.lattice)
    }

    /// Checked single-step over a common denominator; orbit stepping lives
    /// here, so it avoids per-operation gcd reductions entirely.
    fn step_fast(&self, m: &[[i64; 2]; 2], x: &TorusPoint) -> Option<TorusPoint> {
        let n0 = *x.coords[0].numer();
        let d0 = *x.coords[0].denom();
        let n1 = *x.coords[1].numer();
        let d1 = *x.coords[1].denom();
        let (den, f0, f1) = if d0 == d1 {
            (d0, 1i128, 1i128)
        } else {
            let g = num_integer::gcd(d0, d1);
            ((d0 / g).checked_mul(d1)?, d1 / g, d0 / g)
        };
        let a0 = n0.checked_mul(f0)?;
        let a1 = n1.checked_mul(f1)?;
        let mut out = [Rational::zero(); 2];
        for i in 0..2 {
            let num = (m[i][0] as i128)
                .checked_mul(a0)?
                .checked_add((m[i][1] as i128).checked_mul(a1)?)?;
            let modulus = (self.lattice.period(i) as i128).checked_mul(den)?;
            let num = if modulus & (modulus - 1) == 0 {
                num & (modulus - 1)
            } else {
                num.rem_euclid(modulus)
            };
            out[i] = reduce_ratio(num, den);
        }
        Some(TorusPoint {
            coords: out,
            lattice: self.lattice,
        })
    }

    /// Exact `Mⁿx mod L` via modular integer matrix powers; agrees with
    /// repeated `step`/`step_back` for every n within the budget.
    pub fn apply(&self, x: &TorusPoint, n: i64) -> Result<TorusPoint, TorusError> {
        self.check_lattice(x)?;
        if n == 0 {
            return Ok(x.clone());
        }
        if n.abs() > DEFAULT_ITERATE_CAP {
            return Err(TorusError::IterateOverflow(n, DEFAULT_ITERATE_CAP));
        }
        let m = if n > 0 { self.matrix } else { self.inverse };
        // Common denominator D; coordinates become integers a_i / D.
        let d1 = *x.coords[0].denom();
        let d2 = *x.coords[1].denom();
        let g = num_integer::gcd(d1, d2);
        let den: i128 = d1.checked_mul(d2 / g).ok_or(TorusError::RationalOverflow)?;
        let a = [
            *x.coords[0].numer() * (den / d1),
            *x.coords[1].numer() * (den / d2),
        ];
        // Modulus large enough to recover each coordinate mod p_i.
        let p_lcm = num_integer::lcm(self.lattice.period(0), self.lattice.period(1)) as i128;
        let modulus = BigInt::from(den) * BigInt::from(p_lcm);
        let pow = matrix_pow_mod(&m, n.unsigned_abs(), &modulus);
        let mut out = [Rational::zero(); 2];
        for i in 0..2 {
            let num = (&pow[i][0] * BigInt::from(a[0]) + &pow[i][1] * BigInt::from(a[1]))
                % (&modulus * BigInt::from(self.lattice.period(i)));
            let num = if num.is_negative() {
                num + &modulus * BigInt::from(self.lattice.period(i))
            } else {
                num
            };
            let num = num.to_i128().ok_or(TorusError::RationalOverflow)?;
            out[i] = Rational::new(num, den);
        }
        Ok(TorusPoint::from_rationals(out[0], out[1], self.lattice))
    }

    /// Point at exact leaf coordinate `t` on the local stable leaf of `x`.
    /// Forward iterates of the pair contract exactly by λ_s per step.
    pub fn stable_point(&self, x: &TorusPoint, t: f64) -> Result<TorusPoint, TorusError> {
        self.leaf_point(x, t, self.v_s)
    }

    /// Point at leaf coordinate `t` on the local unstable leaf of `x`.
    pub fn unstable_point(&self, x: &TorusPoint, t: f64) -> Result<TorusPoint, TorusError> {
        self.leaf_point(x, t, self.v_u)
    }

    fn leaf_point(&self, x: &TorusPoint, t: f64, dir: [f64; 2]) -> Result<TorusPoint, TorusError> {
        self.check_lattice(x)?;
        let radius = DEFAULT_LEAF_RADIUS * self.lattice.min_period();
        if t.abs() > radius {
            return Err(TorusError::LeafRadiusExceeded { t, radius });
        }
        Ok(x.translate_f64(t * dir[0], t * dir[1]))
    }

    /// Decompose `y - x` in the eigenbasis over the nearest lattice translate:
    /// the stable-then-unstable two-leg path from `x` to `y`.
    pub fn su_path(&self, x: &TorusPoint, y: &TorusPoint) -> Result<Vec<SuLeg>, TorusError> {
        self.check_lattice(x)?;
        self.check_lattice(y)?;
        let dist = torus_dist(x, y);
        let radius = DEFAULT_PRODUCT_RADIUS * self.lattice.min_period();
        if dist > radius {
            return Err(TorusError::OutsideProductChart { dist, radius });
        }
        let (s, u) = self.su_coordinates(x, y);
        let mid = x.translate_f64(s * self.v_s[0], s * self.v_s[1]);
        Ok(vec![
            SuLeg {
                leaf: LeafKind::Stable,
                start: x.clone(),
                end: mid.clone(),
                length: s,
            },
            SuLeg {
                leaf: LeafKind::Unstable,
                start: mid,
                end: y.clone(),
                length: u,
            },
        ])
    }

    /// Minimal-norm solution of `x + s·v_s + u·v_u ≡ y (mod L)`.
    pub fn su_coordinates(&self, x: &TorusPoint, y: &TorusPoint) -> (f64, f64) {
        let pa = x.coords_f64();
        let pb = y.coords_f64();
        let p1 = self.lattice.period(0) as f64;
        let p2 = self.lattice.period(1) as f64;
        let det = self.v_s[0] * self.v_u[1] - self.v_s[1] * self.v_u[0];
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for kx in -1..=1 {
            for ky in -1..=1 {
                let dx = pb[0] - pa[0] + kx as f64 * p1;
                let dy = pb[1] - pa[1] + ky as f64 * p2;
                let s = (dx * self.v_u[1] - dy * self.v_u[0]) / det;
                let u = (dy * self.v_s[0] - dx * self.v_s[1]) / det;
                let norm = s * s + u * u;
                if norm < best.0 {
                    best = (norm, s, u);
                }
            }
        }
        (best.1, best.2)
    }

    /// All points with `fⁿx = x`, as exact rationals; the count equals
    /// `|det(Mⁿ - Id)|`.
    pub fn periodic_points(&self, period: u32) -> Result<Vec<TorusPoint>, TorusError> {
        self.periodic_points_capped(period, DEFAULT_PERIODIC_CAP)
    }

    pub fn periodic_points_capped(
        &self,
        period: u32,
        cap: u128,
    ) -> Result<Vec<TorusPoint>, TorusError> {
        assert!(period >= 1, "period must be at least 1");
        let pow =
            matrix_pow_exact(&self.matrix, period).ok_or(TorusError::TooManyPeriodicPoints {
                period,
                count: u128::MAX,
                cap,
            })?;
        // Conjugate by diag(periods) so the equation is over Z² again.
        let p = [
            self.lattice.period(0) as i128,
            self.lattice.period(1) as i128,
        ];
        let mut a = [[0i128; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let shifted = pow[i][j] - i128::from(i == j);
                a[i][j] = shifted * p[j] / p[i];
            }
        }
        let det = (a[0][0] * a[1][1] - a[0][1] * a[1][0]).unsigned_abs();
        if det == 0 {
            // Non-hyperbolic powers cannot occur after the constructor checks.
            return Err(TorusError::NotHyperbolic(1.0));
        }
        if det > cap {
            return Err(TorusError::TooManyPeriodicPoints {
                period,
                count: det,
                cap,
            });
        }
        let (s, col_ops) = smith_normal_form_2x2(a);
        let mut points = Vec::with_capacity(det as usize);
        for i in 0..s[0] {
            for j in 0..s[1] {
                let y = [Rational::new(i, s[0]), Rational::new(j, s[1])];
                let x1 = Rational::from_integer(col_ops[0][0]) * y[0]
                    + Rational::from_integer(col_ops[0][1]) * y[1];
                let x2 = Rational::from_integer(col_ops[1][0]) * y[0]
                    + Rational::from_integer(col_ops[1][1]) * y[1];
                points.push(TorusPoint::from_rationals(
                    x1 * Rational::from_integer(p[0]),
                    x2 * Rational::from_integer(p[1]),
                    self.lattice,
                ));
            }
        }
        debug_assert_eq!(points.len() as u128, det);
        Ok(points)
    }

    /// The same matrix acting on a finite cover `R²/L'` with `L' ⊆ L`,
    /// together with the projection `p` satisfying `p ∘ f̄ = f ∘ p`.
    pub fn cover_lift(
        &self,
        cover_periods: [i64; 2],
    ) -> Result<(ToralAutomorphism, CoverProjection), TorusError> {
        for i in 0..2 {
            if cover_periods[i] <= 0 || cover_periods[i] % self.lattice.period(i) != 0 {
                return Err(TorusError::NotACover(cover_periods));
            }
        }
        let cover = Lattice::new(cover_periods[0], cover_periods[1])
            .ok_or(TorusError::NotACover(cover_periods))?;
        let lifted = ToralAutomorphism::new(self.matrix, cover)?;
        Ok((lifted, CoverProjection { base: self.lattice }))
    }
}

/// Projection from a finite cover torus back to the base torus.
#[derive(Debug, Clone, Copy)]
pub struct CoverProjection {
    base: Lattice,
}

impl CoverProjection {
    pub fn project(&self, x: &TorusPoint) -> TorusPoint {
        TorusPoint::from_rationals(x.coords[0], x.coords[1], self.base)
    }

    pub fn base_lattice(&self) -> Lattice {
        self.base
    }
}

fn eigenvector(m: &[[i64; 2]; 2], lambda: f64) -> [f64; 2] {
    let a = m[0][0] as f64;
    let b = m[0][1] as f64;
    let c = m[1][0] as f64;
    let d = m[1][1] as f64;
    // (M - λ)v = 0 has rank 1; pick the better-conditioned row.
    let cand1 = [b, lambda - a];
    let cand2 = [lambda - d, c];
    let n1 = cand1[0].abs() + cand1[1].abs();
    let n2 = cand2[0].abs() + cand2[1].abs();
    let v = if n1 >= n2 { cand1 } else { cand2 };
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / norm, v[1] / norm]
}

fn matrix_pow_exact(m: &[[i64; 2]; 2], n: u32) -> Option<[[i128; 2]; 2]> {
    let mut result = [[1i128, 0], [0, 1]];
    let base = [
        [m[0][0] as i128, m[0][1] as i128],
        [m[1][0] as i128, m[1][1] as i128],
    ];
    for _ in 0..n {
        result = mat_mul_checked(&result, &base)?;
    }
    Some(result)
}

fn mat_mul_checked(a: &[[i128; 2]; 2], b: &[[i128; 2]; 2]) -> Option<[[i128; 2]; 2]> {
    let mut out = [[0i128; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0]
                .checked_mul(b[0][j])?
                .checked_add(a[i][1].checked_mul(b[1][j])?)?;
        }
    }
    Some(out)
}

fn matrix_pow_mod(m: &[[i64; 2]; 2], mut n: u64, modulus: &BigInt) -> [[BigInt; 2]; 2] {
    let reduce = |v: BigInt| -> BigInt { v.mod_floor(modulus) };
    let mut result = [
        [BigInt::from(1), BigInt::from(0)],
        [BigInt::from(0), BigInt::from(1)],
    ];
    let mut base = [
        [reduce(BigInt::from(m[0][0])), reduce(BigInt::from(m[0][1]))],
        [reduce(BigInt::from(m[1][0])), reduce(BigInt::from(m[1][1]))],
    ];
    while n > 0 {
        if n & 1 == 1 {
            result = big_mat_mul_mod(&result, &base, modulus);
        }
        base = big_mat_mul_mod(&base, &base, modulus);
        n >>= 1;
    }
    result
}

fn big_mat_mul_mod(
    a: &[[BigInt; 2]; 2],
    b: &[[BigInt; 2]; 2],
    modulus: &BigInt,
) -> [[BigInt; 2]; 2] {
    let entry = |i: usize, j: usize| (&a[i][0] * &b[0][j] + &a[i][1] * &b[1][j]).mod_floor(modulus);
    [[entry(0, 0), entry(0, 1)], [entry(1, 0), entry(1, 1)]]
}

/// Smith normal form of a nonsingular 2×2 integer matrix: returns positive
/// diagonal entries `(s₁, s₂)` with `s₁ | s₂` and the accumulated column-op
/// matrix `C` such that the solutions of `Ax ∈ Z²` in `[0,1)²` are exactly
/// `x = C·(i/s₁, j/s₂) mod Z²`. Row ops need not be tracked since they act
/// on the target copy of `Z²`.
fn smith_normal_form_2x2(a: [[i128; 2]; 2]) -> ([i128; 2], [[i128; 2]; 2]) {
    let mut a = a;
    let mut c = [[1i128, 0], [0, 1]];
    diagonalize(&mut a, &mut c);
    if a[0][0].abs() != 1 && a[1][1] % a[0][0] != 0 {
        // Enforce s₁ | s₂: fold column 1 into column 0 and rediagonalize.
        for row in 0..2 {
            a[row][0] += a[row][1];
            c[row][0] += c[row][1];
        }
        diagonalize(&mut a, &mut c);
    }
    debug_assert_eq!(a[0][1], 0);
    debug_assert_eq!(a[1][0], 0);
    debug_assert_eq!(a[1][1] % a[0][0], 0);
    ([a[0][0].abs(), a[1][1].abs()], c)
}

fn diagonalize(a: &mut [[i128; 2]; 2], c: &mut [[i128; 2]; 2]) {
    while a[0][1] != 0 || a[1][0] != 0 {
        // Column Euclid to clear a[0][1], tracked in C.
        while a[0][1] != 0 {
            if a[0][0] == 0 {
                for row in 0..2 {
                    a[row].swap(0, 1);
                    c[row].swap(0, 1);
                }
                continue;
            }
            let q = a[0][1] / a[0][0];
            for row in 0..2 {
                a[row][1] -= q * a[row][0];
                c[row][1] -= q * c[row][0];
            }
            if a[0][1] != 0 {
                for row in 0..2 {
                    a[row].swap(0, 1);
                    c[row].swap(0, 1);
                }
            }
        }
        // Row Euclid to clear a[1][0]; may reintroduce a[0][1].
        while a[1][0] != 0 {
            if a[0][0] == 0 {
                a.swap(0, 1);
                continue;
            }
            let q = a[1][0] / a[0][0];
            let row0 = a[0];
            for (cell, top) in a[1].iter_mut().zip(row0) {
                *cell -= q * top;
            }
            if a[1][0] != 0 {
                a.swap(0, 1);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat_map() -> ToralAutomorphism {
        ToralAutomorphism::new([[2, 1], [1, 1]], Lattice::UNIT).unwrap()
    }

    fn example_matrix() -> ToralAutomorphism {
        ToralAutomorphism::new([[41, 32], [32, 25]], Lattice::UNIT).unwrap()
    }

    #[test]
    fn eigenvalues_match_quadratic_oracle() {
        // Oracle: roots of λ² - 3λ + 1 = 0.
        let auto = cat_map();
        let expected_u = (3.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((auto.expanding_eigenvalue() - expected_u).abs() < 1e-12);
        assert!((auto.contraction_rate() - (3.0 - 5.0_f64.sqrt()) / 2.0).abs() < 1e-12);

        // Oracle: roots of λ² - 66λ + 1 = 0.
        let auto = example_matrix();
        let expected_u = 33.0 + 1088.0_f64.sqrt();
        assert!((auto.expanding_eigenvalue() - expected_u).abs() < 1e-10);
        assert!((auto.contraction_rate() - 0.015154995058715).abs() < 1e-12);
    }

    #[test]
    fn eigenvectors_satisfy_eigen_equation() {
        for auto in [cat_map(), example_matrix()] {
            let m = auto.matrix();
            for (v, lambda) in [
                (auto.stable_direction(), auto.contracting_eigenvalue()),
                (auto.unstable_direction(), auto.expanding_eigenvalue()),
            ] {
                let mv = [
                    m[0][0] as f64 * v[0] + m[0][1] as f64 * v[1],
                    m[1][0] as f64 * v[0] + m[1][1] as f64 * v[1],
                ];
                let err =
                    ((mv[0] - lambda * v[0]).powi(2) + (mv[1] - lambda * v[1]).powi(2)).sqrt();
                assert!(err < 1e-12 * lambda.abs().max(1.0), "eigen residual {err}");
            }
        }
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            ToralAutomorphism::new([[2, 0], [0, 1]], Lattice::UNIT),
            Err(TorusError::NotUnimodular(_))
        ));
        assert!(matches!(
            ToralAutomorphism::new([[0, 1], [-1, 0]], Lattice::UNIT),
            Err(TorusError::NotHyperbolic(_))
        ));
        // M(0,1)ᵀ = (1,1)ᵀ has first coordinate 1 ∉ 4Z; the inverse fails too.
        assert!(matches!(
            ToralAutomorphism::new([[2, 1], [1, 1]], Lattice::new(4, 1).unwrap()),
            Err(TorusError::LatticeNotInvariant(_))
        ));
    }

    #[test]
    fn apply_examples() {
        let auto = cat_map();
        let origin = TorusPoint::origin(Lattice::UNIT);
        assert_eq!(auto.apply(&origin, 17).unwrap(), origin);

        // (0.5, 0.5) ↦ (1.5, 1.0) ≡ (0.5, 0.0): hand-checked.
        let x = TorusPoint::from_f64(0.5, 0.5, Lattice::UNIT);
        let fx = auto.apply(&x, 1).unwrap();
        assert_eq!(fx.coords_f64(), [0.5, 0.0]);

        // Inverse round trip is exact in rational arithmetic.
        let x = TorusPoint::from_f64(0.123456789, 0.9876543, Lattice::UNIT);
        let back = auto.apply(&auto.apply(&x, -1).unwrap(), 1).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn apply_matches_stepping() {
        let auto = example_matrix();
        let x = TorusPoint::from_f64(0.3182711, 0.57721566490, Lattice::UNIT);
        let mut y = x.clone();
        for _ in 0..50 {
            y = auto.step(&y);
        }
        assert_eq!(auto.apply(&x, 50).unwrap(), y);
        let mut z = x.clone();
        for _ in 0..50 {
            z = auto.step_back(&z);
        }
        assert_eq!(auto.apply(&x, -50).unwrap(), z);
    }

    #[test]
    fn apply_agrees_with_stepping_on_covers() {
        let auto = example_matrix();
        let (lifted, _) = auto.cover_lift([4, 1]).unwrap();
        let x = TorusPoint::from_f64(2.7173211114, 0.1234567891, lifted.lattice());
        let mut y = x.clone();
        for _ in 0..40 {
            y = lifted.step(&y);
        }
        assert_eq!(lifted.apply(&x, 40).unwrap(), y);
        let back = lifted.apply(&y, -40).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn stable_point_contracts_at_rate_nu() {
        let auto = cat_map();
        let x = TorusPoint::origin(Lattice::UNIT);
        let y = auto.stable_point(&x, 0.1).unwrap();
        let fy = auto.step(&y);
        let fx = auto.step(&x);
        let ratio = torus_dist(&fy, &fx) / torus_dist(&y, &x);
        assert!((ratio - auto.contraction_rate()).abs() < 1e-10 * ratio);
    }

    #[test]
    fn stable_point_edge_cases() {
        let auto = cat_map();
        let x = TorusPoint::from_f64(0.25, 0.75, Lattice::UNIT);
        assert_eq!(auto.stable_point(&x, 0.0).unwrap(), x);
        assert!(matches!(
            auto.stable_point(&x, 0.3),
            Err(TorusError::LeafRadiusExceeded { .. })
        ));
    }

    #[test]
    fn contraction_law_over_iterates() {
        let auto = cat_map();
        let x = TorusPoint::from_f64(0.2, 0.4, Lattice::UNIT);
        let t = 0.05;
        let y = auto.stable_point(&x, t).unwrap();
        let nu = auto.contraction_rate();
        let mut fx = x;
        let mut fy = y;
        for n in 0..12 {
            let expected = t * nu.powi(n);
            let actual = torus_dist(&fx, &fy);
            assert!(
                (actual - expected).abs() < 1e-10 * expected.max(1e-30),
                "n={n}: {actual} vs {expected}"
            );
            fx = auto.step(&fx);
            fy = auto.step(&fy);
        }
    }

    #[test]
    fn su_path_solves_linear_system() {
        let auto = cat_map();
        let x = TorusPoint::origin(Lattice::UNIT);
        let y = TorusPoint::from_f64(0.01, 0.02, Lattice::UNIT);
        let legs = auto.su_path(&x, &y).unwrap();
        assert_eq!(legs.len(), 2);
        assert_eq!(legs[0].end, legs[1].start);
        assert_eq!(legs[1].end, y);

        // Oracle: direct 2×2 solve in the eigenbasis.
        let vs = auto.stable_direction();
        let vu = auto.unstable_direction();
        let det = vs[0] * vu[1] - vs[1] * vu[0];
        let s = (0.01 * vu[1] - 0.02 * vu[0]) / det;
        let u = (0.02 * vs[0] - 0.01 * vs[1]) / det;
        assert!((legs[0].length - s).abs() < 1e-12);
        assert!((legs[1].length - u).abs() < 1e-12);

        // Endpoint reconstruction residual.
        let rebuilt = x.translate_f64(s * vs[0] + u * vu[0], s * vs[1] + u * vu[1]);
        assert!(torus_dist(&rebuilt, &y) < 1e-12);

        // Leg lengths bounded by the eigenbasis condition number.
        let bound = auto.eigenbasis_condition() * torus_dist(&x, &y);
        assert!(s.abs() <= bound && u.abs() <= bound);
    }

    #[test]
    fn su_path_degenerate_and_far() {
        let auto = cat_map();
        let x = TorusPoint::from_f64(0.3, 0.3, Lattice::UNIT);
        let legs = auto.su_path(&x, &x).unwrap();
        assert_eq!(legs[0].length, 0.0);
        assert_eq!(legs[1].length, 0.0);
        let far = TorusPoint::from_f64(0.8, 0.8, Lattice::UNIT);
        assert!(matches!(
            auto.su_path(&x, &far),
            Err(TorusError::OutsideProductChart { .. })
        ));
    }

    #[test]
    fn periodic_point_counts_match_determinant() {
        let auto = cat_map();
        // |det(Mⁿ - Id)| = |2 - trace(Mⁿ)| for det 1; oracle via exact powers.
        for n in 1..=6u32 {
            let pow = matrix_pow_exact(&auto.matrix(), n).unwrap();
            let expected = (2 - (pow[0][0] + pow[1][1])).unsigned_abs();
            let points = auto.periodic_points(n).unwrap();
            assert_eq!(points.len() as u128, expected, "period {n}");
            for p in &points {
                assert_eq!(auto.apply(p, n as i64).unwrap(), *p);
            }
        }
    }

    #[test]
    fn periodic_points_small_cases() {
        let auto = cat_map();
        let fixed = auto.periodic_points(1).unwrap();
        assert_eq!(fixed, vec![TorusPoint::origin(Lattice::UNIT)]);
        assert_eq!(auto.periodic_points(2).unwrap().len(), 5);
        assert!(matches!(
            auto.periodic_points_capped(6, 10),
            Err(TorusError::TooManyPeriodicPoints { .. })
        ));
    }

    #[test]
    fn example_matrix_has_64_fixed_points() {
        let fixed = example_matrix().periodic_points(1).unwrap();
        assert_eq!(fixed.len(), 64);
        // M ≡ Id mod 8 makes the whole (1/8)-grid fixed.
        let eighth =
            TorusPoint::from_rationals(Rational::new(3, 8), Rational::new(5, 8), Lattice::UNIT);
        assert!(fixed.contains(&eighth));
    }

    #[test]
    fn cover_lift_semiconjugacy() {
        let auto = example_matrix();
        for periods in [[2, 1], [4, 1]] {
            let (lifted, proj) = auto.cover_lift(periods).unwrap();
            for i in 0..10 {
                for j in 0..10 {
                    let x = TorusPoint::from_rationals(
                        Rational::new(i * periods[0] as i128, 10),
                        Rational::new(j, 10),
                        lifted.lattice(),
                    );
                    let lhs = proj.project(&lifted.step(&x));
                    let rhs = auto.step(&proj.project(&x));
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn cover_lift_rejects_incompatible_lattice() {
        let auto = cat_map();
        assert!(matches!(
            auto.cover_lift([4, 1]),
            Err(TorusError::LatticeNotInvariant(_))
        ));
        assert!(matches!(
            auto.cover_lift([0, 1]),
            Err(TorusError::NotACover(_))
        ));
    }

    #[test]
    fn float_decode_round_trips() {
        for x in [0.0, 0.5, 0.1, 1.0 / 3.0, 0.9999999, 1e-12, 3.999999] {
            let r = f64_to_rational(x);
            assert_eq!(ratio_to_f64(r), x, "decode {x}");
        }
    }

    #[test]
    fn reduction_is_idempotent() {
        let lattice = Lattice::new(4, 1).unwrap();
        let x = TorusPoint::from_f64(5.25, -0.75, lattice);
        assert_eq!(x.coords_f64(), [1.25, 0.25]);
        let again = TorusPoint::from_rationals(x.coords()[0], x.coords()[1], lattice);
        assert_eq!(again, x);
    }

    #[test]
    fn torus_dist_wraps_around() {
        let a = TorusPoint::from_f64(0.05, 0.0, Lattice::UNIT);
        let b = TorusPoint::from_f64(0.95, 0.0, Lattice::UNIT);
        assert!((torus_dist(&a, &b) - 0.1).abs() < 1e-15);
    }
}
