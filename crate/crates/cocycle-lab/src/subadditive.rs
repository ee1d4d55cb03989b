//! Empirical subadditive-sequence machinery: Birkhoff averages, the search
//! for a uniformly negative level `a_N < 0` on a grid, and growth
//! certificates for the quasiconformal distortion.
//!
//! The module certifies on finite grids only; a NotFound outcome is
//! inconclusive rather than a refutation: the underlying statements
//! quantify over all invariant measures, which no grid sweep can decide.

use crate::cocycle::{CocycleError, CocycleSpec, ProductTracker};
use crate::torus::{ToralAutomorphism, TorusPoint};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SubadditiveError {
    #[error("no level with a uniformly negative maximum up to N = {n_max} (max at the cap: {worst:.6e})")]
    NotFound { n_max: usize, worst: f64 },
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
}

type PointFn<'a> = Box<dyn Fn(&TorusPoint) -> f64 + Sync + 'a>;
type LevelFn<'a> = Box<dyn Fn(&TorusPoint, usize) -> f64 + Sync + 'a>;

/// A subadditive family `a_n(x)` the laboratory can profile along orbits.
pub enum SubadditiveFamily<'a> {
    /// `a_n(x) = log‖Fⁿ_x‖ + drift·n`.
    LogNorm {
        cocycle: &'a CocycleSpec,
        drift: f64,
    },
    /// `a_n(x) = log K_F(x,n) + drift·n` (subadditive by the distortion
    /// submultiplicativity).
    LogDistortion {
        cocycle: &'a CocycleSpec,
        drift: f64,
    },
    /// Birkhoff sums `a_n(x) = Σ_{i<n} φ(fⁱx)` (additive, hence subadditive).
    BirkhoffSum {
        base: &'a ToralAutomorphism,
        phi: PointFn<'a>,
    },
    /// Arbitrary evaluator, for tests and ad-hoc experiments.
    Custom {
        base: &'a ToralAutomorphism,
        eval: LevelFn<'a>,
    },
}

impl<'a> SubadditiveFamily<'a> {
    pub fn base(&self) -> &ToralAutomorphism {
        match self {
            SubadditiveFamily::LogNorm { cocycle, .. } => cocycle.base(),
            SubadditiveFamily::LogDistortion { cocycle, .. } => cocycle.base(),
            SubadditiveFamily::BirkhoffSum { base, .. } => base,
            SubadditiveFamily::Custom { base, .. } => base,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            SubadditiveFamily::LogNorm { .. } => "log-norm",
            SubadditiveFamily::LogDistortion { .. } => "log-distortion",
            SubadditiveFamily::BirkhoffSum { .. } => "birkhoff-sum",
            SubadditiveFamily::Custom { .. } => "custom",
        }
    }

    /// `a_1(x), …, a_n(x)` in one orbit pass.
    pub fn profile(&self, x: &TorusPoint, n: usize) -> Result<Vec<f64>, SubadditiveError> {
        let mut out = Vec::with_capacity(n);
        match self {
            SubadditiveFamily::LogNorm { cocycle, drift } => {
                let mut tracker = ProductTracker::forward(cocycle, x);
                for k in 1..=n {
                    tracker.advance(1)?;
                    out.push(tracker.log_norm() + drift * k as f64);
                }
            }
            SubadditiveFamily::LogDistortion { cocycle, drift } => {
                let mut tracker = ProductTracker::forward(cocycle, x);
                for k in 1..=n {
                    tracker.advance(1)?;
                    out.push(tracker.log_distortion() + drift * k as f64);
                }
            }
            SubadditiveFamily::BirkhoffSum { base, phi } => {
                let mut point = x.clone();
                let mut sum = 0.0;
                for _ in 1..=n {
                    sum += phi(&point);
                    point = base.step(&point);
                    out.push(sum);
                }
            }
            SubadditiveFamily::Custom { eval, .. } => {
                for k in 1..=n {
                    out.push(eval(x, k));
                }
            }
        }
        Ok(out)
    }

    pub fn value(&self, x: &TorusPoint, n: usize) -> Result<f64, SubadditiveError> {
        Ok(*self.profile(x, n)?.last().expect("n >= 1"))
    }

    /// Largest violation of `a_{n+k}(x) ≤ a_k(x) + a_n(fᵏx)` over sampled
    /// pairs (negative values mean slack).
    pub fn subadditivity_defect(
        &self,
        samples: &[(TorusPoint, usize, usize)],
    ) -> Result<f64, SubadditiveError> {
        let mut worst = f64::NEG_INFINITY;
        for (x, n, k) in samples {
            let whole = self.value(x, n + k)?;
            let first = self.value(x, *k)?;
            let mut shifted = x.clone();
            for _ in 0..*k {
                shifted = self.base().step(&shifted);
            }
            let second = self.value(&shifted, *n)?;
            worst = worst.max(whole - first - second);
        }
        Ok(worst)
    }
}

/// `(1/n) Σ_{i<n} φ(fⁱx)`.
pub fn birkhoff_average(
    base: &ToralAutomorphism,
    phi: impl Fn(&TorusPoint) -> f64,
    x: &TorusPoint,
    n: usize,
) -> f64 {
    assert!(n >= 1);
    let mut point = x.clone();
    let mut sum = 0.0;
    for _ in 0..n {
        sum += phi(&point);
        point = base.step(&point);
    }
    sum / n as f64
}

/// `max_x a_n(x)` over the grid for each `n = 1..=n_max` (parallel over grid
/// points, deterministic reduction order).
pub fn negativity_profile(
    fam: &SubadditiveFamily,
    grid: &[TorusPoint],
    n_max: usize,
) -> Result<Vec<f64>, SubadditiveError> {
    assert!(!grid.is_empty(), "empty grid");
    let profiles: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|x| fam.profile(x, n_max))
        .collect::<Result<_, _>>()?;
    let mut max_by_n = vec![f64::NEG_INFINITY; n_max];
    for profile in &profiles {
        for (slot, v) in max_by_n.iter_mut().zip(profile) {
            *slot = slot.max(*v);
        }
    }
    Ok(max_by_n)
}

/// Smallest `N ≤ n_max` with `max_x a_N(x) < 0`, together with the profile
/// for diagnosis.
pub fn find_negative_level(
    fam: &SubadditiveFamily,
    grid: &[TorusPoint],
    n_max: usize,
) -> Result<(usize, Vec<f64>), SubadditiveError> {
    let profile = negativity_profile(fam, grid, n_max)?;
    match profile.iter().position(|v| *v < 0.0) {
        Some(idx) => Ok((idx + 1, profile)),
        None => Err(SubadditiveError::NotFound {
            n_max,
            worst: *profile.last().unwrap(),
        }),
    }
}

/// Growth certificate for `K_F(x,n) ≤ C·e^{(ξ+ε)|n|}`.
#[derive(Debug, Clone)]
pub struct GrowthCertificate {
    /// `max K(x,n)·e^{−(ξ+ε)|n|}` over the grid and `|n| ≤ n_max`.
    pub c_eps: f64,
    /// Running maximum stabilized: the second half of the sweep raised it by
    /// less than 1%.
    pub pass: bool,
    /// Fitted slope of `log max_x K(x,n)` over the second half of the sweep;
    /// compares against ξ+ε when the certificate fails.
    pub measured_rate: f64,
    /// Rows `(n, log max_x K(x,n))` for both signs of n merged by |n|.
    pub profile: Vec<(usize, f64)>,
}

/// Measures `C_ε = sup K·e^{−(ξ+ε)|n|}` on a grid. Failure to stabilize is
/// how exponential distortion growth faster than ξ shows up.
pub fn distortion_growth_certificate(
    c: &CocycleSpec,
    xi: f64,
    eps: f64,
    grid: &[TorusPoint],
    n_max: usize,
) -> Result<GrowthCertificate, SubadditiveError> {
    assert!(!grid.is_empty() && n_max >= 4);
    let rate = xi + eps;
    // log K profiles in both time directions, maxed over the grid.
    let profiles: Vec<(Vec<f64>, Vec<f64>)> = grid
        .par_iter()
        .map(|x| -> Result<(Vec<f64>, Vec<f64>), SubadditiveError> {
            let mut fwd = ProductTracker::forward(c, x);
            let mut bwd = ProductTracker::backward(c, x);
            let mut f = Vec::with_capacity(n_max);
            let mut b = Vec::with_capacity(n_max);
            for _ in 1..=n_max {
                fwd.advance(1)?;
                bwd.advance(1)?;
                f.push(fwd.log_distortion());
                b.push(bwd.log_distortion());
            }
            Ok((f, b))
        })
        .collect::<Result<_, _>>()?;
    let mut log_k_max = vec![f64::NEG_INFINITY; n_max];
    for (f, b) in &profiles {
        for n in 0..n_max {
            log_k_max[n] = log_k_max[n].max(f[n]).max(b[n]);
        }
    }
    // C_ε includes n = 0 where K = 1.
    let mut c_eps: f64 = 1.0;
    let mut c_half: f64 = 1.0;
    for (idx, log_k) in log_k_max.iter().enumerate() {
        let n = idx + 1;
        let value = (log_k - rate * n as f64).exp();
        c_eps = c_eps.max(value);
        if n <= n_max / 2 {
            c_half = c_half.max(value);
        }
    }
    let pass = c_eps <= c_half * 1.01;
    let half = n_max / 2;
    let pts: Vec<f64> = log_k_max[half..].to_vec();
    let measured_rate = slope(half + 1, &pts);
    let profile = log_k_max
        .iter()
        .enumerate()
        .map(|(idx, v)| (idx + 1, *v))
        .collect();
    Ok(GrowthCertificate {
        c_eps,
        pass,
        measured_rate,
        profile,
    })
}

fn slope(n0: usize, values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let sx: f64 = (0..values.len()).map(|i| (n0 + i) as f64).sum();
    let sy: f64 = values.iter().sum();
    let sxx: f64 = (0..values.len()).map(|i| ((n0 + i) as f64).powi(2)).sum();
    let sxy: f64 = values
        .iter()
        .enumerate()
        .map(|(i, y)| (n0 + i) as f64 * y)
        .sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{example46_family, uniform_grid, CocycleKind};
    use crate::expr::Expr;
    use crate::torus::Lattice;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cat_map() -> ToralAutomorphism {
        ToralAutomorphism::new([[2, 1], [1, 1]], Lattice::UNIT).unwrap()
    }

    #[test]
    fn birkhoff_average_basics() {
        let base = cat_map();
        let x = TorusPoint::from_f64(0.387, 0.502, Lattice::UNIT);
        let avg = birkhoff_average(&base, |_| 2.5, &x, 100);
        assert_eq!(avg, 2.5);
        let first = birkhoff_average(&base, |p| p.coords_f64()[0], &x, 1);
        assert_eq!(first, 0.387);
    }

    #[test]
    fn birkhoff_average_equidistributes() {
        // ∫ cos(2πx₁) dμ = 0 for Haar measure.
        let base = cat_map();
        let x = TorusPoint::from_f64(0.5698402909, 0.1234567891, Lattice::UNIT);
        let avg = birkhoff_average(
            &base,
            |p| (2.0 * std::f64::consts::PI * p.coords_f64()[0]).cos(),
            &x,
            200_000,
        );
        assert!(avg.abs() < 5e-3, "average {avg}");
    }

    #[test]
    fn trivially_negative_family_finds_level_one() {
        let base = cat_map();
        let fam = SubadditiveFamily::Custom {
            base: &base,
            eval: Box::new(|_, n| -(n as f64)),
        };
        let grid = uniform_grid(Lattice::UNIT, 4, 4);
        let (level, profile) = find_negative_level(&fam, &grid, 10).unwrap();
        assert_eq!(level, 1);
        assert_eq!(profile[0], -1.0);
    }

    #[test]
    fn contracting_cocycle_norm_is_negative_at_level_one() {
        let c = CocycleSpec::new(
            cat_map(),
            CocycleKind::Constant {
                matrix: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0 / 3.0]),
            },
            1.0,
        )
        .unwrap();
        let fam = SubadditiveFamily::LogNorm {
            cocycle: &c,
            drift: 0.0,
        };
        let grid = uniform_grid(Lattice::UNIT, 8, 8);
        let (level, profile) = find_negative_level(&fam, &grid, 16).unwrap();
        assert_eq!(level, 1);
        assert!((profile[0] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn conformal_distortion_with_drift_is_negative_immediately() {
        let c = CocycleSpec::new(
            cat_map(),
            CocycleKind::Conformal {
                scale: Expr::parse("1 + 0.2*cos(2*pi*x1)").unwrap(),
                angle: Expr::parse("2*pi*x2").unwrap(),
                sources: vec![],
            },
            1.0,
        )
        .unwrap();
        let fam = SubadditiveFamily::LogDistortion {
            cocycle: &c,
            drift: -0.01,
        };
        let grid = uniform_grid(Lattice::UNIT, 6, 6);
        let (level, _) = find_negative_level(&fam, &grid, 8).unwrap();
        assert_eq!(level, 1);
    }

    #[test]
    fn positive_family_reports_not_found() {
        let base = cat_map();
        let fam = SubadditiveFamily::Custom {
            base: &base,
            eval: Box::new(|_, n| 1.0 + n as f64 * 0.0),
        };
        let grid = uniform_grid(Lattice::UNIT, 2, 2);
        assert!(matches!(
            find_negative_level(&fam, &grid, 5),
            Err(SubadditiveError::NotFound { n_max: 5, .. })
        ));
    }

    #[test]
    fn grid_refinement_never_lowers_the_level() {
        let fam_cocycle = example46_family([[41, 32], [32, 25]], 0.1).unwrap();
        let fam = SubadditiveFamily::LogDistortion {
            cocycle: &fam_cocycle.plane,
            drift: -0.3,
        };
        let coarse = uniform_grid(Lattice::UNIT, 4, 4);
        let mut fine = uniform_grid(Lattice::UNIT, 8, 8);
        fine.extend(coarse.iter().cloned());
        let (level_coarse, _) = find_negative_level(&fam, &coarse, 32).unwrap();
        let (level_fine, _) = find_negative_level(&fam, &fine, 32).unwrap();
        assert!(level_fine >= level_coarse);
    }

    #[test]
    fn subadditivity_spot_checks() {
        let fam_cocycle = example46_family([[41, 32], [32, 25]], 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples: Vec<(TorusPoint, usize, usize)> = (0..20)
            .map(|_| {
                (
                    TorusPoint::from_f64(
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                        Lattice::UNIT,
                    ),
                    rng.gen_range(1..12),
                    rng.gen_range(1..12),
                )
            })
            .collect();
        let norm_fam = SubadditiveFamily::LogNorm {
            cocycle: &fam_cocycle.plane,
            drift: 0.0,
        };
        assert!(norm_fam.subadditivity_defect(&samples).unwrap() < 1e-9);
        let k_fam = SubadditiveFamily::LogDistortion {
            cocycle: &fam_cocycle.plane,
            drift: -0.37,
        };
        assert!(k_fam.subadditivity_defect(&samples).unwrap() < 1e-9);
    }

    #[test]
    fn conformal_certificate_is_exactly_one() {
        let c = CocycleSpec::new(
            cat_map(),
            CocycleKind::Conformal {
                scale: Expr::parse("1 + 0.3*cos(2*pi*x2)").unwrap(),
                angle: Expr::parse("2*pi*x1").unwrap(),
                sources: vec![],
            },
            1.0,
        )
        .unwrap();
        let grid = uniform_grid(Lattice::UNIT, 5, 5);
        let cert = distortion_growth_certificate(&c, 0.0, 0.05, &grid, 64).unwrap();
        assert!(cert.pass);
        assert!((cert.c_eps - 1.0).abs() < 1e-9, "C = {}", cert.c_eps);
    }

    #[test]
    fn unipotent_certificate_passes_with_calculus_oracle() {
        // K(n) = σ_max([[1,n],[0,1]])², so C_ε = max_n K(n)e^{−εn}; the
        // oracle evaluates that expression directly over the swept range.
        let c = CocycleSpec::new(
            cat_map(),
            CocycleKind::Constant {
                matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            },
            1.0,
        )
        .unwrap();
        let grid = uniform_grid(Lattice::UNIT, 3, 3);
        let eps = 0.05;
        let n_max = 512;
        let cert = distortion_growth_certificate(&c, 0.0, eps, &grid, n_max).unwrap();
        assert!(cert.pass);
        let oracle = (0..=n_max)
            .map(|n| {
                let n = n as f64;
                let smax_sq = (2.0 + n * n + n * (n * n + 4.0).sqrt()) / 2.0;
                smax_sq * (-eps * n).exp()
            })
            .fold(0.0f64, f64::max);
        assert!(
            (cert.c_eps - oracle).abs() < 1e-6 * oracle,
            "{} vs {oracle}",
            cert.c_eps
        );
    }

    #[test]
    fn example_family_fails_certificate_at_the_fixed_point() {
        let fam = example46_family([[41, 32], [32, 25]], 0.1).unwrap();
        let mut grid = vec![TorusPoint::origin(Lattice::UNIT)];
        grid.push(TorusPoint::from_f64(0.29, 0.71, Lattice::UNIT));
        let cert = distortion_growth_certificate(&fam.plane, 0.0, 0.05, &grid, 256).unwrap();
        assert!(!cert.pass);
        let expected_rate = (11.0f64 / 9.0).ln();
        assert!(
            (cert.measured_rate - expected_rate).abs() < 1e-3,
            "rate {} vs {expected_rate}",
            cert.measured_rate
        );
    }

    #[test]
    fn larger_epsilon_never_raises_the_constant() {
        let fam = example46_family([[41, 32], [32, 25]], 0.2).unwrap();
        let grid = uniform_grid(Lattice::UNIT, 4, 4);
        let lo = distortion_growth_certificate(&fam.plane, 0.0, 0.1, &grid, 64).unwrap();
        let hi = distortion_growth_certificate(&fam.plane, 0.0, 0.2, &grid, 64).unwrap();
        assert!(hi.c_eps <= lo.c_eps + 1e-12);
    }
}
