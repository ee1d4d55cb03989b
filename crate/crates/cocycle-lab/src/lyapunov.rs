//! Lyapunov exponents from orbit products and from periodic data.
//!
//! Top/bottom exponents come from the renormalized forward product and the
//! parallel inverse product (`(1/n)·log‖Fⁿ‖`, `−(1/n)·log‖(Fⁿ)⁻¹‖`); the
//! full spectrum uses QR propagation. Periodic exponents are eigenvalue
//! log-moduli of exact return products, which separates exact zero gaps from
//! Birkhoff noise.

use crate::cocycle::{CocycleError, CocycleSpec};
use crate::torus::TorusPoint;
use nalgebra::DMatrix;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("point is not periodic with period {0}")]
    NotPeriodic(u32),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error(transparent)]
    Torus(#[from] crate::torus::TorusError),
}

/// Sampled partial estimates along an orbit.
#[derive(Debug, Clone)]
pub struct SpectrumSample {
    pub n: i64,
    /// Descending exponent estimates at this orbit length.
    pub exponents: Vec<f64>,
}

/// Result of an orbit-based spectrum estimate.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    /// Descending.
    pub exponents: Vec<f64>,
    pub orbit_length: i64,
    pub x0: TorusPoint,
    pub convergence_history: Vec<SpectrumSample>,
    /// `(1/n)·log|det Fⁿ_x|`, accumulated exactly; equals the exponent sum up
    /// to rounding.
    pub log_det_rate: f64,
}

/// `((1/n)·log‖Fⁿ_x‖, −(1/n)·log‖(Fⁿ_x)⁻¹‖)`.
pub fn top_bottom_exponents(
    c: &CocycleSpec,
    x: &TorusPoint,
    n: i64,
) -> Result<(f64, f64), LyapunovError> {
    assert!(n >= 1);
    let it = c.iterate(x, n)?;
    Ok((it.log_norm / n as f64, it.log_conorm / n as f64))
}

/// Single-pass top/bottom estimates checkpointed at log-spaced orbit lengths;
/// each row is `(n, λ₊, λ₋)`.
pub fn top_bottom_history(
    c: &CocycleSpec,
    x: &TorusPoint,
    n: i64,
    samples: usize,
) -> Result<Vec<(i64, f64, f64)>, LyapunovError> {
    assert!(n >= 1);
    let checkpoints = log_spaced(n, samples);
    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut tracker = crate::cocycle::ProductTracker::forward(c, x);
    for &target in &checkpoints {
        tracker.advance((target - tracker.steps()) as u64)?;
        rows.push((
            target,
            tracker.log_norm() / target as f64,
            tracker.log_conorm() / target as f64,
        ));
    }
    Ok(rows)
}

/// QR-propagated full Oseledets spectrum with sampled history.
pub fn full_spectrum(
    c: &CocycleSpec,
    x: &TorusPoint,
    n: i64,
) -> Result<SpectrumEstimate, LyapunovError> {
    let d = c.fiber_dim();
    assert!(n >= d as i64, "orbit shorter than the fiber dimension");
    let checkpoints: HashSet<i64> = log_spaced(n, 32).into_iter().collect();
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut diag_logs = vec![0.0f64; d];
    let mut log_det = 0.0f64;
    let mut history = Vec::new();
    let mut point = x.clone();
    for i in 1..=n {
        let f = c.eval(&point);
        log_det += f.determinant().abs().ln();
        let qr = (f * &q).qr();
        let r = qr.r();
        for (j, log) in diag_logs.iter_mut().enumerate() {
            *log += r[(j, j)].abs().ln();
        }
        q = qr.q();
        point = c.base().step(&point);
        if checkpoints.contains(&i) {
            let mut exps: Vec<f64> = diag_logs.iter().map(|l| l / i as f64).collect();
            exps.sort_by(|a, b| b.partial_cmp(a).unwrap());
            history.push(SpectrumSample {
                n: i,
                exponents: exps,
            });
        }
    }
    let mut exponents: Vec<f64> = diag_logs.iter().map(|l| l / n as f64).collect();
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(SpectrumEstimate {
        exponents,
        orbit_length: n,
        x0: x.clone(),
        convergence_history: history,
        log_det_rate: log_det / n as f64,
    })
}

/// Log-moduli of the eigenvalues of the exact return product `Fⁿ_p`, divided
/// by the period; descending. The point must be exactly periodic.
pub fn periodic_exponents(
    c: &CocycleSpec,
    p: &TorusPoint,
    period: u32,
) -> Result<Vec<f64>, LyapunovError> {
    let back = c.base().apply(p, period as i64)?;
    if back != *p {
        return Err(LyapunovError::NotPeriodic(period));
    }
    let it = c.iterate(p, period as i64)?;
    // Moduli of the true product = exp(log_scale) · moduli of the
    // renormalized representative.
    let eigs = it.matrix.complex_eigenvalues();
    let mut exps: Vec<f64> = eigs
        .iter()
        .map(|z| (z.norm().ln() + it.log_scale) / period as f64)
        .collect();
    exps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(exps)
}

/// Outcome of scanning all periodic points up to a period bound.
#[derive(Debug, Clone)]
pub struct OneExponentReport {
    pub pass: bool,
    /// Largest top-minus-bottom exponent gap seen.
    pub gap: f64,
    pub worst_point: Option<TorusPoint>,
    pub worst_period: u32,
    pub points_checked: usize,
    pub tolerance: f64,
}

/// Checks `λ₊(μ_p) = λ₋(μ_p)` over every periodic orbit up to `max_period`.
pub fn one_exponent_test(
    c: &CocycleSpec,
    max_period: u32,
    tol: f64,
) -> Result<OneExponentReport, LyapunovError> {
    let mut seen: HashSet<TorusPoint> = HashSet::new();
    let mut report = OneExponentReport {
        pass: true,
        gap: 0.0,
        worst_point: None,
        worst_period: 0,
        points_checked: 0,
        tolerance: tol,
    };
    for period in 1..=max_period {
        for p in c.base().periodic_points(period)? {
            if !seen.insert(p.clone()) {
                continue;
            }
            let exps = periodic_exponents(c, &p, period)?;
            let gap = exps.first().unwrap() - exps.last().unwrap();
            report.points_checked += 1;
            if gap > report.gap {
                report.gap = gap;
                report.worst_point = Some(p);
                report.worst_period = period;
            }
        }
    }
    report.pass = report.gap <= tol;
    Ok(report)
}

fn log_spaced(n: i64, samples: usize) -> Vec<i64> {
    let samples = samples.max(1);
    let mut points: Vec<i64> = (0..samples)
        .map(|j| {
            let frac = (j + 1) as f64 / samples as f64;
            ((n as f64).powf(frac)).round() as i64
        })
        .filter(|&v| v >= 1)
        .collect();
    points.push(n);
    points.sort_unstable();
    points.dedup();
    points
}
